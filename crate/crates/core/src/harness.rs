//! Hierarchical episodes, evaluation, and the per-seed train/evaluate pipeline
//! behind the ablation table.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::env::{ultimate_goal_achieved, Instruction};
use crate::inventory::Inventory;
use crate::policy::{
    EmployeePolicy, Explore, FixedSequenceManager, LearnedEmployee, LearnedManager, ManagerCtx,
    ManagerPolicy, PolicyParams, Weights,
};
use crate::rng::{substream, SimRng};
use crate::subgoal::{
    build_phi, decompose_hand, History, ItemRemap, SegmentHead, Subgoal, SubgoalMode,
};
use crate::tasks::{
    build_recipe_universe, generate_dataset, Dataset, DatasetConfig, RecipeUniverse, TaskError,
    TrajectoryRecord, UniverseConfig,
};
use crate::training::{
    finetune_employee, finetune_manager, pretrain_employee, pretrain_manager, LogRow, TrainConfig,
    TrainError,
};
use crate::world::{run_employee, EmployeeLimits, TraceStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Budgets of one hierarchical episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeLimits {
    pub manager_budget: u32,
    pub subgoal_steps: u32,
    pub primitive_budget: u32,
    pub retry: bool,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        EpisodeLimits {
            manager_budget: 10,
            subgoal_steps: 8,
            primitive_budget: crate::env::DEFAULT_STEP_BUDGET,
            retry: true,
        }
    }
}

impl EpisodeLimits {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        EpisodeLimits {
            manager_budget: cfg.manager_budget,
            subgoal_steps: cfg.rollout_len,
            primitive_budget: cfg.primitive_budget,
            retry: cfg.retry,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub success: bool,
    /// Each proposal and whether the employee reached it.
    pub subgoals: Vec<(Subgoal, bool)>,
    pub primitives: u32,
    pub trace: Vec<TraceStep>,
    pub final_state: Inventory,
}

/// Runs manager and employee against the true environment from an empty
/// inventory. Success means the goal item was obtained.
pub fn run_hierarchical_episode(
    instruction: &Instruction,
    manager: &dyn ManagerPolicy,
    employee: &dyn EmployeePolicy,
    limits: EpisodeLimits,
    explore: Explore,
    rng: &mut SimRng,
) -> EpisodeRecord {
    run_episode_from(
        Inventory::new(),
        instruction,
        manager,
        employee,
        limits,
        explore,
        rng,
    )
}

/// As [`run_hierarchical_episode`], starting from `start`.
pub fn run_episode_from(
    start: Inventory,
    instruction: &Instruction,
    manager: &dyn ManagerPolicy,
    employee: &dyn EmployeePolicy,
    limits: EpisodeLimits,
    explore: Explore,
    rng: &mut SimRng,
) -> EpisodeRecord {
    let mut s = start;
    let mut hist = History::default();
    let mut mhist = History::default();
    let mut rec = EpisodeRecord {
        success: false,
        subgoals: Vec::new(),
        primitives: 0,
        trace: Vec::new(),
        final_state: Inventory::new(),
    };
    for k in 0..limits.manager_budget as usize {
        if ultimate_goal_achieved(&s, instruction.goal())
            || rec.primitives >= limits.primitive_budget
        {
            break;
        }
        let ctx = ManagerCtx {
            state: &s,
            history: &mhist,
            instruction,
            proposals: k,
        };
        let Some(g) = manager.propose(&ctx, explore, rng) else {
            break;
        };
        let elimits = EmployeeLimits {
            step_limit: limits.subgoal_steps,
            primitive_budget: limits.primitive_budget - rec.primitives,
            retry: limits.retry,
        };
        let run = run_employee(&s, &hist, &g, instruction, employee, elimits, explore, rng);
        rec.primitives += run.primitives;
        rec.trace.extend(run.trace);
        rec.subgoals.push((g, run.achieved));
        mhist = [s, mhist[0].clone()];
        s = run.final_state;
        hist = run.history;
    }
    rec.success = ultimate_goal_achieved(&s, instruction.goal());
    rec.final_state = s;
    rec
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub success_rate: f64,
    /// Fraction of proposals the employee reached.
    pub subgoal_success: f64,
    pub mean_primitives: f64,
    pub mean_proposals: f64,
}

fn summarize(records: &[EpisodeRecord]) -> EvalMetrics {
    let n = records.len();
    if n == 0 {
        return EvalMetrics::default();
    }
    let proposals: usize = records.iter().map(|r| r.subgoals.len()).sum();
    let reached: usize = records
        .iter()
        .map(|r| r.subgoals.iter().filter(|(_, ok)| *ok).count())
        .sum();
    EvalMetrics {
        episodes: n,
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n as f64,
        subgoal_success: if proposals == 0 {
            0.0
        } else {
            reached as f64 / proposals as f64
        },
        mean_primitives: records.iter().map(|r| r.primitives as f64).sum::<f64>() / n as f64,
        mean_proposals: proposals as f64 / n as f64,
    }
}

/// Greedy evaluation on each task, with a reproducible stream per episode.
pub fn evaluate(
    tasks: &[Instruction],
    manager: &dyn ManagerPolicy,
    employee: &dyn EmployeePolicy,
    limits: EpisodeLimits,
    seed: u64,
) -> EvalMetrics {
    let records: Vec<EpisodeRecord> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = substream(seed, 100, i as u64);
            run_hierarchical_episode(t, manager, employee, limits, Explore::Greedy, &mut rng)
        })
        .collect();
    summarize(&records)
}

/// Fraction of segment starts from which the employee reaches its subgoal.
pub fn evaluate_employee(
    heads: &[SegmentHead],
    employee: &dyn EmployeePolicy,
    limits: EpisodeLimits,
    seed: u64,
) -> f64 {
    if heads.is_empty() {
        return 0.0;
    }
    let elimits = EmployeeLimits {
        step_limit: limits.subgoal_steps,
        primitive_budget: limits.primitive_budget,
        retry: limits.retry,
    };
    let hits = heads
        .iter()
        .enumerate()
        .filter(|(i, h)| {
            let mut rng = substream(seed, 101, *i as u64);
            run_employee(
                &h.state,
                &h.history,
                &h.subgoal,
                &h.instruction,
                employee,
                elimits,
                Explore::Greedy,
                &mut rng,
            )
            .achieved
        })
        .count();
    hits as f64 / heads.len() as f64
}

/// Feeds each test task its own hand decomposition in order, ignoring progress.
pub fn evaluate_fixed_sequence(
    records: &[TrajectoryRecord],
    employee: &dyn EmployeePolicy,
    limits: EpisodeLimits,
    seed: u64,
) -> EvalMetrics {
    let episodes: Vec<EpisodeRecord> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let sequence = decompose_hand(r).unwrap_or_else(|_| vec![Subgoal::single(r.goal(), 1)]);
            let mgr = FixedSequenceManager { sequence };
            let mut rng = substream(seed, 100, i as u64);
            run_hierarchical_episode(
                &r.instruction,
                &mgr,
                employee,
                limits,
                Explore::Greedy,
                &mut rng,
            )
        })
        .collect();
    summarize(&episodes)
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineConfig {
    pub universe: UniverseConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct SeedData {
    pub universe: RecipeUniverse,
    pub dataset: Dataset,
}

pub fn prepare_seed(cfg: &PipelineConfig, seed: u64) -> Result<SeedData, HarnessError> {
    let universe = build_recipe_universe(&cfg.universe, seed)?;
    let dataset = generate_dataset(&universe, &cfg.dataset, seed)?;
    Ok(SeedData { universe, dataset })
}

/// Both agents of one variant, before and after fine-tuning.
#[derive(Debug, Clone)]
pub struct TrainedAgents {
    pub mode: SubgoalMode,
    pub employee_pretrained: PolicyParams,
    pub manager_pretrained: PolicyParams,
    pub employee: PolicyParams,
    pub manager: PolicyParams,
    pub employee_snapshots: Vec<(usize, PolicyParams)>,
    pub log: Vec<LogRow>,
    pub records_kept: usize,
    pub records_dropped: usize,
    /// Demonstrated choices missing from the candidate sets.
    pub employee_bc_dropped: usize,
    pub manager_bc_dropped: usize,
    pub limits: EpisodeLimits,
}

impl TrainedAgents {
    pub fn employee(&self, finetuned: bool) -> LearnedEmployee<'_> {
        LearnedEmployee {
            params: if finetuned {
                &self.employee
            } else {
                &self.employee_pretrained
            },
            weights: Weights::Shadow,
        }
    }

    pub fn manager(&self, finetuned: bool) -> LearnedManager<'_> {
        LearnedManager {
            params: if finetuned {
                &self.manager
            } else {
                &self.manager_pretrained
            },
            weights: Weights::Shadow,
            mode: &self.mode,
        }
    }

    pub fn evaluate(&self, tasks: &[Instruction], finetuned: bool, seed: u64) -> EvalMetrics {
        evaluate(
            tasks,
            &self.manager(finetuned),
            &self.employee(finetuned),
            self.limits,
            seed,
        )
    }
}

fn or_keep(
    r: Result<crate::training::PretrainOutcome, TrainError>,
    init: PolicyParams,
) -> Result<(PolicyParams, Vec<LogRow>, usize), TrainError> {
    match r {
        Ok(o) => Ok((o.params, o.log, o.dropped)),
        Err(TrainError::EmptyDataset(_)) => Ok((init, Vec::new(), 0)),
        Err(e) => Err(e),
    }
}

/// Random streams of the training stages, keyed by the run seed.
pub const STREAM_INIT_EMPLOYEE: u64 = 20;
pub const STREAM_INIT_MANAGER: u64 = 21;
pub const STREAM_PRETRAIN_EMPLOYEE: u64 = 22;
pub const STREAM_PRETRAIN_MANAGER: u64 = 23;
pub const STREAM_FINETUNE_EMPLOYEE: u64 = 24;
pub const STREAM_FINETUNE_MANAGER: u64 = 25;
pub const STREAM_REMAP: u64 = 30;

/// The non-hierarchical agent pursues the goal directly, so its single subgoal
/// gets the whole primitive budget.
pub fn mode_config(cfg: &TrainConfig, mode: &SubgoalMode) -> TrainConfig {
    let mut cfg = cfg.clone();
    if *mode == SubgoalMode::Flat {
        cfg.rollout_len = cfg.primitive_budget;
    }
    cfg
}

pub fn initial_params(cfg: &TrainConfig, stream: u64) -> PolicyParams {
    let mut p = PolicyParams::init(cfg.shape(), &mut substream(cfg.seed, stream, 0));
    p.temperature = cfg.temperature;
    p.epsilon = cfg.epsilon;
    p
}

/// Pretrains and fine-tunes both agents for `mode`. A mode whose data yields no
/// usable examples keeps its initial weights for that stage.
pub fn train_agents(
    data: &SeedData,
    mode: SubgoalMode,
    cfg: &TrainConfig,
) -> Result<TrainedAgents, HarnessError> {
    let seed = cfg.seed;
    let flat = mode == SubgoalMode::Flat;
    let cfg = &mode_config(cfg, &mode);
    let train = build_phi(&data.dataset.train, &mode);
    let val = build_phi(&data.dataset.val, &mode);
    let emp0 = initial_params(cfg, STREAM_INIT_EMPLOYEE);
    let mgr0 = initial_params(cfg, STREAM_INIT_MANAGER);
    let mut log = Vec::new();

    let r = pretrain_employee(
        emp0.clone(),
        &train.phi,
        &val.phi,
        cfg,
        &mut substream(seed, STREAM_PRETRAIN_EMPLOYEE, 0),
    );
    let (emp_pre, l, emp_drop) = or_keep(r, emp0)?;
    log.extend(l);
    let (mgr_pre, mgr_drop) = if flat {
        (mgr0, 0)
    } else {
        let r = pretrain_manager(
            mgr0.clone(),
            &train.phi0,
            &val.phi0,
            &mode,
            cfg,
            &mut substream(seed, STREAM_PRETRAIN_MANAGER, 0),
        );
        let (p, l, d) = or_keep(r, mgr0)?;
        log.extend(l);
        (p, d)
    };

    let (employee, snapshots) = if train.phi0.is_empty() {
        (emp_pre.clone(), Vec::new())
    } else {
        let o = finetune_employee(
            emp_pre.clone(),
            &train.phi0,
            &val.phi0,
            cfg,
            &mut substream(seed, STREAM_FINETUNE_EMPLOYEE, 0),
        )?;
        log.extend(o.log);
        (o.params, o.snapshots)
    };
    let val_tasks: Vec<Instruction> = data
        .dataset
        .val
        .iter()
        .map(|r| r.instruction.clone())
        .collect();
    let manager = if flat || train.phi0.is_empty() {
        mgr_pre.clone()
    } else {
        let o = finetune_manager(
            mgr_pre.clone(),
            &train.phi0,
            &val_tasks,
            &employee,
            &mode,
            cfg,
            &mut substream(seed, STREAM_FINETUNE_MANAGER, 0),
        )?;
        log.extend(o.log);
        o.params
    };
    Ok(TrainedAgents {
        mode,
        employee_pretrained: emp_pre,
        manager_pretrained: mgr_pre,
        employee,
        manager,
        employee_snapshots: snapshots,
        log,
        records_kept: train.kept,
        records_dropped: train.dropped,
        employee_bc_dropped: emp_drop,
        manager_bc_dropped: mgr_drop,
        limits: EpisodeLimits::from_config(cfg),
    })
}

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Full,
    Hand,
    FixedSequence,
    NoQuantity,
    NonHierarchical,
    Remap(f64),
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::Hand => "hand".into(),
            Variant::FixedSequence => "fixed-sequence".into(),
            Variant::NoQuantity => "no-quantity".into(),
            Variant::NonHierarchical => "non-hierarchical".into(),
            Variant::Remap(p) => format!("remap-{p}"),
        }
    }

    /// Remap variants draw their permutation from a stream of their own so that
    /// `p = 0` trains exactly like the full variant.
    pub fn mode(&self, universe: &RecipeUniverse, seed: u64) -> SubgoalMode {
        match *self {
            Variant::Full => SubgoalMode::Llm,
            Variant::Hand | Variant::FixedSequence => SubgoalMode::Hand,
            Variant::NoQuantity => SubgoalMode::NoQuantity,
            Variant::NonHierarchical => SubgoalMode::Flat,
            Variant::Remap(p) => {
                let mut rng = substream(seed, STREAM_REMAP, p.to_bits());
                SubgoalMode::Remap(
                    ItemRemap::sample(&universe.items, p, &mut rng)
                        .unwrap_or_else(|_| ItemRemap::identity()),
                )
            }
        }
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantScore {
    pub variant: String,
    pub seed: u64,
    pub success: f64,
    pub pretrained_success: f64,
    pub subgoal_success: f64,
    /// Employee subgoal success from test segment starts of the variant's own
    /// decomposition.
    pub employee_subgoal_success: f64,
    pub records_dropped: usize,
}

fn test_tasks(data: &SeedData) -> Vec<Instruction> {
    data.dataset
        .test
        .iter()
        .map(|r| r.instruction.clone())
        .collect()
}

/// Scores trained agents on the seed's test split.
pub fn score_agents(
    variant: Variant,
    agents: &TrainedAgents,
    data: &SeedData,
    seed: u64,
) -> VariantScore {
    let tasks = test_tasks(data);
    let heads = build_phi(&data.dataset.test, &agents.mode).phi0;
    let emp_sub = evaluate_employee(&heads, &agents.employee(true), agents.limits, seed);
    let (fin, pre) = if variant == Variant::FixedSequence {
        let m = evaluate_fixed_sequence(
            &data.dataset.test,
            &agents.employee(true),
            agents.limits,
            seed,
        );
        (m, m)
    } else {
        (
            agents.evaluate(&tasks, true, seed),
            agents.evaluate(&tasks, false, seed),
        )
    };
    VariantScore {
        variant: variant.name(),
        seed,
        success: fin.success_rate,
        pretrained_success: pre.success_rate,
        subgoal_success: fin.subgoal_success,
        employee_subgoal_success: emp_sub,
        records_dropped: agents.records_dropped,
    }
}

/// One employee checkpoint evaluated under the fine-tuned manager.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotPoint {
    /// Fraction of employee fine-tuning completed.
    pub fraction: f64,
    /// Per-proposal subgoal success.
    pub subgoal_success: f64,
    pub success: f64,
}

/// Subgoal and ultimate success on test tasks of the pretrained employee and each
/// fine-tuning snapshot, all paired with the fine-tuned manager.
pub fn snapshot_curve(agents: &TrainedAgents, data: &SeedData, seed: u64) -> Vec<SnapshotPoint> {
    let tasks = test_tasks(data);
    let total = agents
        .employee_snapshots
        .last()
        .map_or(1, |(it, _)| *it)
        .max(1);
    let point = |fraction: f64, params: &PolicyParams| {
        let emp = LearnedEmployee {
            params,
            weights: Weights::Shadow,
        };
        let m = evaluate(&tasks, &agents.manager(true), &emp, agents.limits, seed);
        SnapshotPoint {
            fraction,
            subgoal_success: m.subgoal_success,
            success: m.success_rate,
        }
    };
    let mut curve = vec![point(0.0, &agents.employee_pretrained)];
    for (it, p) in &agents.employee_snapshots {
        curve.push(point(*it as f64 / total as f64, p));
    }
    curve
}

/// Everything produced for one seed.
#[derive(Debug, Clone)]
pub struct SeedReport {
    pub seed: u64,
    pub scores: Vec<VariantScore>,
    pub log: Vec<LogRow>,
    pub snapshot_curve: Vec<SnapshotPoint>,
}

/// Trains and scores every requested variant on one seed. Variants sharing a
/// decomposition share their training run.
pub fn run_seed(
    cfg: &PipelineConfig,
    seed: u64,
    variants: &[Variant],
) -> Result<SeedReport, HarnessError> {
    let data = prepare_seed(cfg, seed)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;
    let mut trained: Vec<(SubgoalMode, TrainedAgents)> = Vec::new();
    let mut report = SeedReport {
        seed,
        scores: Vec::new(),
        log: Vec::new(),
        snapshot_curve: Vec::new(),
    };
    for v in variants {
        let mode = v.mode(&data.universe, seed);
        let idx = match trained.iter().position(|(m, _)| *m == mode) {
            Some(i) => i,
            None => {
                let agents = train_agents(&data, mode.clone(), &tcfg)?;
                if *v == Variant::Full {
                    report.log = agents.log.clone();
                    report.snapshot_curve = snapshot_curve(&agents, &data, seed);
                }
                trained.push((mode, agents));
                trained.len() - 1
            }
        };
        report
            .scores
            .push(score_agents(*v, &trained[idx].1, &data, seed));
    }
    Ok(report)
}
