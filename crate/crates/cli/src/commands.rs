//! The subcommands, as functions over an output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use craftplan_core::env::is_valid;
use craftplan_core::harness::{
    evaluate, initial_params, mode_config, run_seed, EpisodeLimits, EvalMetrics, PipelineConfig,
    Variant, STREAM_FINETUNE_EMPLOYEE, STREAM_FINETUNE_MANAGER, STREAM_INIT_EMPLOYEE,
    STREAM_INIT_MANAGER, STREAM_PRETRAIN_EMPLOYEE, STREAM_PRETRAIN_MANAGER,
};
use craftplan_core::policy::{LearnedEmployee, LearnedManager, PolicyParams, Weights};
use craftplan_core::rng::substream;
use craftplan_core::subgoal::{build_phi, SubgoalMode};
use craftplan_core::tasks::{
    build_recipe_universe, generate_dataset, RecipeUniverse, TrajectoryRecord,
};
use craftplan_core::training::{
    finetune_employee, finetune_manager, pretrain_employee, pretrain_manager, TrainConfig,
};
use craftplan_core::world::{train_validity_classifier, ClassifierConfig, LabeledTransition};
use craftplan_core::{Instruction, Inventory};

use crate::formats;
use crate::report::{self, AblationRow};

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub seed: u64,
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.cfg.train.clone()
        }
    }

    fn mode_dir(&self, mode: &SubgoalMode) -> anyhow::Result<PathBuf> {
        let dir = match mode {
            SubgoalMode::Remap(r) => self.out.join(format!("remap-{}", r.fraction())),
            _ => self.out.join(mode.name()),
        };
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

/// Subgoal decomposition selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeChoice {
    Llm,
    Hand,
    NoQuantity,
    Flat,
    Remap(f64),
}

impl ModeChoice {
    /// Remap permutations come from the same stream as the ablation runner's.
    pub fn resolve(self, ctx: &Ctx) -> anyhow::Result<SubgoalMode> {
        Ok(match self {
            ModeChoice::Llm => SubgoalMode::Llm,
            ModeChoice::Hand => SubgoalMode::Hand,
            ModeChoice::NoQuantity => SubgoalMode::NoQuantity,
            ModeChoice::Flat => SubgoalMode::Flat,
            ModeChoice::Remap(p) => {
                let remap_file = ctx.path("remap.tsv");
                if remap_file.exists() {
                    let r = formats::read_remap(BufReader::new(File::open(&remap_file)?))?;
                    if r.fraction() == p {
                        return Ok(SubgoalMode::Remap(r));
                    }
                }
                Variant::Remap(p).mode(&load_universe(ctx)?, ctx.seed)
            }
        })
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot write {}", path.display())
    })?))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot read {}", path.display())
    })?))
}

pub fn gen_universe(ctx: &Ctx) -> anyhow::Result<RecipeUniverse> {
    let u = build_recipe_universe(&ctx.cfg.universe, ctx.seed)?;
    formats::write_universe(create(&ctx.path("universe.txt"))?, &u)?;
    Ok(u)
}

fn load_universe(ctx: &Ctx) -> anyhow::Result<RecipeUniverse> {
    let path = ctx.path("universe.txt");
    if path.exists() {
        Ok(formats::read_universe(open(&path)?)?)
    } else {
        gen_universe(ctx)
    }
}

fn read_split(ctx: &Ctx, name: &str) -> anyhow::Result<Vec<TrajectoryRecord>> {
    let path = ctx.path(&format!("{name}.jsonl"));
    formats::read_records(open(&path)?).with_context(|| format!("in {}", path.display()))
}

/// Every demonstrated step labelled with its validity in the state it was taken from.
pub fn labeled_transitions(records: &[TrajectoryRecord]) -> Vec<LabeledTransition> {
    let mut out = Vec::new();
    for r in records {
        let instruction = Arc::new(r.instruction.clone());
        let mut s = Inventory::new();
        for step in &r.steps {
            out.push(LabeledTransition {
                state: s.clone(),
                action: step.action.clone(),
                instruction: Arc::clone(&instruction),
                valid: is_valid(&s, &step.action, &instruction),
            });
            s = step.state.clone();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub classifier_accuracy: Option<f64>,
}

/// Writes the three splits, checking that every record replays to success, and
/// fits the validity classifier on the training transitions.
pub fn gen_data(ctx: &Ctx) -> anyhow::Result<DataSummary> {
    let universe = load_universe(ctx)?;
    let data = generate_dataset(&universe, &ctx.cfg.dataset, ctx.seed)?;
    for (name, split) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
    ] {
        for (i, r) in split.iter().enumerate() {
            r.verify()
                .with_context(|| format!("{name} record {i} does not replay"))?;
        }
        formats::write_records(create(&ctx.path(&format!("{name}.jsonl")))?, split)?;
    }
    let transitions = labeled_transitions(&data.train);
    let clf = train_validity_classifier(
        &transitions,
        &ClassifierConfig::default(),
        &mut substream(ctx.seed, 40, 0),
    )
    .ok();
    if let Some(c) = &clf {
        formats::write_classifier(create(&ctx.path("validity.txt"))?, c)?;
    }
    Ok(DataSummary {
        train: data.train.len(),
        val: data.val.len(),
        test: data.test.len(),
        classifier_accuracy: clf.map(|c| c.held_out_accuracy),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeSummary {
    pub kept: usize,
    pub dropped: usize,
    pub phi: usize,
    pub phi0: usize,
}

pub fn decompose(ctx: &Ctx, choice: ModeChoice) -> anyhow::Result<DecomposeSummary> {
    let mode = choice.resolve(ctx)?;
    if let SubgoalMode::Remap(r) = &mode {
        formats::write_remap(create(&ctx.path("remap.tsv"))?, r)?;
    }
    let train = read_split(ctx, "train")?;
    let phi = build_phi(&train, &mode);
    let dir = ctx.mode_dir(&mode)?;
    formats::write_phi(
        create(&dir.join("phi.jsonl"))?,
        create(&dir.join("phi0.jsonl"))?,
        &phi,
        &train,
    )?;
    Ok(DecomposeSummary {
        kept: phi.kept,
        dropped: phi.dropped,
        phi: phi.phi.len(),
        phi0: phi.phi0.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agent {
    Employee,
    Manager,
}

impl Agent {
    fn name(self) -> &'static str {
        match self {
            Agent::Employee => "employee",
            Agent::Manager => "manager",
        }
    }
}

fn no_flat_manager(agent: Agent, mode: &SubgoalMode) -> anyhow::Result<()> {
    if agent == Agent::Manager && *mode == SubgoalMode::Flat {
        bail!("the non-hierarchical mode has no manager to train");
    }
    Ok(())
}

fn save(path: &Path, p: &PolicyParams) -> anyhow::Result<()> {
    formats::write_checkpoint(create(path)?, p)?;
    Ok(())
}

fn load(path: &Path) -> anyhow::Result<PolicyParams> {
    if !path.exists() {
        bail!("missing checkpoint {}", path.display());
    }
    formats::read_checkpoint(open(path)?).with_context(|| format!("in {}", path.display()))
}

/// Behaviour cloning for one agent; writes `<mode>/<agent>_pretrained.ckpt`.
pub fn pretrain(ctx: &Ctx, agent: Agent, choice: ModeChoice) -> anyhow::Result<PathBuf> {
    let mode = choice.resolve(ctx)?;
    no_flat_manager(agent, &mode)?;
    let cfg = mode_config(&ctx.train_config(), &mode);
    let train = build_phi(&read_split(ctx, "train")?, &mode);
    let val = build_phi(&read_split(ctx, "val")?, &mode);
    let out = match agent {
        Agent::Employee => pretrain_employee(
            initial_params(&cfg, STREAM_INIT_EMPLOYEE),
            &train.phi,
            &val.phi,
            &cfg,
            &mut substream(cfg.seed, STREAM_PRETRAIN_EMPLOYEE, 0),
        )?,
        Agent::Manager => pretrain_manager(
            initial_params(&cfg, STREAM_INIT_MANAGER),
            &train.phi0,
            &val.phi0,
            &mode,
            &cfg,
            &mut substream(cfg.seed, STREAM_PRETRAIN_MANAGER, 0),
        )?,
    };
    report::append_log(&ctx.path("train_log.csv"), &out.log)?;
    let path = ctx
        .mode_dir(&mode)?
        .join(format!("{}_pretrained.ckpt", agent.name()));
    save(&path, &out.params)?;
    Ok(path)
}

/// Fine-tunes one agent from its pretrained checkpoint; the manager also needs
/// the fine-tuned employee. Employee snapshots are saved alongside.
pub fn finetune(ctx: &Ctx, agent: Agent, choice: ModeChoice) -> anyhow::Result<PathBuf> {
    let mode = choice.resolve(ctx)?;
    no_flat_manager(agent, &mode)?;
    let cfg = mode_config(&ctx.train_config(), &mode);
    let dir = ctx.mode_dir(&mode)?;
    let start = load(&dir.join(format!("{}_pretrained.ckpt", agent.name())))?;
    let train = build_phi(&read_split(ctx, "train")?, &mode);
    let out = match agent {
        Agent::Employee => {
            let val = build_phi(&read_split(ctx, "val")?, &mode);
            let o = finetune_employee(
                start,
                &train.phi0,
                &val.phi0,
                &cfg,
                &mut substream(cfg.seed, STREAM_FINETUNE_EMPLOYEE, 0),
            )?;
            for (q, (_, p)) in o.snapshots.iter().enumerate() {
                save(
                    &dir.join(format!("employee_snapshot_{}.ckpt", 25 * (q + 1))),
                    p,
                )?;
            }
            o
        }
        Agent::Manager => {
            let employee = load(&dir.join("employee.ckpt"))?;
            let val: Vec<Instruction> = read_split(ctx, "val")?
                .into_iter()
                .map(|r| r.instruction)
                .collect();
            finetune_manager(
                start,
                &train.phi0,
                &val,
                &employee,
                &mode,
                &cfg,
                &mut substream(cfg.seed, STREAM_FINETUNE_MANAGER, 0),
            )?
        }
    };
    report::append_log(&ctx.path("train_log.csv"), &out.log)?;
    let path = dir.join(format!("{}.ckpt", agent.name()));
    save(&path, &out.params)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: EvalMetrics,
    pub wall_time: Duration,
    pub path: PathBuf,
}

pub const EVAL_HEADER: [&str; 6] = [
    "episodes",
    "success_rate",
    "subgoal_success",
    "mean_primitives",
    "mean_proposals",
    "wall_time_s",
];

/// Evaluates saved checkpoints on the test split and writes `<mode>/eval.csv`.
/// With `pretrained` the pretrained checkpoints are used instead.
pub fn eval(ctx: &Ctx, choice: ModeChoice, pretrained: bool) -> anyhow::Result<EvalReport> {
    let mode = choice.resolve(ctx)?;
    let cfg = mode_config(&ctx.train_config(), &mode);
    let dir = ctx.mode_dir(&mode)?;
    let suffix = if pretrained { "_pretrained" } else { "" };
    let employee = load(&dir.join(format!("employee{suffix}.ckpt")))?;
    let manager = if mode == SubgoalMode::Flat {
        initial_params(&cfg, STREAM_INIT_MANAGER)
    } else {
        load(&dir.join(format!("manager{suffix}.ckpt")))?
    };
    let tasks: Vec<Instruction> = read_split(ctx, "test")?
        .into_iter()
        .map(|r| r.instruction)
        .collect();
    anyhow::ensure!(!tasks.is_empty(), "no test tasks");
    let start = Instant::now();
    let metrics = evaluate(
        &tasks,
        &LearnedManager {
            params: &manager,
            weights: Weights::Shadow,
            mode: &mode,
        },
        &LearnedEmployee {
            params: &employee,
            weights: Weights::Shadow,
        },
        EpisodeLimits::from_config(&cfg),
        ctx.seed,
    );
    let wall_time = start.elapsed();
    let path = dir.join(format!("eval{suffix}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(EVAL_HEADER)?;
    w.write_record([
        metrics.episodes.to_string(),
        format!("{:.6}", metrics.success_rate),
        format!("{:.6}", metrics.subgoal_success),
        format!("{:.6}", metrics.mean_primitives),
        format!("{:.6}", metrics.mean_proposals),
        format!("{:.3}", wall_time.as_secs_f64()),
    ])?;
    w.flush()?;
    Ok(EvalReport {
        metrics,
        wall_time,
        path,
    })
}

pub const ABLATION_VARIANTS: [Variant; 9] = [
    Variant::Full,
    Variant::Hand,
    Variant::FixedSequence,
    Variant::NoQuantity,
    Variant::NonHierarchical,
    Variant::Remap(0.0),
    Variant::Remap(0.25),
    Variant::Remap(0.5),
    Variant::Remap(1.0),
];

/// Trains and scores every variant on each seed, then writes the raw rows, the
/// full variant's training log and snapshot sweep, and the report. A seed that
/// fails marks its rows absent and the run continues.
pub fn ablate(ctx: &Ctx, seeds: &[u64], variants: &[Variant]) -> anyhow::Result<Vec<AblationRow>> {
    fs::create_dir_all(&ctx.out)?;
    let mut rows = Vec::new();
    let mut log = Vec::new();
    let mut snapshots = Vec::new();
    for &seed in seeds {
        match run_seed(&ctx.cfg, seed, variants) {
            Ok(r) => {
                log.extend(r.log);
                snapshots.extend(r.snapshot_curve.into_iter().map(|p| (seed, p)));
                rows.extend(r.scores.into_iter().map(|s| AblationRow {
                    variant: s.variant.clone(),
                    seed,
                    score: Some(s),
                }));
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                rows.extend(variants.iter().map(|v| AblationRow {
                    variant: v.name(),
                    seed,
                    score: None,
                }));
            }
        }
    }
    report::write_rows(&ctx.path("ablation_rows.csv"), &rows)?;
    let log_path = ctx.path("ablation_log.csv");
    if log_path.exists() {
        fs::remove_file(&log_path)?;
    }
    report::append_log(&log_path, &log)?;
    report::write_snapshots(&ctx.path("snapshots.csv"), &snapshots)?;
    report_cmd(ctx)?;
    Ok(rows)
}

/// Rebuilds `report/table.csv` and `report/curves.csv` from the ablation files.
pub fn report_cmd(ctx: &Ctx) -> anyhow::Result<(PathBuf, PathBuf)> {
    let rows = report::read_rows(&ctx.path("ablation_rows.csv"))?;
    let log_path = ctx.path("ablation_log.csv");
    let log = if log_path.exists() {
        report::read_log(&log_path)?
    } else {
        Vec::new()
    };
    let snap_path = ctx.path("snapshots.csv");
    let snapshots = if snap_path.exists() {
        report::read_snapshots(&snap_path)?
    } else {
        Vec::new()
    };
    report::emit_report(&rows, &log, &snapshots, &ctx.path("report"))
}
