//! Behaviour-cloning pretraining and world-model fine-tuning for both agents.

mod config;
mod replay;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

pub use config::{ConfigError, TrainConfig};
pub use replay::{replay_mix, MixedBatch, ReplayBuffer};

use crate::env::{ultimate_goal_achieved, Instruction};
use crate::harness::{evaluate, evaluate_employee, EpisodeLimits};
use crate::policy::features::{employee_features, manager_features};
use crate::policy::{
    argmax_index, ema_update, enumerate_employee_candidates, enumerate_manager_candidates,
    make_optimizer, policy_distribution, weighted_nll_grad_into, EmployeeCtx, Explore,
    FeatureBatch, LearnedEmployee, LearnedManager, ManagerCtx, Optimizer, PolicyError,
    PolicyParams, WeightedExample, Weights,
};
use crate::rng::SimRng;
use crate::subgoal::{subgoal_achieved, PhiEntry, SegmentHead, SubgoalMode};
use crate::world::{ewm_step, mwm_step};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("no usable {0} training examples")]
    EmptyDataset(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub phase: &'static str,
    pub success_rate: f64,
    pub loss: f64,
    pub buffer_size: usize,
    pub seed: u64,
}

pub const PHASE_PRETRAIN_EMPLOYEE: &str = "pretrain-employee";
pub const PHASE_PRETRAIN_MANAGER: &str = "pretrain-manager";
pub const PHASE_FINETUNE_EMPLOYEE: &str = "finetune-employee";
pub const PHASE_FINETUNE_MANAGER: &str = "finetune-manager";

/// Cap on validation examples scored after each pretraining epoch.
const PRETRAIN_VAL_CAP: usize = 2000;

/// Behaviour-cloning example for one demonstrated transition, or `None` when the
/// action is not among the candidates.
pub fn employee_example(entry: &PhiEntry, vocab: u32) -> Option<WeightedExample> {
    let cands = enumerate_employee_candidates(&entry.state, &entry.instruction);
    let chosen = cands.iter().position(|a| *a == entry.action)?;
    Some(WeightedExample {
        features: employee_features(
            &entry.state,
            &entry.history,
            &entry.subgoal,
            &entry.instruction,
            &cands,
            vocab,
        ),
        chosen,
        weight: 1.0,
    })
}

/// Behaviour-cloning example for one segment start, or `None` when the
/// demonstrated subgoal is not among the candidates.
pub fn manager_example(
    head: &SegmentHead,
    mode: &SubgoalMode,
    vocab: u32,
) -> Option<WeightedExample> {
    let cands = enumerate_manager_candidates(&head.state, &head.instruction, mode);
    let chosen = cands.iter().position(|g| *g == head.subgoal)?;
    Some(WeightedExample {
        features: manager_features(
            &head.state,
            &head.manager_history,
            &head.instruction,
            &cands,
            vocab,
        ),
        chosen,
        weight: 1.0,
    })
}

fn employee_usable(entry: &PhiEntry) -> bool {
    enumerate_employee_candidates(&entry.state, &entry.instruction).contains(&entry.action)
}

fn manager_usable(head: &SegmentHead, mode: &SubgoalMode) -> bool {
    enumerate_manager_candidates(&head.state, &head.instruction, mode).contains(&head.subgoal)
}

/// Result of behaviour cloning.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<LogRow>,
    pub used: usize,
    /// Examples whose demonstrated choice was not a candidate.
    pub dropped: usize,
}

/// Mean loss and top-1 accuracy on held-out examples.
fn holdout_metrics(params: &PolicyParams, examples: &[WeightedExample]) -> (f64, f64) {
    if examples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for ex in examples {
        let Ok(p) = policy_distribution(params, Weights::Live, &ex.features, false) else {
            continue;
        };
        loss -= libm::log(p[ex.chosen].max(f64::MIN_POSITIVE));
        if argmax_index(&p, None) == Some(ex.chosen) {
            hits += 1;
        }
    }
    (
        loss / examples.len() as f64,
        hits as f64 / examples.len() as f64,
    )
}

#[allow(clippy::too_many_arguments)]
fn behaviour_clone<F>(
    mut params: PolicyParams,
    usable: Vec<usize>,
    dropped: usize,
    make: F,
    val: &[WeightedExample],
    epochs: usize,
    batch_size: usize,
    cfg: &TrainConfig,
    phase: &'static str,
    rng: &mut SimRng,
) -> Result<PretrainOutcome, TrainError>
where
    F: Fn(usize) -> Option<WeightedExample>,
{
    if usable.is_empty() {
        return Err(TrainError::EmptyDataset(phase));
    }
    let mut opt = make_optimizer(cfg.optimizer, cfg.lr_pretrain, params.shape.len());
    let mut grad = alloc::vec![0.0; params.shape.len()];
    let mut order = usable.clone();
    let mut log = Vec::new();
    for epoch in 1..=epochs {
        order.shuffle(rng);
        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size.max(1)) {
            let batch: Vec<WeightedExample> = chunk.iter().filter_map(|&i| make(i)).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let Ok(loss) = weighted_nll_grad_into(&params, &batch, &mut grad) else {
                continue;
            };
            opt.step(&mut params.theta, &grad);
            train_loss += loss;
            batches += 1;
        }
        let (val_loss, val_acc) = holdout_metrics(&params, val);
        log.push(LogRow {
            iter: epoch,
            phase,
            success_rate: val_acc,
            loss: if val.is_empty() {
                train_loss / batches.max(1) as f64
            } else {
                val_loss
            },
            buffer_size: 0,
            seed: cfg.seed,
        });
    }
    params.sync_shadow();
    Ok(PretrainOutcome {
        params,
        log,
        used: usable.len(),
        dropped,
    })
}

/// Behaviour-clones the employee on demonstrated transitions. The success column
/// of the log is held-out top-1 accuracy.
pub fn pretrain_employee(
    params: PolicyParams,
    train: &[PhiEntry],
    val: &[PhiEntry],
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<PretrainOutcome, TrainError> {
    let vocab = params.shape.vocab as u32;
    let usable: Vec<usize> = (0..train.len())
        .filter(|&i| employee_usable(&train[i]))
        .collect();
    let dropped = train.len() - usable.len();
    let val: Vec<WeightedExample> = val
        .iter()
        .filter_map(|e| employee_example(e, vocab))
        .take(PRETRAIN_VAL_CAP)
        .collect();
    behaviour_clone(
        params,
        usable,
        dropped,
        |i| employee_example(&train[i], vocab),
        &val,
        cfg.pretrain_epochs_employee,
        cfg.batch_employee,
        cfg,
        PHASE_PRETRAIN_EMPLOYEE,
        rng,
    )
}

/// Behaviour-clones the manager on segment starts.
pub fn pretrain_manager(
    params: PolicyParams,
    train: &[SegmentHead],
    val: &[SegmentHead],
    mode: &SubgoalMode,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<PretrainOutcome, TrainError> {
    let vocab = params.shape.vocab as u32;
    let usable: Vec<usize> = (0..train.len())
        .filter(|&i| manager_usable(&train[i], mode))
        .collect();
    let dropped = train.len() - usable.len();
    let val: Vec<WeightedExample> = val
        .iter()
        .filter_map(|h| manager_example(h, mode, vocab))
        .take(PRETRAIN_VAL_CAP)
        .collect();
    behaviour_clone(
        params,
        usable,
        dropped,
        |i| manager_example(&train[i], mode, vocab),
        &val,
        cfg.pretrain_epochs_manager,
        cfg.batch_manager,
        cfg,
        PHASE_PRETRAIN_MANAGER,
        rng,
    )
}

/// Per-step weights of a successful trajectory of `len` steps; they sum to one.
pub fn trajectory_weights(len: usize) -> Vec<f64> {
    alloc::vec![1.0 / len as f64; len]
}

/// One sampled rollout: the decisions taken and whether it succeeded.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub decisions: Vec<(FeatureBatch, usize)>,
    pub success: bool,
}

/// Samples the live employee from a segment start under exact dynamics until the
/// subgoal holds or `rollout_len` steps pass.
pub fn employee_rollout(
    params: &PolicyParams,
    head: &SegmentHead,
    rollout_len: u32,
    rng: &mut SimRng,
) -> Rollout {
    let emp = LearnedEmployee {
        params,
        weights: Weights::Live,
    };
    let instr: &Instruction = &head.instruction;
    let mut s = head.state.clone();
    let mut hist = head.history.clone();
    let mut decisions = Vec::new();
    for _ in 0..rollout_len {
        if subgoal_achieved(&s, &head.subgoal) || ultimate_goal_achieved(&s, instr.goal()) {
            break;
        }
        let cands = enumerate_employee_candidates(&s, instr);
        let ctx = EmployeeCtx {
            state: &s,
            history: &hist,
            subgoal: &head.subgoal,
            instruction: instr,
        };
        let Some(choice) = emp.choose(&ctx, &cands, None, Explore::Sample, rng) else {
            break;
        };
        let out = ewm_step(&s, &cands[choice.index], instr);
        decisions.push((choice.features, choice.index));
        hist = [s, hist[0].clone()];
        s = out.next;
    }
    Rollout {
        success: !decisions.is_empty() && subgoal_achieved(&s, &head.subgoal),
        decisions,
    }
}

/// Samples the live manager from a segment start, executing each proposal with
/// the subgoal-level model driven by `employee`.
pub fn manager_rollout(
    params: &PolicyParams,
    employee: &PolicyParams,
    head: &SegmentHead,
    mode: &SubgoalMode,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Rollout {
    let mgr = LearnedManager {
        params,
        weights: Weights::Live,
        mode,
    };
    let emp = LearnedEmployee {
        params: employee,
        weights: Weights::Shadow,
    };
    let instr: &Instruction = &head.instruction;
    let mut s = head.state.clone();
    let mut hist = head.history.clone();
    let mut mhist = head.manager_history.clone();
    let mut decisions = Vec::new();
    for l in 0..cfg.manager_budget as usize {
        if ultimate_goal_achieved(&s, instr.goal()) {
            break;
        }
        let cands = enumerate_manager_candidates(&s, instr, mode);
        let ctx = ManagerCtx {
            state: &s,
            history: &mhist,
            instruction: instr,
            proposals: head.index + l,
        };
        let Some(choice) = mgr.choose(&ctx, &cands, Explore::Sample, rng) else {
            break;
        };
        let r = mwm_step(
            &s,
            &hist,
            &cands[choice.index],
            &emp,
            instr,
            cfg.rollout_len,
            Explore::Sample,
            rng,
        );
        decisions.push((choice.features, choice.index));
        mhist = [s, mhist[0].clone()];
        s = r.final_state;
        hist = r.history;
    }
    Rollout {
        success: !decisions.is_empty() && ultimate_goal_achieved(&s, instr.goal()),
        decisions,
    }
}

/// Result of fine-tuning.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub params: PolicyParams,
    pub log: Vec<LogRow>,
    /// Shadow weights at 25, 50, 75 and 100 percent of the iterations.
    pub snapshots: Vec<(usize, PolicyParams)>,
    /// Iterations without any successful rollout, which change nothing.
    pub skipped: usize,
    pub updates: usize,
    /// Batch slots filled after replay was enabled, and how many came from replay.
    pub replay_slots: usize,
    pub replay_drawn: usize,
    /// Failed rollouts seen, and how many were stored at weight zero.
    pub failed_seen: usize,
    pub failed_kept: usize,
}

struct Finetuner<'a> {
    cfg: &'a TrainConfig,
    batch_size: usize,
    opt: alloc::boxed::Box<dyn Optimizer>,
    buffer: ReplayBuffer,
    grad: Vec<f64>,
    out: FinetuneOutcome,
    last_loss: f64,
}

impl<'a> Finetuner<'a> {
    fn new(params: PolicyParams, cfg: &'a TrainConfig, batch_size: usize) -> Self {
        let len = params.shape.len();
        Finetuner {
            cfg,
            batch_size,
            opt: make_optimizer(cfg.optimizer, cfg.lr_finetune, len),
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            grad: alloc::vec![0.0; len],
            out: FinetuneOutcome {
                params,
                log: Vec::new(),
                snapshots: Vec::new(),
                skipped: 0,
                updates: 0,
                replay_slots: 0,
                replay_drawn: 0,
                failed_seen: 0,
                failed_kept: 0,
            },
            last_loss: f64::NAN,
        }
    }

    /// Files a wave of rollouts into fresh examples and the buffer, then updates
    /// the live weights unless no rollout succeeded.
    fn wave(&mut self, rollouts: Vec<Rollout>, rng: &mut SimRng) {
        let mut fresh = Vec::new();
        for r in rollouts {
            let len = r.decisions.len();
            if len == 0 {
                continue;
            }
            if !r.success {
                self.out.failed_seen += 1;
                if !rng.gen_bool(self.cfg.failed_keep) {
                    continue;
                }
                self.out.failed_kept += 1;
            }
            let weights = if r.success {
                trajectory_weights(len)
            } else {
                alloc::vec![0.0; len]
            };
            for ((features, chosen), weight) in r.decisions.into_iter().zip(weights) {
                let ex = WeightedExample {
                    features,
                    chosen,
                    weight,
                };
                if r.success {
                    fresh.push(ex.clone());
                }
                self.buffer.push(ex, len, rng);
            }
        }
        if fresh.is_empty() {
            self.out.skipped += 1;
            return;
        }
        let enabled = self.buffer.collected() >= self.cfg.replay_threshold;
        let steps = if enabled {
            self.cfg.rollout_period
        } else {
            self.cfg.grad_steps
        };
        for _ in 0..steps {
            let batch = replay_mix(
                &self.buffer,
                &fresh,
                self.batch_size,
                enabled,
                self.cfg.replay_mix,
                rng,
            );
            if enabled {
                self.out.replay_slots += batch.examples.len();
                self.out.replay_drawn += batch.from_replay;
            }
            self.grad.iter_mut().for_each(|g| *g = 0.0);
            let Ok(loss) =
                weighted_nll_grad_into(&self.out.params, &batch.examples, &mut self.grad)
            else {
                continue;
            };
            self.opt.step(&mut self.out.params.theta, &self.grad);
            ema_update(&mut self.out.params, self.cfg.tau);
            self.out.updates += 1;
            self.last_loss = loss;
        }
    }

    fn log(&mut self, iter: usize, phase: &'static str, success_rate: f64) {
        self.out.log.push(LogRow {
            iter,
            phase,
            success_rate,
            loss: self.last_loss,
            buffer_size: self.buffer.len(),
            seed: self.cfg.seed,
        });
    }

    fn snapshot_due(iter: usize, total: usize) -> bool {
        (1..=4).any(|q| iter == (q * total).div_ceil(4))
    }
}

/// Fine-tunes the employee on its own successful rollouts from segment starts.
/// The success column of the log is validation subgoal success of the shadow
/// weights.
pub fn finetune_employee(
    params: PolicyParams,
    train: &[SegmentHead],
    val: &[SegmentHead],
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<FinetuneOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset(PHASE_FINETUNE_EMPLOYEE));
    }
    let limits = EpisodeLimits::from_config(cfg);
    let val = &val[..val.len().min(cfg.val_episodes)];
    let validate = |p: &PolicyParams, seed: u64| {
        let emp = LearnedEmployee {
            params: p,
            weights: Weights::Shadow,
        };
        evaluate_employee(val, &emp, limits, seed)
    };
    let mut ft = Finetuner::new(params, cfg, cfg.batch_employee);
    let v0 = validate(&ft.out.params, cfg.seed);
    ft.log(0, PHASE_FINETUNE_EMPLOYEE, v0);
    let iters = cfg.finetune_iters_employee;
    for it in 1..=iters {
        let rollouts: Vec<Rollout> = (0..cfg.n_e)
            .map(|_| {
                let head = &train[rng.gen_range(0..train.len())];
                employee_rollout(&ft.out.params, head, cfg.rollout_len, rng)
            })
            .collect();
        ft.wave(rollouts, rng);
        if it % cfg.val_every == 0 || it == iters {
            let v = validate(&ft.out.params, cfg.seed);
            ft.log(it, PHASE_FINETUNE_EMPLOYEE, v);
        }
        if Finetuner::snapshot_due(it, iters) {
            ft.out.snapshots.push((it, ft.out.params.clone()));
        }
    }
    Ok(ft.out)
}

/// Fine-tunes the manager with the subgoal-level model. The success column of
/// the log is ultimate success on validation tasks with the true environment.
#[allow(clippy::too_many_arguments)]
pub fn finetune_manager(
    params: PolicyParams,
    train: &[SegmentHead],
    val_tasks: &[Instruction],
    employee: &PolicyParams,
    mode: &SubgoalMode,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<FinetuneOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset(PHASE_FINETUNE_MANAGER));
    }
    let limits = EpisodeLimits::from_config(cfg);
    let val = &val_tasks[..val_tasks.len().min(cfg.val_episodes)];
    let validate = |p: &PolicyParams, seed: u64| {
        let mgr = LearnedManager {
            params: p,
            weights: Weights::Shadow,
            mode,
        };
        let emp = LearnedEmployee {
            params: employee,
            weights: Weights::Shadow,
        };
        evaluate(val, &mgr, &emp, limits, seed).success_rate
    };
    let mut ft = Finetuner::new(params, cfg, cfg.batch_manager);
    let v0 = validate(&ft.out.params, cfg.seed);
    ft.log(0, PHASE_FINETUNE_MANAGER, v0);
    let iters = cfg.finetune_iters_manager;
    for it in 1..=iters {
        let rollouts: Vec<Rollout> = (0..cfg.n_m)
            .map(|_| {
                let head = &train[rng.gen_range(0..train.len())];
                manager_rollout(&ft.out.params, employee, head, mode, cfg, rng)
            })
            .collect();
        ft.wave(rollouts, rng);
        if it % cfg.val_every == 0 || it == iters {
            let v = validate(&ft.out.params, cfg.seed);
            ft.log(it, PHASE_FINETUNE_MANAGER, v);
        }
        if Finetuner::snapshot_due(it, iters) {
            ft.out.snapshots.push((it, ft.out.params.clone()));
        }
    }
    Ok(ft.out)
}
