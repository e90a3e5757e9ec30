//! World models: exact primitive dynamics, a learned validity classifier, and the
//! subgoal-level model that rolls out an employee.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::action::Action;
use crate::env::{apply_action, Instruction, StepOutcome};
use crate::inventory::Inventory;
use crate::policy::{EmployeeCtx, EmployeePolicy, Explore};
use crate::rng::SimRng;
use crate::subgoal::{subgoal_achieved, History, Subgoal};

/// Exact primitive model used by every training rollout.
pub fn ewm_step(s: &Inventory, a: &Action, instruction: &Instruction) -> StepOutcome {
    apply_action(s, a, instruction)
}

/// One logged employee step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub action: Action,
    pub valid: bool,
}

/// Outcome of pursuing one subgoal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmployeeRun {
    pub final_state: Inventory,
    pub history: History,
    pub achieved: bool,
    /// Steps counted against the subgoal step limit.
    pub steps: u32,
    /// Primitive actions executed, retries included.
    pub primitives: u32,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmployeeLimits {
    pub step_limit: u32,
    /// Primitive actions left in the episode.
    pub primitive_budget: u32,
    /// Re-choose once, excluding the rejected action, after an invalid step.
    pub retry: bool,
}

/// Runs `employee` toward `subgoal` from `state` with exact dynamics, stopping
/// when the subgoal holds, the ultimate goal is reached, or a limit runs out.
pub fn run_employee(
    state: &Inventory,
    history: &History,
    subgoal: &Subgoal,
    instruction: &Instruction,
    employee: &dyn EmployeePolicy,
    limits: EmployeeLimits,
    explore: Explore,
    rng: &mut SimRng,
) -> EmployeeRun {
    let mut s = state.clone();
    let mut hist = history.clone();
    let mut run = EmployeeRun {
        final_state: Inventory::new(),
        history: History::default(),
        achieved: subgoal_achieved(&s, subgoal),
        steps: 0,
        primitives: 0,
        trace: Vec::new(),
    };
    let mut done = run.achieved || s.count(instruction.goal()) >= 1;
    while !done && run.steps < limits.step_limit && run.primitives < limits.primitive_budget {
        run.steps += 1;
        let mut exclude: Option<Action> = None;
        let attempts = if limits.retry { 2 } else { 1 };
        for _ in 0..attempts {
            if run.primitives >= limits.primitive_budget {
                break;
            }
            let ctx = EmployeeCtx {
                state: &s,
                history: &hist,
                subgoal,
                instruction,
            };
            let Some(a) = employee.act(&ctx, exclude.as_ref(), explore, rng) else {
                done = true;
                break;
            };
            let out = ewm_step(&s, &a, instruction);
            run.primitives += 1;
            run.trace.push(TraceStep {
                action: a.clone(),
                valid: out.valid,
            });
            hist = [s.clone(), hist[0].clone()];
            s = out.next;
            if out.valid || out.done {
                break;
            }
            exclude = Some(a);
        }
        run.achieved = subgoal_achieved(&s, subgoal);
        done = done || run.achieved || s.count(instruction.goal()) >= 1;
    }
    run.final_state = s;
    run.history = hist;
    run
}

/// Subgoal-level transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MwmResult {
    pub final_state: Inventory,
    /// Primitive history at `final_state`.
    pub history: History,
    pub achieved: bool,
    pub steps_used: u32,
    /// Every attempted action with its validity; replaying the valid ones from the
    /// input state reproduces the final state when `achieved`.
    pub trace: Vec<TraceStep>,
}

/// Rolls out the employee toward `subgoal`; returns the reached state on success
/// and the input state otherwise.
#[allow(clippy::too_many_arguments)]
pub fn mwm_step(
    s: &Inventory,
    history: &History,
    subgoal: &Subgoal,
    employee: &dyn EmployeePolicy,
    instruction: &Instruction,
    step_limit: u32,
    explore: Explore,
    rng: &mut SimRng,
) -> MwmResult {
    let limits = EmployeeLimits {
        step_limit,
        primitive_budget: u32::MAX,
        retry: false,
    };
    let run = run_employee(
        s,
        history,
        subgoal,
        instruction,
        employee,
        limits,
        explore,
        rng,
    );
    let (final_state, history) = if run.achieved {
        (run.final_state, run.history)
    } else {
        (s.clone(), history.clone())
    };
    MwmResult {
        final_state,
        history,
        achieved: run.achieved,
        steps_used: run.steps,
        trace: run.trace,
    }
}

// ---------------------------------------------------------------------------
// validity classifier

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifierError {
    #[error("training data needs both valid and invalid examples")]
    SingleClass,
    #[error("feature header mismatch: expected {expected:?}")]
    Header { expected: Vec<String> },
}

/// Feature names, in weight order.
pub const VALIDITY_FEATURES: [&str; 9] = [
    "bias",
    "is_get",
    "get_is_base",
    "is_craft",
    "recipe_in_instruction",
    "ingredients_present",
    "recipe_and_present",
    "coverage",
    "product_in_closure",
];

pub fn validity_features(s: &Inventory, a: &Action, instruction: &Instruction) -> [f64; 9] {
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    match a {
        Action::Get { item, .. } => [
            1.0,
            1.0,
            b(instruction.is_base(item)),
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        ],
        Action::Craft(r) => {
            let reqs = r.requirements();
            let present = s.satisfies(reqs.iter().copied());
            let in_i = instruction.contains_recipe(r);
            let coverage = reqs
                .iter()
                .map(|&(i, q)| (f64::from(s.count(i)) / f64::from(q)).min(1.0))
                .sum::<f64>()
                / reqs.len().max(1) as f64;
            [
                1.0,
                0.0,
                0.0,
                1.0,
                b(in_i),
                b(present),
                b(in_i && present),
                coverage,
                b(instruction.in_closure(&r.out_item)),
            ]
        }
    }
}

/// A labelled transition for classifier training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTransition {
    pub state: Inventory,
    pub action: Action,
    pub instruction: Arc<Instruction>,
    pub valid: bool,
}

/// Logistic regression over [`VALIDITY_FEATURES`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityClassifier {
    pub weights: [f64; 9],
    pub threshold: f64,
    /// Accuracy on the held-out fifth of the training data.
    pub held_out_accuracy: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

impl ValidityClassifier {
    pub fn probability(&self, s: &Inventory, a: &Action, instruction: &Instruction) -> f64 {
        self.prob_of(&validity_features(s, a, instruction))
    }

    fn prob_of(&self, x: &[f64; 9]) -> f64 {
        sigmoid(self.weights.iter().zip(x).map(|(w, v)| w * v).sum())
    }

    pub fn predict(&self, s: &Inventory, a: &Action, instruction: &Instruction) -> bool {
        self.probability(s, a, instruction) >= self.threshold
    }

    pub fn accuracy(&self, data: &[LabeledTransition]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .iter()
            .filter(|t| self.predict(&t.state, &t.action, &t.instruction) == t.valid)
            .count();
        hits as f64 / data.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 300,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

/// Full-batch gradient descent on the logistic loss. The data is shuffled once and
/// the last fifth is held out for the reported accuracy.
pub fn train_validity_classifier(
    data: &[LabeledTransition],
    cfg: &ClassifierConfig,
    rng: &mut SimRng,
) -> Result<ValidityClassifier, ClassifierError> {
    let positives = data.iter().filter(|t| t.valid).count();
    if positives == 0 || positives == data.len() {
        return Err(ClassifierError::SingleClass);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let n_train = (data.len() * 4 / 5).max(1);
    let (train_idx, test_idx) = order.split_at(n_train);
    let feats: Vec<[f64; 9]> = train_idx
        .iter()
        .map(|&i| validity_features(&data[i].state, &data[i].action, &data[i].instruction))
        .collect();
    let labels: Vec<f64> = train_idx
        .iter()
        .map(|&i| if data[i].valid { 1.0 } else { 0.0 })
        .collect();
    let mut clf = ValidityClassifier {
        weights: [0.0; 9],
        threshold: 0.5,
        held_out_accuracy: 0.0,
    };
    let n = feats.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grad = [0.0; 9];
        for (x, y) in feats.iter().zip(&labels) {
            let e = clf.prob_of(x) - y;
            for k in 0..9 {
                grad[k] += e * x[k];
            }
        }
        for k in 0..9 {
            clf.weights[k] -= cfg.lr * (grad[k] / n + cfg.l2 * clf.weights[k]);
        }
    }
    let held: Vec<LabeledTransition> = test_idx.iter().map(|&i| data[i].clone()).collect();
    clf.held_out_accuracy = if held.is_empty() {
        clf.accuracy(data)
    } else {
        clf.accuracy(&held)
    };
    Ok(clf)
}
