//! Employee and manager agents: learned scorers plus scripted and random baselines.

use alloc::vec::Vec;

use rand::Rng;

use super::candidates::{enumerate_employee_candidates, enumerate_manager_candidates};
use super::features::{employee_features, manager_features, FeatureBatch};
use super::params::{argmax_index, policy_distribution, sample_index, PolicyParams, Weights};
use crate::action::Action;
use crate::env::Instruction;
use crate::inventory::Inventory;
use crate::rng::SimRng;
use crate::subgoal::{instruction_requirements, subgoal_achieved, History, Subgoal, SubgoalMode};
use crate::tasks::plan_to_thresholds;

/// Greedy choice or sampling with the policy's exploration settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Explore {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy)]
pub struct EmployeeCtx<'a> {
    pub state: &'a Inventory,
    pub history: &'a History,
    pub subgoal: &'a Subgoal,
    pub instruction: &'a Instruction,
}

#[derive(Debug, Clone, Copy)]
pub struct ManagerCtx<'a> {
    pub state: &'a Inventory,
    /// States at the two previous proposals, most recent first.
    pub history: &'a History,
    pub instruction: &'a Instruction,
    /// Subgoals proposed so far in this episode.
    pub proposals: usize,
}

pub trait EmployeePolicy {
    /// Next primitive action. `exclude` is an action that was just rejected and
    /// should not be chosen again. `None` means the agent has nothing to try.
    fn act(
        &self,
        ctx: &EmployeeCtx<'_>,
        exclude: Option<&Action>,
        explore: Explore,
        rng: &mut SimRng,
    ) -> Option<Action>;
}

pub trait ManagerPolicy {
    fn propose(&self, ctx: &ManagerCtx<'_>, explore: Explore, rng: &mut SimRng) -> Option<Subgoal>;
}

fn pick(p: &[f64], exclude: Option<usize>, explore: Explore, rng: &mut SimRng) -> Option<usize> {
    match explore {
        Explore::Greedy => argmax_index(p, exclude),
        Explore::Sample => sample_index(p, exclude, rng),
    }
}

/// A decision together with what is needed to train on it.
#[derive(Debug, Clone)]
pub struct Choice {
    pub index: usize,
    pub features: FeatureBatch,
}

#[derive(Debug, Clone, Copy)]
pub struct LearnedEmployee<'a> {
    pub params: &'a PolicyParams,
    pub weights: Weights,
}

impl LearnedEmployee<'_> {
    pub fn features(&self, ctx: &EmployeeCtx<'_>, candidates: &[Action]) -> FeatureBatch {
        employee_features(
            ctx.state,
            ctx.history,
            ctx.subgoal,
            ctx.instruction,
            candidates,
            self.params.shape.vocab as u32,
        )
    }

    pub fn choose(
        &self,
        ctx: &EmployeeCtx<'_>,
        candidates: &[Action],
        exclude: Option<usize>,
        explore: Explore,
        rng: &mut SimRng,
    ) -> Option<Choice> {
        let features = self.features(ctx, candidates);
        let p = policy_distribution(
            self.params,
            self.weights,
            &features,
            explore == Explore::Sample,
        )
        .ok()?;
        let index = pick(&p, exclude, explore, rng)?;
        Some(Choice { index, features })
    }
}

impl EmployeePolicy for LearnedEmployee<'_> {
    fn act(
        &self,
        ctx: &EmployeeCtx<'_>,
        exclude: Option<&Action>,
        explore: Explore,
        rng: &mut SimRng,
    ) -> Option<Action> {
        let cands = enumerate_employee_candidates(ctx.state, ctx.instruction);
        let ex = exclude.and_then(|a| cands.iter().position(|c| c == a));
        let c = self.choose(ctx, &cands, ex, explore, rng)?;
        Some(cands[c.index].clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LearnedManager<'a> {
    pub params: &'a PolicyParams,
    pub weights: Weights,
    pub mode: &'a SubgoalMode,
}

impl LearnedManager<'_> {
    pub fn features(&self, ctx: &ManagerCtx<'_>, candidates: &[Subgoal]) -> FeatureBatch {
        manager_features(
            ctx.state,
            ctx.history,
            ctx.instruction,
            candidates,
            self.params.shape.vocab as u32,
        )
    }

    pub fn choose(
        &self,
        ctx: &ManagerCtx<'_>,
        candidates: &[Subgoal],
        explore: Explore,
        rng: &mut SimRng,
    ) -> Option<Choice> {
        let features = self.features(ctx, candidates);
        let p = policy_distribution(
            self.params,
            self.weights,
            &features,
            explore == Explore::Sample,
        )
        .ok()?;
        let index = pick(&p, None, explore, rng)?;
        Some(Choice { index, features })
    }
}

impl ManagerPolicy for LearnedManager<'_> {
    fn propose(&self, ctx: &ManagerCtx<'_>, explore: Explore, rng: &mut SimRng) -> Option<Subgoal> {
        let cands = enumerate_manager_candidates(ctx.state, ctx.instruction, self.mode);
        let c = self.choose(ctx, &cands, explore, rng)?;
        Some(cands[c.index].clone())
    }
}

/// Follows a shortest plan to the subgoal thresholds.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEmployee;

impl EmployeePolicy for OracleEmployee {
    fn act(
        &self,
        ctx: &EmployeeCtx<'_>,
        _exclude: Option<&Action>,
        _explore: Explore,
        _rng: &mut SimRng,
    ) -> Option<Action> {
        let thresholds: Vec<(&str, u32)> = ctx.subgoal.iter().collect();
        plan_to_thresholds(ctx.state, &thresholds, ctx.instruction)?
            .into_iter()
            .next()
    }
}

/// Uniform over the employee candidates.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomEmployee;

impl EmployeePolicy for RandomEmployee {
    fn act(
        &self,
        ctx: &EmployeeCtx<'_>,
        exclude: Option<&Action>,
        _explore: Explore,
        rng: &mut SimRng,
    ) -> Option<Action> {
        let cands: Vec<Action> = enumerate_employee_candidates(ctx.state, ctx.instruction)
            .into_iter()
            .filter(|c| Some(c) != exclude)
            .collect();
        if cands.is_empty() {
            return None;
        }
        Some(cands[rng.gen_range(0..cands.len())].clone())
    }
}

/// Proposes a fixed list in order, whatever happened before.
#[derive(Debug, Clone, Default)]
pub struct FixedSequenceManager {
    pub sequence: Vec<Subgoal>,
}

impl ManagerPolicy for FixedSequenceManager {
    fn propose(
        &self,
        ctx: &ManagerCtx<'_>,
        _explore: Explore,
        _rng: &mut SimRng,
    ) -> Option<Subgoal> {
        self.sequence.get(ctx.proposals).cloned()
    }
}

/// Walks the goal's requirement list: proposes the entry after the last one the
/// state already satisfies.
#[derive(Debug, Clone, Copy, Default)]
pub struct RequirementManager;

impl ManagerPolicy for RequirementManager {
    fn propose(
        &self,
        ctx: &ManagerCtx<'_>,
        _explore: Explore,
        _rng: &mut SimRng,
    ) -> Option<Subgoal> {
        let mut list: Vec<Subgoal> = instruction_requirements(ctx.instruction)
            .into_iter()
            .map(|(x, q)| Subgoal::single(x, q))
            .collect();
        list.push(Subgoal::single(ctx.instruction.goal(), 1));
        let next = list
            .iter()
            .rposition(|g| subgoal_achieved(ctx.state, g))
            .map_or(0, |i| i + 1);
        list.get(next).cloned()
    }
}

/// Uniform over the manager candidates of a mode.
#[derive(Debug, Clone)]
pub struct RandomManager {
    pub mode: SubgoalMode,
}

impl ManagerPolicy for RandomManager {
    fn propose(
        &self,
        ctx: &ManagerCtx<'_>,
        _explore: Explore,
        rng: &mut SimRng,
    ) -> Option<Subgoal> {
        let cands = enumerate_manager_candidates(ctx.state, ctx.instruction, &self.mode);
        if cands.is_empty() {
            return None;
        }
        Some(cands[rng.gen_range(0..cands.len())].clone())
    }
}
