//! Hierarchical subgoal-conditioned planning for crafting text environments.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`env`]: the crafting environment (action grammar, inventory dynamics, goal test),
//! - [`tasks`]: recipe universes, tasks, optimal plans and noisy demonstrations,
//! - [`subgoal`]: subgoal decomposition modes, completion checks and the
//!   transition / segment-head datasets built from them,
//! - [`world`]: the exact employee world model, a learned validity classifier and
//!   the manager world model built from employee rollouts,
//! - [`policy`]: candidate-scoring policies with weighted negative log-likelihood training,
//! - [`training`]: imitation pretraining and world-model fine-tuning for both agents,
//! - [`harness`]: hierarchical episodes, evaluation and ablation variants.
//!
//! File formats and the command line live in the `craftplan` companion crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod action;
pub mod env;
pub mod harness;
pub mod inventory;
pub mod policy;
pub mod rng;
pub mod subgoal;
pub mod tasks;
pub mod training;
pub mod world;

pub use action::{parse_action, Action, ParseError, Recipe};
pub use env::{apply_action, ultimate_goal_achieved, EpisodeState, Instruction, StepOutcome};
pub use inventory::Inventory;
pub use subgoal::{subgoal_achieved, Subgoal};
