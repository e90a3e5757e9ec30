//! Goal-conditioned candidate-scoring policies.

mod agents;
mod candidates;
pub mod features;
mod optim;
mod params;

pub use agents::{
    Choice, EmployeeCtx, EmployeePolicy, Explore, FixedSequenceManager, LearnedEmployee,
    LearnedManager, ManagerCtx, ManagerPolicy, OracleEmployee, RandomEmployee, RandomManager,
    RequirementManager,
};
pub use candidates::{enumerate_employee_candidates, enumerate_manager_candidates};
pub use features::FeatureBatch;
pub use optim::{make_optimizer, Adam, Optimizer, OptimizerKind, Sgd};
pub use params::{
    argmax_index, ema_update, policy_distribution, sample_index, scores, weighted_nll,
    weighted_nll_grad, weighted_nll_grad_into, PolicyError, PolicyParams, Section, Shape,
    WeightedExample, Weights,
};
