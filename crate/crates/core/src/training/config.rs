use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::policy::{OptimizerKind, Shape};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Training hyperparameters. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub optimizer: OptimizerKind,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub batch_employee: usize,
    pub batch_manager: usize,
    pub pretrain_epochs_employee: usize,
    pub pretrain_epochs_manager: usize,
    /// Employee rollouts per fine-tuning iteration.
    pub n_e: usize,
    /// Manager rollouts per fine-tuning iteration.
    pub n_m: usize,
    /// Employee step limit per subgoal during rollouts.
    pub rollout_len: u32,
    pub manager_budget: u32,
    pub primitive_budget: u32,
    pub replay_capacity: usize,
    pub replay_mix: f64,
    pub replay_threshold: usize,
    pub failed_keep: f64,
    /// Gradient steps per rollout wave once replay is enabled.
    pub rollout_period: usize,
    /// Gradient steps per rollout wave before replay is enabled.
    pub grad_steps: usize,
    pub finetune_iters_employee: usize,
    pub finetune_iters_manager: usize,
    pub val_every: usize,
    pub val_episodes: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub temperature: f64,
    pub retry: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let shape = Shape::default();
        TrainConfig {
            vocab: shape.vocab,
            dim: shape.dim,
            hidden: shape.hidden,
            optimizer: OptimizerKind::Adam,
            lr_pretrain: 3e-3,
            lr_finetune: 1e-4,
            batch_employee: 256,
            batch_manager: 16,
            pretrain_epochs_employee: 6,
            pretrain_epochs_manager: 6,
            n_e: 16,
            n_m: 8,
            rollout_len: 8,
            manager_budget: 10,
            primitive_budget: 30,
            replay_capacity: 10_000,
            replay_mix: 0.9,
            replay_threshold: 4096,
            failed_keep: 0.15,
            rollout_period: 10,
            grad_steps: 4,
            finetune_iters_employee: 400,
            finetune_iters_manager: 300,
            val_every: 50,
            val_episodes: 100,
            tau: 0.1,
            epsilon: 0.1,
            temperature: 1.0,
            retry: true,
            seed: 0,
        }
    }
}

fn parse<T: core::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

impl TrainConfig {
    pub fn shape(&self) -> Shape {
        Shape {
            vocab: self.vocab,
            dim: self.dim,
            hidden: self.hidden,
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "vocab" => self.vocab = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: v.into(),
                        })
                    }
                }
            }
            "lr_pretrain" => self.lr_pretrain = parse(key, v)?,
            "lr_finetune" => self.lr_finetune = parse(key, v)?,
            "batch_employee" => self.batch_employee = parse(key, v)?,
            "batch_manager" => self.batch_manager = parse(key, v)?,
            "pretrain_epochs_employee" => self.pretrain_epochs_employee = parse(key, v)?,
            "pretrain_epochs_manager" => self.pretrain_epochs_manager = parse(key, v)?,
            "n_e" => self.n_e = parse(key, v)?,
            "n_m" => self.n_m = parse(key, v)?,
            "rollout_len" => self.rollout_len = parse(key, v)?,
            "manager_budget" => self.manager_budget = parse(key, v)?,
            "primitive_budget" => self.primitive_budget = parse(key, v)?,
            "replay_capacity" => self.replay_capacity = parse(key, v)?,
            "replay_mix" => self.replay_mix = parse(key, v)?,
            "replay_threshold" => self.replay_threshold = parse(key, v)?,
            "failed_keep" => self.failed_keep = parse(key, v)?,
            "rollout_period" => self.rollout_period = parse(key, v)?,
            "grad_steps" => self.grad_steps = parse(key, v)?,
            "finetune_iters_employee" => self.finetune_iters_employee = parse(key, v)?,
            "finetune_iters_manager" => self.finetune_iters_manager = parse(key, v)?,
            "val_every" => self.val_every = parse(key, v)?,
            "val_episodes" => self.val_episodes = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "retry" => self.retry = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// All fields as `(key, value)` text, in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = match self.optimizer {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        };
        alloc::vec![
            ("vocab", self.vocab.to_string()),
            ("dim", self.dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("optimizer", opt.to_string()),
            ("lr_pretrain", format!("{}", self.lr_pretrain)),
            ("lr_finetune", format!("{}", self.lr_finetune)),
            ("batch_employee", self.batch_employee.to_string()),
            ("batch_manager", self.batch_manager.to_string()),
            (
                "pretrain_epochs_employee",
                self.pretrain_epochs_employee.to_string()
            ),
            (
                "pretrain_epochs_manager",
                self.pretrain_epochs_manager.to_string()
            ),
            ("n_e", self.n_e.to_string()),
            ("n_m", self.n_m.to_string()),
            ("rollout_len", self.rollout_len.to_string()),
            ("manager_budget", self.manager_budget.to_string()),
            ("primitive_budget", self.primitive_budget.to_string()),
            ("replay_capacity", self.replay_capacity.to_string()),
            ("replay_mix", format!("{}", self.replay_mix)),
            ("replay_threshold", self.replay_threshold.to_string()),
            ("failed_keep", format!("{}", self.failed_keep)),
            ("rollout_period", self.rollout_period.to_string()),
            ("grad_steps", self.grad_steps.to_string()),
            (
                "finetune_iters_employee",
                self.finetune_iters_employee.to_string()
            ),
            (
                "finetune_iters_manager",
                self.finetune_iters_manager.to_string()
            ),
            ("val_every", self.val_every.to_string()),
            ("val_episodes", self.val_episodes.to_string()),
            ("tau", format!("{}", self.tau)),
            ("epsilon", format!("{}", self.epsilon)),
            ("temperature", format!("{}", self.temperature)),
            ("retry", self.retry.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !(frac(self.replay_mix)
            && frac(self.failed_keep)
            && frac(self.tau)
            && frac(self.epsilon))
        {
            return Err(ConfigError::Invalid("fractions must lie in [0, 1]".into()));
        }
        if self.replay_capacity == 0 || self.batch_employee == 0 || self.batch_manager == 0 {
            return Err(ConfigError::Invalid(
                "capacities and batch sizes must be positive".into(),
            ));
        }
        if self.vocab <= crate::policy::features::RELATIONAL as usize
            || self.dim == 0
            || self.hidden == 0
        {
            return Err(ConfigError::Invalid(
                "vocab must exceed the reserved ids; dim and hidden positive".into(),
            ));
        }
        if !(self.temperature > 0.0) || !(self.lr_pretrain > 0.0) || !(self.lr_finetune > 0.0) {
            return Err(ConfigError::Invalid(
                "temperature and learning rates must be positive".into(),
            ));
        }
        if self.val_every == 0 || self.rollout_len == 0 {
            return Err(ConfigError::Invalid(
                "val_every and rollout_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_roundtrip_through_set() {
        let mut a = TrainConfig::default();
        a.lr_finetune = 2.5e-4;
        a.optimizer = OptimizerKind::Sgd;
        a.retry = false;
        let mut b = TrainConfig::default();
        for (k, v) in a.entries() {
            b.set(k, &v).unwrap();
        }
        assert_eq!(a, b);
        assert!(matches!(
            b.set("nope", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            b.set("tau", "x"),
            Err(ConfigError::BadValue { .. })
        ));
        b.tau = 2.0;
        assert!(b.validate().is_err());
    }
}
