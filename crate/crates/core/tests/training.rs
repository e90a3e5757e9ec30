use std::sync::Arc;

use craftplan_core::policy::{
    weighted_nll_grad, Optimizer, PolicyParams, Section, Sgd, Shape, WeightedExample,
};
use craftplan_core::rng::seeded;
use craftplan_core::subgoal::{build_phi, SegmentHead, Subgoal, SubgoalMode};
use craftplan_core::tasks::{
    build_recipe_universe, generate_dataset, inject_noise, optimal_plan, sample_task, Dataset,
    DatasetConfig, UniverseConfig,
};
use craftplan_core::training::{
    employee_example, finetune_employee, trajectory_weights, TrainConfig,
};
use rand::seq::SliceRandom;

fn small_dataset(seed: u64, n_train: usize) -> Dataset {
    let universe = build_recipe_universe(&UniverseConfig::default(), seed).unwrap();
    let cfg = DatasetConfig {
        n_train,
        n_val: 20,
        n_test: 20,
        noise_rate: 0.1,
    };
    generate_dataset(&universe, &cfg, seed).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        vocab: 4096,
        dim: 8,
        hidden: 8,
        val_episodes: 10,
        val_every: 1000,
        ..TrainConfig::default()
    }
}

#[test]
fn noise_rate_matches_setting() {
    let universe = build_recipe_universe(&UniverseConfig::default(), 3).unwrap();
    let goals: Vec<String> = universe.craftables().map(str::to_string).collect();
    let mut rng = seeded(3);
    let (mut planned, mut inserted) = (0usize, 0usize);
    for _ in 0..10_000 {
        let task = sample_task(&universe, goals.choose(&mut rng).unwrap(), &mut rng).unwrap();
        let plan = optimal_plan(&task.instruction).unwrap();
        let noisy = inject_noise(&plan, 0.1, &task.instruction, &mut rng);
        planned += plan.len();
        inserted += noisy.len() - plan.len();
    }
    let rate = inserted as f64 / planned as f64;
    assert!((rate - 0.1).abs() <= 0.01, "{rate}");
}

#[test]
fn successful_trajectory_weights_sum_to_one() {
    for len in 1..=500 {
        let s: f64 = trajectory_weights(len).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "{len}: {s}");
    }
}

#[test]
fn failing_waves_change_nothing_and_keep_some_failures() {
    let data = small_dataset(1, 50);
    let record = &data.train[0];
    let heads: Vec<SegmentHead> = (0..4)
        .map(|i| SegmentHead {
            state: craftplan_core::Inventory::new(),
            history: Default::default(),
            manager_history: Default::default(),
            subgoal: Subgoal::single("item nobody can make", 1),
            instruction: Arc::new(record.instruction.clone()),
            index: i,
        })
        .collect();
    let cfg = TrainConfig {
        finetune_iters_employee: 150,
        ..small_config()
    };
    let params = PolicyParams::init(cfg.shape(), &mut seeded(5));
    let out = finetune_employee(params.clone(), &heads, &heads, &cfg, &mut seeded(6)).unwrap();
    assert_eq!(out.skipped, 150);
    assert_eq!(out.updates, 0);
    assert_eq!(out.params.theta, params.theta);
    assert_eq!(out.params.shadow, params.shadow);
    let kept = out.failed_kept as f64 / out.failed_seen as f64;
    assert_eq!(out.failed_seen, 150 * cfg.n_e);
    assert!((kept - 0.15).abs() <= 0.03, "{kept}");
}

#[test]
fn replay_share_after_threshold() {
    let data = small_dataset(2, 300);
    let phi = build_phi(&data.train, &SubgoalMode::Llm);
    let cfg = TrainConfig {
        finetune_iters_employee: 120,
        replay_threshold: 300,
        ..small_config()
    };
    let params = PolicyParams::init(cfg.shape(), &mut seeded(7));
    let out = finetune_employee(params, &phi.phi0, &phi.phi0, &cfg, &mut seeded(8)).unwrap();
    assert!(out.replay_slots > 5000, "{}", out.replay_slots);
    let share = out.replay_drawn as f64 / out.replay_slots as f64;
    assert!((share - 0.9).abs() <= 0.02, "{share}");
    assert_eq!(
        out.snapshots.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
        vec![30, 60, 90, 120]
    );
}

#[test]
fn small_step_pretraining_loss_is_monotone() {
    let data = small_dataset(4, 100);
    let phi = build_phi(&data.train, &SubgoalMode::Llm);
    let shape = Shape {
        vocab: 4096,
        dim: 8,
        hidden: 8,
    };
    let batch: Vec<WeightedExample> = phi
        .phi
        .iter()
        .filter_map(|e| employee_example(e, shape.vocab as u32))
        .take(300)
        .collect();
    let mut params = PolicyParams::init(shape, &mut seeded(9));
    let mut opt = Sgd { lr: 1e-2 };
    let frozen = shape.range(Section::Embeddings);
    let mut prev = f64::INFINITY;
    for _ in 0..30 {
        let (loss, mut grad) = weighted_nll_grad(&params, &batch).unwrap();
        assert!(loss <= prev + 1e-12, "{loss} > {prev}");
        prev = loss;
        grad[frozen.clone()].iter_mut().for_each(|g| *g = 0.0);
        opt.step(&mut params.theta, &grad);
    }
}
