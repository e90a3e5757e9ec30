use std::io::Cursor;

use craftplan::config::{parse_config, render_config};
use craftplan::formats::*;
use craftplan_core::harness::{initial_params, PipelineConfig, Variant};
use craftplan_core::policy::{OptimizerKind, PolicyParams, Shape};
use craftplan_core::subgoal::{build_phi, SubgoalMode};
use craftplan_core::tasks::{
    build_recipe_universe, generate_dataset, DatasetConfig, UniverseConfig,
};
use craftplan_core::training::TrainConfig;
use craftplan_core::world::ValidityClassifier;

fn small_dataset() -> (
    craftplan_core::tasks::RecipeUniverse,
    craftplan_core::tasks::Dataset,
) {
    let u = build_recipe_universe(&UniverseConfig::default(), 3).unwrap();
    let cfg = DatasetConfig {
        n_train: 40,
        n_val: 5,
        n_test: 5,
        noise_rate: 0.1,
    };
    let d = generate_dataset(&u, &cfg, 3).unwrap();
    (u, d)
}

#[test]
fn trajectories_roundtrip() {
    let (_, d) = small_dataset();
    let mut buf = Vec::new();
    write_records(&mut buf, &d.train).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: Vec<&str> = first
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    assert_eq!(keys, ["goal", "commands", "steps"]);
    assert_eq!(read_records(Cursor::new(buf)).unwrap(), d.train);
}

#[test]
fn tampered_trajectory_is_rejected() {
    let (_, d) = small_dataset();
    let mut buf = Vec::new();
    write_records(&mut buf, &d.train[..1]).unwrap();
    let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    let steps = v["steps"].as_array_mut().unwrap();
    let last = steps.last_mut().unwrap();
    last[1] = serde_json::json!({"nonexistent item": 3});
    let line = serde_json::to_string(&v).unwrap();
    assert!(read_records(Cursor::new(line)).is_err());
}

#[test]
fn universe_roundtrip() {
    let (u, _) = small_dataset();
    let mut buf = Vec::new();
    write_universe(&mut buf, &u).unwrap();
    assert_eq!(read_universe(Cursor::new(buf)).unwrap(), u);
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let cfg = TrainConfig {
        vocab: 64,
        ..TrainConfig::default()
    };
    let mut p = initial_params(&cfg, 20);
    p.shadow[3] = -1.0e-300;
    p.theta[5] = 1.0 / 3.0;
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &p).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with(CHECKPOINT_MAGIC));
    assert_eq!(read_checkpoint(Cursor::new(buf)).unwrap(), p);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let p = PolicyParams::zeros(Shape {
        vocab: 8,
        dim: 2,
        hidden: 3,
    });
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &p).unwrap();
    buf.truncate(buf.len() - 20);
    assert!(read_checkpoint(Cursor::new(buf)).is_err());
    assert!(read_checkpoint(Cursor::new("craftplan-checkpoint v9\n")).is_err());
}

#[test]
fn remap_roundtrip() {
    let (u, _) = small_dataset();
    let SubgoalMode::Remap(r) = Variant::Remap(0.5).mode(&u, 3) else {
        panic!()
    };
    let mut buf = Vec::new();
    write_remap(&mut buf, &r).unwrap();
    let back = read_remap(Cursor::new(buf)).unwrap();
    assert_eq!(back.pairs(), r.pairs());
    assert_eq!(back.fraction(), 0.5);
}

#[test]
fn classifier_roundtrip() {
    let c = ValidityClassifier {
        weights: [0.5, -1.25, 3.0, 0.0, 1e-7, -2.0, 0.1, 0.2, 0.3],
        threshold: 0.5,
        held_out_accuracy: 0.97,
    };
    let mut buf = Vec::new();
    write_classifier(&mut buf, &c).unwrap();
    assert_eq!(read_classifier(Cursor::new(buf)).unwrap(), c);
}

#[test]
fn phi_files_list_subgoals() {
    let (_, d) = small_dataset();
    let phi = build_phi(&d.train, &SubgoalMode::Llm);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_phi(&mut a, &mut b, &phi, &d.train).unwrap();
    let sg = read_phi_subgoals(Cursor::new(a)).unwrap();
    assert_eq!(sg.len(), phi.phi.len());
    assert!(sg.iter().zip(&phi.phi).all(|(g, e)| *g == e.subgoal));
    let sg0 = read_phi_subgoals(Cursor::new(b)).unwrap();
    assert!(sg0.iter().zip(&phi.phi0).all(|(g, e)| *g == e.subgoal));
}

#[test]
fn config_roundtrip_and_errors() {
    let mut cfg = PipelineConfig::default();
    cfg.dataset.n_train = 123;
    cfg.train.lr_finetune = 2.5e-4;
    cfg.train.optimizer = OptimizerKind::Sgd;
    cfg.train.retry = false;
    let text = render_config(&cfg);
    assert_eq!(parse_config(&text).unwrap(), cfg);
    assert!(parse_config("tau = 0.2 # shadow rate\n\nseed=4").is_ok());
    assert!(parse_config("no_such_key = 1").is_err());
    assert!(parse_config("tau = fast").is_err());
    assert!(parse_config("tau").is_err());
}
