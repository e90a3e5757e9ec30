//! Flat `key = value` configuration files.

use craftplan_core::harness::PipelineConfig;
use craftplan_core::training::ConfigError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: {source}")]
    Value { line: usize, source: ConfigError },
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: v.into(),
    })
}

/// Applies one setting. Training keys are the `TrainConfig` field names; the
/// universe and dataset sizes use their own field names.
pub fn apply(cfg: &mut PipelineConfig, key: &str, v: &str) -> Result<(), ConfigError> {
    let v = v.trim();
    match key {
        "n_items" => cfg.universe.n_items = num(key, v)?,
        "max_depth" => cfg.universe.max_depth = num(key, v)?,
        "max_ingredients" => cfg.universe.max_ingredients = num(key, v)?,
        "out_qty_min" => cfg.universe.out_qty_range.0 = num(key, v)?,
        "out_qty_max" => cfg.universe.out_qty_range.1 = num(key, v)?,
        "max_ingredient_qty" => cfg.universe.max_ingredient_qty = num(key, v)?,
        "n_train" => cfg.dataset.n_train = num(key, v)?,
        "n_val" => cfg.dataset.n_val = num(key, v)?,
        "n_test" => cfg.dataset.n_test = num(key, v)?,
        "noise_rate" => cfg.dataset.noise_rate = num(key, v)?,
        _ => cfg.train.set(key, v)?,
    }
    Ok(())
}

/// Parses a config file on top of the defaults. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigFileError> {
    let mut cfg = PipelineConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigFileError::Syntax { line: i + 1 })?;
        apply(&mut cfg, k.trim(), v).map_err(|source| ConfigFileError::Value {
            line: i + 1,
            source,
        })?;
    }
    cfg.train
        .validate()
        .map_err(|source| ConfigFileError::Value { line: 0, source })?;
    Ok(cfg)
}

/// Renders every setting, so a dumped config parses back to the same values.
pub fn render_config(cfg: &PipelineConfig) -> String {
    let mut out = String::new();
    let u = &cfg.universe;
    let d = &cfg.dataset;
    for (k, v) in [
        ("n_items", u.n_items.to_string()),
        ("max_depth", u.max_depth.to_string()),
        ("max_ingredients", u.max_ingredients.to_string()),
        ("out_qty_min", u.out_qty_range.0.to_string()),
        ("out_qty_max", u.out_qty_range.1.to_string()),
        ("max_ingredient_qty", u.max_ingredient_qty.to_string()),
        ("n_train", d.n_train.to_string()),
        ("n_val", d.n_val.to_string()),
        ("n_test", d.n_test.to_string()),
        ("noise_rate", d.noise_rate.to_string()),
    ] {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in cfg.train.entries() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}
