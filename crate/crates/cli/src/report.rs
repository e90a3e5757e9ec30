//! CSV training logs, ablation rows and the report table and curves.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use craftplan_core::harness::{SnapshotPoint, VariantScore};
use craftplan_core::training::{LogRow, PHASE_FINETUNE_EMPLOYEE, PHASE_FINETUNE_MANAGER};

pub const LOG_HEADER: [&str; 6] = [
    "iter",
    "phase",
    "success_rate",
    "loss",
    "buffer_size",
    "seed",
];
pub const ROW_HEADER: [&str; 8] = [
    "variant",
    "seed",
    "status",
    "success",
    "pretrained_success",
    "subgoal_success",
    "employee_subgoal_success",
    "records_dropped",
];
pub const SNAPSHOT_HEADER: [&str; 4] = ["seed", "fraction", "subgoal_success", "success"];
pub const TABLE_HEADER: [&str; 8] = [
    "variant",
    "seeds",
    "success_mean",
    "success_std",
    "pretrained_success_mean",
    "subgoal_success_mean",
    "employee_subgoal_success_mean",
    "absent",
];
pub const CURVE_HEADER: [&str; 5] = ["curve", "seed", "checkpoint", "x", "y"];

fn f(x: f64) -> String {
    format!("{x:.6}")
}

/// Appends rows, writing the header when the file is new.
pub fn append_log(path: &Path, rows: &[LogRow]) -> anyhow::Result<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(LOG_HEADER)?;
    }
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.phase.to_string(),
            f(r.success_rate),
            f(r.loss),
            r.buffer_size.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A logged row as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub phase: String,
    pub success_rate: f64,
    pub seed: u64,
}

pub fn read_log(path: &Path) -> anyhow::Result<Vec<LogEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(LogEntry {
            iter: rec[0].parse()?,
            phase: rec[1].to_string(),
            success_rate: rec[2].parse()?,
            seed: rec[5].parse()?,
        });
    }
    Ok(out)
}

/// An ablation row; `None` marks a variant that could not be produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub score: Option<VariantScore>,
}

pub fn write_rows(path: &Path, rows: &[AblationRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROW_HEADER)?;
    for r in rows {
        match &r.score {
            Some(s) => w.write_record([
                s.variant.clone(),
                s.seed.to_string(),
                "ok".into(),
                f(s.success),
                f(s.pretrained_success),
                f(s.subgoal_success),
                f(s.employee_subgoal_success),
                s.records_dropped.to_string(),
            ])?,
            None => w.write_record([
                r.variant.clone(),
                r.seed.to_string(),
                "absent".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> anyhow::Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let variant = rec[0].to_string();
        let seed: u64 = rec[1].parse()?;
        let score = if &rec[2] == "ok" {
            Some(VariantScore {
                variant: variant.clone(),
                seed,
                success: rec[3].parse()?,
                pretrained_success: rec[4].parse()?,
                subgoal_success: rec[5].parse()?,
                employee_subgoal_success: rec[6].parse()?,
                records_dropped: rec[7].parse()?,
            })
        } else {
            None
        };
        out.push(AblationRow {
            variant,
            seed,
            score,
        });
    }
    Ok(out)
}

pub fn write_snapshots(path: &Path, points: &[(u64, SnapshotPoint)]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SNAPSHOT_HEADER)?;
    for (seed, p) in points {
        w.write_record([
            seed.to_string(),
            f(p.fraction),
            f(p.subgoal_success),
            f(p.success),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshots(path: &Path) -> anyhow::Result<Vec<(u64, SnapshotPoint)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((
            rec[0].parse()?,
            SnapshotPoint {
                fraction: rec[1].parse()?,
                subgoal_success: rec[2].parse()?,
                success: rec[3].parse()?,
            },
        ));
    }
    Ok(out)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

/// Writes `table.csv` (one row per variant, averaged over seeds, in first-seen
/// order) and `curves.csv` (validation curves from fine-tuning and the employee
/// snapshot sweep). In the sweep rows `x` is per-proposal subgoal success and `y`
/// is ultimate success; counting only each episode's first subgoal is the
/// other reasonable denominator and is not reported.
pub fn emit_report(
    rows: &[AblationRow],
    log: &[LogEntry],
    snapshots: &[(u64, SnapshotPoint)],
    dir: &Path,
) -> anyhow::Result<(PathBuf, PathBuf)> {
    anyhow::ensure!(!rows.is_empty(), "the report needs at least one row");
    fs::create_dir_all(dir)?;
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&AblationRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.variant.as_str()) {
            order.push(&r.variant);
        }
        groups.entry(&r.variant).or_default().push(r);
    }
    let table = dir.join("table.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record(TABLE_HEADER)?;
    for v in order {
        let g = &groups[v];
        let ok: Vec<&VariantScore> = g.iter().filter_map(|r| r.score.as_ref()).collect();
        let col = |pick: fn(&VariantScore) -> f64| ok.iter().map(|s| pick(s)).collect::<Vec<_>>();
        let (sm, ss) = mean_std(&col(|s| s.success));
        w.write_record([
            v.to_string(),
            ok.len().to_string(),
            f(sm),
            f(ss),
            f(mean_std(&col(|s| s.pretrained_success)).0),
            f(mean_std(&col(|s| s.subgoal_success)).0),
            f(mean_std(&col(|s| s.employee_subgoal_success)).0),
            (g.len() - ok.len()).to_string(),
        ])?;
    }
    w.flush()?;

    let curves = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&curves)?;
    w.write_record(CURVE_HEADER)?;
    for e in log {
        let name = match e.phase.as_str() {
            PHASE_FINETUNE_MANAGER => "validation-manager",
            PHASE_FINETUNE_EMPLOYEE => "validation-employee",
            _ => continue,
        };
        w.write_record([
            name.into(),
            e.seed.to_string(),
            e.iter.to_string(),
            e.iter.to_string(),
            f(e.success_rate),
        ])?;
    }
    for (seed, p) in snapshots {
        w.write_record([
            "subgoal-vs-ultimate".into(),
            seed.to_string(),
            f(p.fraction),
            f(p.subgoal_success),
            f(p.success),
        ])?;
    }
    w.flush()?;
    Ok((table, curves))
}
