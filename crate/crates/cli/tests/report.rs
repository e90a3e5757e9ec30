use std::fs;

use craftplan::report::*;
use craftplan_core::harness::{SnapshotPoint, VariantScore};
use craftplan_core::training::{
    LogRow, PHASE_FINETUNE_EMPLOYEE, PHASE_FINETUNE_MANAGER, PHASE_PRETRAIN_EMPLOYEE,
};

fn score(variant: &str, seed: u64, success: f64) -> VariantScore {
    VariantScore {
        variant: variant.into(),
        seed,
        success,
        pretrained_success: success - 0.1,
        subgoal_success: 0.9,
        employee_subgoal_success: 0.95,
        records_dropped: 2,
    }
}

fn row(variant: &str, seed: u64, success: Option<f64>) -> AblationRow {
    AblationRow {
        variant: variant.into(),
        seed,
        score: success.map(|s| score(variant, seed, s)),
    }
}

#[test]
fn one_row_gives_table_and_empty_curves() {
    let d = tempfile::tempdir().unwrap();
    let (t, c) = emit_report(&[row("full", 0, Some(0.5))], &[], &[], d.path()).unwrap();
    assert_eq!(fs::read_dir(d.path()).unwrap().count(), 2);
    let table = fs::read_to_string(t).unwrap();
    assert_eq!(table.lines().next().unwrap(), TABLE_HEADER.join(","));
    assert_eq!(table.lines().count(), 2);
    assert_eq!(
        fs::read_to_string(c).unwrap().trim(),
        CURVE_HEADER.join(",")
    );
    assert!(emit_report(&[], &[], &[], d.path()).is_err());
}

#[test]
fn rows_roundtrip_with_absent_entries() {
    let d = tempfile::tempdir().unwrap();
    let rows = vec![
        row("full", 0, Some(0.75)),
        row("hand", 0, None),
        row("full", 1, Some(0.25)),
    ];
    let p = d.path().join("rows.csv");
    write_rows(&p, &rows).unwrap();
    assert_eq!(read_rows(&p).unwrap(), rows);
    let (t, _) = emit_report(&rows, &[], &[], &d.path().join("r")).unwrap();
    let table = fs::read_to_string(t).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("full,2,0.500000,0.250000,"));
    assert!(lines[2].starts_with("hand,0,"));
    assert!(lines[2].ends_with(",1"));
}

#[test]
fn curves_follow_logged_validation_points() {
    let d = tempfile::tempdir().unwrap();
    let log_path = d.path().join("log.csv");
    let mk = |iter, phase| LogRow {
        iter,
        phase,
        success_rate: 0.5,
        loss: 1.0,
        buffer_size: 3,
        seed: 7,
    };
    let log = [
        mk(1, PHASE_PRETRAIN_EMPLOYEE),
        mk(0, PHASE_FINETUNE_EMPLOYEE),
        mk(10, PHASE_FINETUNE_EMPLOYEE),
        mk(0, PHASE_FINETUNE_MANAGER),
    ];
    append_log(&log_path, &log[..2]).unwrap();
    append_log(&log_path, &log[2..]).unwrap();
    let entries = read_log(&log_path).unwrap();
    assert_eq!(entries.len(), 4);
    assert_eq!(
        fs::read_to_string(&log_path)
            .unwrap()
            .matches("iter,phase")
            .count(),
        1
    );
    let snaps = vec![
        (
            7,
            SnapshotPoint {
                fraction: 0.0,
                subgoal_success: 0.6,
                success: 0.4,
            },
        ),
        (
            7,
            SnapshotPoint {
                fraction: 1.0,
                subgoal_success: 0.9,
                success: 0.8,
            },
        ),
    ];
    let sp = d.path().join("snaps.csv");
    write_snapshots(&sp, &snaps).unwrap();
    assert_eq!(read_snapshots(&sp).unwrap(), snaps);
    let rows = [row("full", 7, Some(0.8))];
    let (_, c) = emit_report(&rows, &entries, &snaps, &d.path().join("a")).unwrap();
    let curves = fs::read_to_string(&c).unwrap();
    assert_eq!(curves.matches("validation-").count(), 3);
    assert_eq!(curves.matches("subgoal-vs-ultimate").count(), 2);
    let (t2, c2) = emit_report(&rows, &entries, &snaps, &d.path().join("b")).unwrap();
    assert_eq!(fs::read(c2).unwrap(), curves.into_bytes());
    assert_eq!(
        fs::read(t2).unwrap(),
        fs::read(d.path().join("a/table.csv")).unwrap()
    );
}
