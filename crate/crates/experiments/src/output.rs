//! File writers. Time series and tables are CSV; episodes and training
//! histories are JSON lines, one object per line.
//!
//! `indicators.csv`: `seed,arm,t,<indicator>...` with `t = 0` the state after reset.
//! `actions_<label>_<agent>.csv`: `epoch,a0,a1,...`, the epoch's mean action.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use mafe_core::trainer::EpochRecord;
use mafe_core::{MafeError, Result};

use crate::studies::{Arm, PairedRun};

fn csv_err(e: csv::Error) -> MafeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MafeError::Io(io),
        other => MafeError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| MafeError::Io(e.into()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of serializable flat records.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Indicator traces of labelled runs: `(seed, arm, run)`.
pub fn write_indicators(path: &Path, arms: &[(u64, &str, &Arm)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let Some(first) = arms.first().and_then(|(_, _, a)| a.indicators.first()) else {
        return Ok(());
    };
    let mut header = vec!["seed".to_string(), "arm".into(), "t".into()];
    header.extend(first.iter().map(|(k, _)| k.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for (seed, label, arm) in arms {
        for (t, snap) in arm.indicators.iter().enumerate() {
            let mut rec = vec![seed.to_string(), label.to_string(), t.to_string()];
            rec.extend(snap.iter().map(|(_, v)| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Both arms of every paired run.
pub fn paired_arms(runs: &[PairedRun]) -> Vec<(u64, &'static str, &Arm)> {
    runs.iter()
        .flat_map(|r| [(r.seed, "baseline", &r.baseline), (r.seed, "intervened", &r.intervened)])
        .collect()
}

/// Per-epoch mean action of one agent.
pub fn action_table(history: &[EpochRecord], agent: usize) -> Vec<Vec<f64>> {
    history.iter().map(|r| r.mean_actions.get(agent).cloned().unwrap_or_default()).collect()
}

/// One `actions_<label>_<agent>.csv` per agent.
pub fn export_actions(dir: &Path, label: &str, history: &[EpochRecord], agents: &[String]) -> Result<()> {
    for (a, name) in agents.iter().enumerate() {
        let table = action_table(history, a);
        let width = table.iter().map(Vec::len).max().unwrap_or(0);
        let mut w = csv::Writer::from_path(dir.join(format!("actions_{label}_{name}.csv"))).map_err(csv_err)?;
        let mut header = vec!["epoch".to_string()];
        header.extend((0..width).map(|i| format!("a{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for (rec, row) in history.iter().zip(&table) {
            let mut out = vec![rec.epoch.to_string()];
            out.extend(row.iter().map(|v| v.to_string()));
            out.resize(width + 1, String::new());
            w.write_record(&out).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, actions: Vec<Vec<f64>>) -> EpochRecord {
        EpochRecord {
            epoch,
            mean_success: 0.0,
            max_success: 0.0,
            elite_success: 0.0,
            mean_rewards: vec![],
            mean_fairness: vec![],
            mean_actions: actions,
        }
    }

    #[test]
    fn action_csv_has_one_row_per_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let hist: Vec<_> = (0..3).map(|e| record(e, vec![vec![0.2, 0.8], vec![0.5]])).collect();
        export_actions(dir.path(), "x", &hist, &["planner".into(), "insurer".into()]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("actions_x_planner.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "epoch,a0,a1");
        assert_eq!(lines[1], "0,0.2,0.8");
        assert_eq!(lines[1..].iter().collect::<std::collections::BTreeSet<_>>().len(), 3);
    }

    #[test]
    fn jsonl_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.jsonl");
        write_jsonl(&p, &[record(0, vec![]), record(1, vec![])]).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap().lines().count(), 2);
    }
}
