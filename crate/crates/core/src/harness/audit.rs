//! Post-hoc checks over episode logs: every applied gain is a library entry,
//! switches happen only on dwell boundaries, and the logged `V` agrees with
//! the logged error and the entry's certificate.

use std::path::{Path, PathBuf};

use crate::certification::AdmissibleLibrary;
use crate::error::Result;
use crate::harness::csv_io::{parse_metadata, read_episode_csv};
use crate::harness::episode::EpisodeLog;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub rows: usize,
    /// Rows whose gain vector is not bit-identical to any library entry.
    pub off_library: usize,
    /// Rows whose action index disagrees with the entry their gains match.
    pub index_mismatch: usize,
    /// Gain changes at a row index that is not a multiple of the dwell.
    pub dwell_violations: usize,
    /// Largest relative deviation of the `V` column from `z' P z`.
    pub max_v_error: f64,
}

impl AuditReport {
    /// Shield and dwell both hold and `V` is consistent to 1e-9.
    pub fn passed(&self) -> bool {
        self.off_library == 0 && self.index_mismatch == 0 && self.dwell_violations == 0 && self.max_v_error <= 1e-9
    }

    pub fn merge(&mut self, other: &AuditReport) {
        self.rows += other.rows;
        self.off_library += other.off_library;
        self.index_mismatch += other.index_mismatch;
        self.dwell_violations += other.dwell_violations;
        self.max_v_error = self.max_v_error.max(other.max_v_error);
    }
}

pub fn audit_episode(log: &EpisodeLog, library: &AdmissibleLibrary) -> AuditReport {
    let mut report = AuditReport {
        rows: log.rows.len(),
        ..Default::default()
    };
    let dwell = log.dwell_steps.max(1);
    for (i, row) in log.rows.iter().enumerate() {
        match library.find(&row.gain) {
            None => report.off_library += 1,
            Some(idx) => {
                if log.off_library || idx != row.action {
                    report.index_mismatch += 1;
                }
                if let Some(p) = library.entries[idx].certificate.lyapunov.as_ref().map(|l| l.p) {
                    let v = (row.z.transpose() * p * row.z)[0];
                    let err = (row.v - v).abs() / v.abs().max(f64::MIN_POSITIVE);
                    let err = if row.v == v { 0.0 } else { err };
                    report.max_v_error = report.max_v_error.max(if err.is_nan() { f64::INFINITY } else { err });
                }
            }
        }
        if i > 0 && i % dwell != 0 {
            let prev = &log.rows[i - 1].gain;
            let same = prev
                .as_slice()
                .iter()
                .zip(row.gain.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                report.dwell_violations += 1;
            }
        }
    }
    report
}

/// Every `*.csv` below `dir` whose metadata marks it as an episode log.
pub fn episode_csvs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let first = std::fs::read_to_string(&path)?.lines().next().unwrap_or_default().to_string();
                let is_episode = parse_metadata(&first)
                    .map(|m| m.iter().any(|(k, v)| k == "kind" && v == "episode"))
                    .unwrap_or(false);
                if is_episode {
                    found.push(path);
                }
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Audits every episode CSV below `dir`, returning per-file reports.
pub fn audit_directory(dir: &Path, library: &AdmissibleLibrary) -> Result<Vec<(PathBuf, AuditReport)>> {
    episode_csvs(dir)?
        .into_iter()
        .map(|p| {
            let log = read_episode_csv(&p)?;
            Ok((p, audit_episode(&log, library)))
        })
        .collect()
}
