//! Output files. Every file is written to a temporary sibling and renamed
//! into place, and text outputs start with a `# config_digest=` comment.

use std::io::Write;
use std::path::Path;

use crate::error::{McaError, Result};
use crate::train::{DriftPoint, ExperimentLog};

fn io_err(path: &Path, e: impl std::fmt::Display) -> McaError {
    McaError::Data(format!("{}: {e}", path.display()))
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Text file with the digest comment prepended.
pub fn write_text(path: &Path, digest: &str, body: &str) -> Result<()> {
    write_atomic(path, with_digest(digest, body).as_bytes())
}

pub fn with_digest(digest: &str, body: &str) -> String {
    format!("# config_digest={digest}\n{body}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub const EPOCH_HEADER: &str = "epoch,train_acc,test_acc,loss,set_pulses,reset_pulses,chi_writes,sim_time_s";
pub const DRIFT_HEADER: &str = "t_s,train_acc,test_acc";

/// Per-epoch table; event counts are per epoch. An empty `train_acc` means
/// the training set was not evaluated.
pub fn epochs_csv(log: &ExperimentLog) -> String {
    let mut s = format!("{EPOCH_HEADER}\n");
    for e in &log.epochs {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.epoch,
            opt(e.train_acc),
            e.test_acc,
            e.loss,
            e.counters.set_pulses,
            e.counters.reset_pulses,
            e.counters.chi_writes,
            e.sim_time_s
        ));
    }
    s
}

pub fn drift_csv(points: &[DriftPoint]) -> String {
    let mut s = format!("{DRIFT_HEADER}\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.t_s, opt(p.train_acc), p.test_acc));
    }
    s
}

/// Feature vectors, one comma-separated row per sample. A first line that
/// does not parse as numbers is taken as a header; `#` lines are comments.
pub fn parse_feature_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if rows.is_empty() && n == first_data_line(text) => continue,
            Err(_) => {
                return Err(McaError::Data(format!(
                    "feature CSV line {} is not numeric: `{line}`",
                    n + 1
                )))
            }
        }
    }
    if let Some(w) = rows.first().map(Vec::len) {
        if let Some(k) = rows.iter().position(|r| r.len() != w) {
            return Err(McaError::DimensionMismatch {
                what: "feature CSV row",
                expected: w,
                got: rows[k].len(),
            });
        }
    }
    Ok(rows)
}

fn first_data_line(text: &str) -> usize {
    text.lines()
        .position(|l| !l.trim().is_empty() && !l.trim().starts_with('#'))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_text(&p, "abc", "x\n").unwrap();
        write_text(&p, "def", "y\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "# config_digest=def\ny\n");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn feature_csv() {
        assert_eq!(
            parse_feature_csv("a,b\n1,2\n3,4\n").unwrap(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0]]
        );
        assert_eq!(parse_feature_csv("# c\n1,2\n").unwrap(), vec![vec![1.0, 2.0]]);
        assert!(parse_feature_csv("1,2\nx,y\n").is_err());
        assert!(parse_feature_csv("1,2\n3\n").is_err());
    }

    #[test]
    fn drift_table() {
        let pts = [DriftPoint {
            t_s: 1.5,
            train_acc: None,
            test_acc: 0.25,
        }];
        assert_eq!(drift_csv(&pts), "t_s,train_acc,test_acc\n1.5,,0.25\n");
    }
}
