//! Report files: a JSON summary plus CSV tables, written with stable key
//! order and fixed formatting so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::metrics::SessionMetrics;
use super::HarnessError;
use crate::datasets::SessionSplit;
use crate::pil::PilLogEntry;

/// Everything the report writer needs from a finished run.
pub struct RunArtifacts<'a> {
    pub metrics: &'a SessionMetrics,
    pub split: &'a SessionSplit,
    /// Echo of the configuration the run used.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub digests: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    accuracies: &'a [f64],
    pd: f64,
    average_percent: f64,
    sessions: usize,
    config: &'a serde_json::Value,
    seeds: &'a BTreeMap<String, u64>,
    digests: &'a BTreeMap<String, String>,
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Write `metrics.json`, `sessions.csv`, and one `confusion_<s>.csv` per
/// session into `dir` (created if missing).
pub fn write_run_artifacts(dir: &Path, artifacts: &RunArtifacts) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;

    let m = artifacts.metrics;
    let file = MetricsFile {
        accuracies: &m.accuracies,
        pd: m.pd,
        average_percent: m.average_percent,
        sessions: m.session_count(),
        config: &artifacts.config,
        seeds: &artifacts.seeds,
        digests: &artifacts.digests,
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| HarnessError::Io(format!("metrics serialization: {e}")))?;
    write_text(&dir.join("metrics.json"), &format!("{json}\n"))?;

    let mut sessions_csv = String::from("session,classes,accuracy\n");
    for (s, acc) in m.accuracies.iter().enumerate() {
        let classes = artifacts.split.classes_up_to(s).len();
        sessions_csv.push_str(&format!("{s},{classes},{:.2}\n", acc * 100.0));
    }
    write_text(&dir.join("sessions.csv"), &sessions_csv)?;

    for (s, confusion) in m.confusions.iter().enumerate() {
        let ids = confusion.class_ids();
        let mut csv = String::from("class");
        for id in ids {
            csv.push_str(&format!(",{id}"));
        }
        csv.push('\n');
        for &row in ids {
            csv.push_str(&row.to_string());
            for &col in ids {
                csv.push_str(&format!(",{}", confusion.count(row, col)?));
            }
            csv.push('\n');
        }
        write_text(&dir.join(format!("confusion_{s}.csv")), &csv)?;
    }
    Ok(())
}

/// Write the episodic training log as `loss_log.csv`.
pub fn write_loss_log(dir: &Path, log: &[PilLogEntry]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let mut csv = String::from("iteration,loss,lr\n");
    for entry in log {
        csv.push_str(&format!(
            "{},{},{}\n",
            entry.iteration, entry.loss, entry.learning_rate
        ));
    }
    write_text(&dir.join("loss_log.csv"), &csv)
}
