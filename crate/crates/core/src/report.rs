//! Run reports and their on-disk forms.
//!
//! `metrics.jsonl` holds one object per round followed by one summary object;
//! it is fully determined by `(config, seed)`. Wall-clock timings go to a
//! separate `timing.jsonl` so the metrics file stays byte-reproducible. The
//! schema is documented in `docs/metrics.md`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostLedger;
use crate::error::{Error, Result};
use crate::protocol::StopReason;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Score-only runs: client whose model became global.
    pub best_client_id: Option<usize>,
    /// Score-only runs: the winning score of this round.
    pub best_score: Option<f32>,
    /// Score-only runs: lowest score seen in any round so far.
    pub best_score_ever: Option<f32>,
    pub up_bytes: u64,
    pub down_bytes: u64,
    /// SHA-256 of the global parameters after the round.
    pub global_digest: String,
    #[serde(skip)]
    pub wall_ms: f64,
}

/// Per-round client view: digests of every model a client held at the end of
/// the round and, for score-only runs, the decoded score reports.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundTrace {
    pub uploads: Vec<(usize, String)>,
    pub scores: Vec<(usize, f32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub strategy: String,
    pub seed: u64,
    pub parameter_count: usize,
    pub model_bytes: u64,
    pub rows: Vec<RoundRow>,
    pub stop_reason: StopReason,
    pub ledger: CostLedger,
    pub trace: Vec<RoundTrace>,
    pub total_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: String,
    pub seed: u64,
    pub rounds_completed: usize,
    pub stop_reason: StopReason,
    pub parameter_count: usize,
    pub model_bytes: u64,
    pub num_clients: u64,
    pub fraction: f64,
    pub epsilon: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub best_accuracy: f64,
    pub total_up_bytes: u64,
    pub total_down_bytes: u64,
    pub expected_up_bytes: u64,
    pub ledger_ok: bool,
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    summary: &'a Summary,
}

impl RunReport {
    pub fn rounds(&self) -> usize {
        self.rows.len()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.test_accuracy)
    }

    pub fn total_up(&self) -> u64 {
        self.rows.iter().map(|r| r.up_bytes).sum()
    }

    pub fn total_down(&self) -> u64 {
        self.rows.iter().map(|r| r.down_bytes).sum()
    }

    pub fn summary(&self) -> Summary {
        let last = self.rows.last();
        Summary {
            strategy: self.strategy.clone(),
            seed: self.seed,
            rounds_completed: self.rounds(),
            stop_reason: self.stop_reason,
            parameter_count: self.parameter_count,
            model_bytes: self.model_bytes,
            num_clients: self.ledger.num_clients,
            fraction: self.ledger.fraction,
            epsilon: self.ledger.epsilon,
            final_accuracy: last.map_or(0.0, |r| r.test_accuracy),
            final_loss: last.map_or(0.0, |r| r.test_loss),
            best_accuracy: self
                .rows
                .iter()
                .map(|r| r.test_accuracy)
                .fold(0.0, f64::max),
            total_up_bytes: self.total_up(),
            total_down_bytes: self.total_down(),
            expected_up_bytes: self.ledger.expected_total_up(),
            ledger_ok: self.ledger.verify().is_ok(),
        }
    }

    /// Round rows, one JSON object per line, then `{"summary": {...}}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("rows serialize"));
            out.push('\n');
        }
        let summary = self.summary();
        out.push_str(
            &serde_json::to_string(&SummaryLine { summary: &summary }).expect("summary serializes"),
        );
        out.push('\n');
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "round,train_loss,test_accuracy,test_loss,best_client_id,best_score,up_bytes,down_bytes\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.round,
                r.train_loss,
                r.test_accuracy,
                r.test_loss,
                r.best_client_id.map(|v| v.to_string()).unwrap_or_default(),
                r.best_score.map(|v| v.to_string()).unwrap_or_default(),
                r.up_bytes,
                r.down_bytes
            ));
        }
        out
    }

    pub fn timing_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::json!({"round": r.round, "wall_ms": r.wall_ms}).to_string());
            out.push('\n');
        }
        out.push_str(&serde_json::json!({"total_wall_ms": self.total_wall_ms}).to_string());
        out.push('\n');
        out
    }

    /// Writes `metrics.jsonl`, `timing.jsonl` and optionally `metrics.csv` into `dir`.
    pub fn write_to(&self, dir: &Path, csv: bool) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("metrics.jsonl"), &self.to_jsonl())?;
        write_file(&dir.join("timing.jsonl"), &self.timing_jsonl())?;
        if csv {
            write_file(&dir.join("metrics.csv"), &self.to_csv())?;
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}
