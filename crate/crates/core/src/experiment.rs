//! Experiment orchestration: data preparation, strategy dispatch and replicate matrices.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, Strategy};
use crate::cost;
use crate::data::{load_cifar_dir, make_synthetic, partition};
use crate::error::{Error, Result};
use crate::protocol::{run_fedavg, run_fedx, FederatedData};
use crate::report::{write_file, RunReport};
use crate::rng::{derive_seed, Stream};

/// Loads or generates the data a configuration asks for and shards it across clients.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<FederatedData<f32>> {
    let (train, test) = match cfg.data.source {
        DataSource::Synthetic => {
            let d = &cfg.data;
            let all = make_synthetic(
                d.samples + d.test_samples,
                d.dims,
                d.classes,
                d.separation,
                derive_seed(cfg.seed, Stream::Data, 0),
            )?;
            all.split_tail(d.test_samples)?
        }
        DataSource::Cifar10 => {
            let dir = cfg
                .data
                .cifar_dir
                .as_ref()
                .ok_or_else(|| Error::config("data.cifar_dir", "is required for CIFAR-10"))?;
            load_cifar_dir(dir)?
        }
    };
    let partition = partition(&train, cfg.num_clients, cfg.seed)?;
    Ok(FederatedData {
        train,
        test,
        partition,
    })
}

/// Runs one experiment in memory and checks its ledger against the cost model.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let fed = cfg.federation(data.train.dim(), data.train.num_classes());
    let report = match cfg.strategy {
        Strategy::FedAvg => run_fedavg(&fed, &data)?,
        Strategy::FedBwo | Strategy::HillClimb => run_fedx(&fed, &data, cfg.strategy.name())?,
    };
    cost::ledger_assert(&report)?;
    Ok(report)
}

/// [`simulate`], then writes the report files into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let report = simulate(cfg)?;
    report.write_to(out_dir, cfg.csv)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub total_up_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub name: String,
    pub strategy: Strategy,
    pub fraction: f64,
    pub repeats: usize,
    pub mean_rounds: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_up_bytes: f64,
    /// Cost relative to the FedAvg `C = 1` member; `None` without such a member.
    pub normalized_cost: Option<f64>,
    pub replicates: Vec<ReplicateResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTable {
    pub baseline: Option<String>,
    pub rows: Vec<MatrixRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every named configuration `repeats` times with seeds `seed + r`.
///
/// Score-only rows are normalized by `mean_rounds / (baseline_rounds * N)`;
/// FedAvg rows by their upload bytes relative to the baseline.
pub fn run_matrix(
    configs: &[(String, ExperimentConfig)],
    repeats: usize,
    out_dir: Option<&Path>,
) -> Result<MatrixTable> {
    if repeats < 1 {
        return Err(Error::config("repeats", "must be at least 1"));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (name, base) in configs {
        let mut replicates = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut cfg = base.clone();
            cfg.seed = base.seed.wrapping_add(r as u64);
            let report = match out_dir {
                Some(dir) => run_experiment(&cfg, &dir.join(name).join(format!("rep{r}")))?,
                None => simulate(&cfg)?,
            };
            let s = report.summary();
            replicates.push(ReplicateResult {
                seed: cfg.seed,
                rounds: s.rounds_completed,
                final_accuracy: s.final_accuracy,
                final_loss: s.final_loss,
                total_up_bytes: s.total_up_bytes,
            });
        }
        let acc: Vec<f64> = replicates.iter().map(|r| r.final_accuracy).collect();
        let loss: Vec<f64> = replicates.iter().map(|r| r.final_loss).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_loss, std_loss) = mean_std(&loss);
        let n = replicates.len() as f64;
        rows.push(MatrixRow {
            name: name.clone(),
            strategy: base.strategy,
            fraction: base.fraction,
            repeats,
            mean_rounds: replicates.iter().map(|r| r.rounds as f64).sum::<f64>() / n,
            mean_accuracy,
            std_accuracy,
            mean_loss,
            std_loss,
            mean_up_bytes: replicates
                .iter()
                .map(|r| r.total_up_bytes as f64)
                .sum::<f64>()
                / n,
            normalized_cost: None,
            replicates,
        });
    }

    let baseline = rows
        .iter()
        .position(|r| r.strategy == Strategy::FedAvg && r.fraction == 1.0);
    if let Some(b) = baseline {
        let (base_rounds, base_up) = (rows[b].mean_rounds, rows[b].mean_up_bytes);
        let clients = configs[b].1.num_clients as f64;
        for row in &mut rows {
            row.normalized_cost = Some(match row.strategy {
                Strategy::FedAvg => row.mean_up_bytes / base_up,
                Strategy::FedBwo | Strategy::HillClimb => row.mean_rounds / (base_rounds * clients),
            });
        }
    }
    let table = MatrixTable {
        baseline: baseline.map(|b| rows[b].name.clone()),
        rows,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(&table).expect("table serializes");
        write_file(&dir.join("matrix.json"), &(json + "\n"))?;
        write_file(&dir.join("matrix.txt"), &table.render())?;
    }
    Ok(table)
}

impl MatrixTable {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<20} {:<10} {:>5} {:>4} {:>7} {:>16} {:>16} {:>14} {:>10}\n",
            "config",
            "strategy",
            "C",
            "reps",
            "rounds",
            "accuracy",
            "loss",
            "up bytes",
            "norm cost"
        );
        for r in &self.rows {
            let norm = r
                .normalized_cost
                .map_or_else(|| "n/a".to_string(), |c| format!("{:.2}%", c * 100.0));
            out.push_str(&format!(
                "{:<20} {:<10} {:>5.2} {:>4} {:>7.1} {:>8.4}±{:<7.4} {:>8.4}±{:<7.4} {:>14.0} {:>10}\n",
                r.name,
                r.strategy.name(),
                r.fraction,
                r.repeats,
                r.mean_rounds,
                r.mean_accuracy,
                r.std_accuracy,
                r.mean_loss,
                r.std_loss,
                r.mean_up_bytes,
                norm
            ));
        }
        out
    }
}

/// Default output directory: `$FEDSIM_OUT`, else `./out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("FEDSIM_OUT").map_or_else(|| PathBuf::from("out"), PathBuf::from)
}
