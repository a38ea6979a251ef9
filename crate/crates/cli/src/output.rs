//! Run artifacts: `manifest.json`, `metrics.csv` and `summary.json`.
//!
//! The CSV has one row per (epoch, client) followed by an aggregate row with
//! `client_id = -1`. Columns are append-only; see [`CSV_COLUMNS`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dfl_core::sim::{first_exceeding, DataSource, ExperimentConfig, MetricsLog};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const CSV_COLUMNS: [&str; 10] = [
    "epoch",
    "client_id",
    "train_loss",
    "test_acc",
    "best_acc",
    "mean_acc",
    "dist_min",
    "dist_max",
    "consensus_iters",
    "floats_shared",
];

/// Accuracy levels (percent) reported in the summary's threshold table.
pub const THRESHOLDS: [f64; 4] = [90.0, 95.0, 98.0, 99.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub manifest: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            manifest: dir.join(MANIFEST_FILE),
            metrics: dir.join(METRICS_FILE),
            summary: dir.join(SUMMARY_FILE),
        }
    }
}

/// Everything needed to repeat a run, written before training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub version: String,
    pub seed: u64,
    /// Resolved config, including the data source actually used.
    pub config: ExperimentConfig,
    /// The same config in `key = value` form, readable by `dfl run --config`.
    pub config_text: String,
    pub data_source: String,
    pub outputs: OutputPaths,
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, config_text: String, outputs: OutputPaths) -> Self {
        let data_source = match &config.data.source {
            DataSource::Synth => "synth".to_string(),
            DataSource::Idx(dir) => format!("idx:{}", dir.display()),
        };
        Manifest {
            scenario: config.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            config_text,
            data_source,
            outputs,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub percent: f64,
    /// First epoch whose best-client accuracy exceeds `percent`.
    pub best_epoch: Option<usize>,
    /// Same, for the mean accuracy over clients.
    pub mean_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub epochs_run: usize,
    pub max_best_acc: f64,
    pub max_mean_acc: f64,
    pub final_best_acc: Option<f64>,
    pub final_mean_acc: Option<f64>,
    pub thresholds: Vec<Threshold>,
    pub total_floats_shared: u64,
    pub total_consensus_iters: usize,
    pub param_count: usize,
    pub client_sizes: Vec<usize>,
    pub local_steps: Vec<usize>,
    pub diverged_at: Option<usize>,
    pub warnings: Vec<String>,
}

impl Summary {
    pub fn from_log(log: &MetricsLog) -> Self {
        let best = log.best_accuracies();
        let mean = log.mean_accuracies();
        Summary {
            scenario: log.meta.name.clone(),
            epochs_run: log.epochs.len(),
            max_best_acc: log.max_best_acc(),
            max_mean_acc: log.max_mean_acc(),
            final_best_acc: best.last().copied(),
            final_mean_acc: mean.last().copied(),
            thresholds: THRESHOLDS
                .iter()
                .map(|&p| Threshold {
                    percent: p,
                    best_epoch: first_exceeding(&best, p),
                    mean_epoch: first_exceeding(&mean, p),
                })
                .collect(),
            total_floats_shared: log.total_floats_shared(),
            total_consensus_iters: log.total_consensus_iters(),
            param_count: log.meta.param_count,
            client_sizes: log.meta.client_sizes.clone(),
            local_steps: log.meta.local_steps.clone(),
            diverged_at: log.diverged_at,
            warnings: log.meta.warnings.clone(),
        }
    }
}

fn finite_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Write the per-epoch metrics table.
pub fn write_metrics_csv<W: Write>(out: W, log: &MetricsLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for e in &log.epochs {
        let shared = [
            e.best_acc.to_string(),
            e.mean_acc.to_string(),
            e.dist_min.to_string(),
            e.dist_max.to_string(),
            e.consensus_iters.to_string(),
            e.floats_shared.to_string(),
        ];
        let mut row = |client: String, loss: f64, acc: f64| -> Result<()> {
            let head = [e.epoch.to_string(), client, loss.to_string(), acc.to_string()];
            w.write_record(head.iter().chain(&shared))?;
            Ok(())
        };
        for c in &e.clients {
            row(c.client.to_string(), c.train_loss, c.test_acc)?;
        }
        row("-1".into(), finite_mean(e.clients.iter().map(|c| c.train_loss)), e.mean_acc)?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_csv_string(log: &MetricsLog) -> Result<String> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, log)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_manifest(manifest: &Manifest) -> Result<()> {
    write_json(&manifest.outputs.manifest, manifest)
}

/// Write the CSV and summary for a finished (or diverged) run.
pub fn write_results(paths: &OutputPaths, log: &MetricsLog) -> Result<Summary> {
    write_metrics_csv(fs::File::create(&paths.metrics)?, log)?;
    let summary = Summary::from_log(log);
    write_json(&paths.summary, &summary)?;
    Ok(summary)
}

/// `(epoch, value)` pairs of one column, aggregate rows only.
pub fn read_aggregate_column(path: &Path, column: &str) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::config(format!("{}: no column '{name}'", path.display())))
    };
    let (ei, ci, vi) = (find("epoch")?, find("client_id")?, find(column)?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if &rec[ci] != "-1" {
            continue;
        }
        let parse = |i: usize| {
            rec[i].parse::<f64>().map_err(|_| {
                CliError::config(format!("{}: bad number '{}'", path.display(), &rec[i]))
            })
        };
        out.push((parse(ei)? as usize, parse(vi)?));
    }
    Ok(out)
}
