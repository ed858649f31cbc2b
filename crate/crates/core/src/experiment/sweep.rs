use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{baseline_for, execute, RunOutcome, RunSpec, RunStatus, RunVariant};
use super::{ExperimentConfig, ExperimentError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Noise,
    TrainSize,
    Ablation,
}

impl SweepKind {
    pub fn label(&self) -> &'static str {
        match self {
            SweepKind::Noise => "noise",
            SweepKind::TrainSize => "trainsize",
            SweepKind::Ablation => "ablation",
        }
    }
}

/// One line of a sweep CSV. Result rows carry every field needed to rerun
/// them; baseline rows use mode `random` and store the baseline RNG seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: String,
    pub experiment: String,
    pub sigma: f64,
    #[serde(rename = "D")]
    pub d_train: usize,
    pub mode: String,
    pub decay: bool,
    pub softmax: bool,
    pub static_decay: bool,
    pub replicate: usize,
    pub seed: u64,
    pub base_seed: u64,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub tau: f64,
    pub clip: Option<f64>,
    #[serde(rename = "D_test")]
    pub d_test: usize,
    pub config_hash: String,
    pub status: String,
    pub mean_f1: f64,
    pub std_f1: f64,
}

impl ResultRow {
    pub fn from_outcome(kind: SweepKind, o: &RunOutcome) -> Self {
        let s = &o.spec;
        ResultRow {
            kind: "result".into(),
            experiment: kind.label().into(),
            sigma: s.sigma,
            d_train: s.d_train,
            mode: s.variant.mode().into(),
            decay: s.variant.decay,
            softmax: s.variant.softmax,
            static_decay: s.variant.static_decay,
            replicate: s.replicate,
            seed: s.seed(),
            base_seed: s.base_seed,
            height: s.height,
            width: s.width,
            epochs: s.epochs,
            lr: s.lr,
            timesteps: s.timesteps,
            tau: s.tau,
            clip: s.clip,
            d_test: s.d_test,
            config_hash: format!("{:016x}", s.config_hash()),
            status: o.status.label().into(),
            mean_f1: o.report.mean(),
            std_f1: o.report.std(),
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.kind == "baseline"
    }

    /// The run this row describes. Baseline rows have none.
    pub fn spec(&self) -> Option<RunSpec> {
        if self.is_baseline() {
            return None;
        }
        Some(RunSpec {
            height: self.height,
            width: self.width,
            sigma: self.sigma,
            d_train: self.d_train,
            d_test: self.d_test,
            base_seed: self.base_seed,
            replicate: self.replicate,
            epochs: self.epochs,
            lr: self.lr,
            timesteps: self.timesteps,
            tau: self.tau,
            clip: self.clip,
            variant: RunVariant {
                feedback: self.mode == "feedback",
                decay: self.decay,
                softmax: self.softmax,
                static_decay: self.static_decay,
            },
        })
    }
}

fn baseline_row(
    kind: SweepKind,
    cfg: &ExperimentConfig,
    sigma: f64,
    d_train: usize,
) -> Result<ResultRow, ExperimentError> {
    let (value, rng_seed) = baseline_for(cfg.base_seed, cfg.d_test, sigma, cfg.height, cfg.width)?;
    let canon = format!(
        "baseline;H={};W={};sigma={sigma:?};Dtest={};base={}",
        cfg.height, cfg.width, cfg.d_test, cfg.base_seed
    );
    Ok(ResultRow {
        kind: "baseline".into(),
        experiment: kind.label().into(),
        sigma,
        d_train,
        mode: "random".into(),
        decay: false,
        softmax: false,
        static_decay: false,
        replicate: 0,
        seed: rng_seed,
        base_seed: cfg.base_seed,
        height: cfg.height,
        width: cfg.width,
        epochs: 0,
        lr: 0.0,
        timesteps: 0,
        tau: 0.0,
        clip: None,
        d_test: cfg.d_test,
        config_hash: format!("{:016x}", crate::seed::hash_str(&canon)),
        status: "ok".into(),
        mean_f1: value,
        std_f1: 0.0,
    })
}

/// Grid points `(sigma, D)` of a sweep.
pub fn grid(kind: SweepKind, cfg: &ExperimentConfig) -> Vec<(f64, usize)> {
    match kind {
        SweepKind::Noise | SweepKind::Ablation => {
            cfg.sigma_grid.iter().map(|&s| (s, cfg.d_train)).collect()
        }
        SweepKind::TrainSize => cfg.d_grid.iter().map(|&d| (0.0, d)).collect(),
    }
}

/// Variants run at every grid point.
pub fn variants(kind: SweepKind) -> Vec<RunVariant> {
    match kind {
        SweepKind::Noise | SweepKind::TrainSize => {
            vec![RunVariant::STABILIZED, RunVariant::FEEDFORWARD]
        }
        SweepKind::Ablation => vec![
            RunVariant::feedback(true, true),
            RunVariant::feedback(true, false),
            RunVariant::feedback(false, true),
            RunVariant::feedback(false, false),
            RunVariant::feedforward(true, true),
            RunVariant::feedforward(false, true),
        ],
    }
}

pub fn sweep_specs(kind: SweepKind, cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for (sigma, d) in grid(kind, cfg) {
        for v in variants(kind) {
            for r in 0..cfg.replicates {
                specs.push(RunSpec::from_config(cfg, v, sigma, d, r));
            }
        }
    }
    specs
}

/// Runs specs on a pool of `workers` threads. Output order follows input
/// order whatever the pool size.
pub fn run_all(specs: &[RunSpec], workers: usize) -> Result<Vec<RunOutcome>, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Validation(format!("worker pool: {e}")))?;
    pool.install(|| specs.par_iter().map(execute).collect())
}

/// Runs every spec of the sweep and returns result rows followed by one
/// baseline row per grid point.
pub fn run_sweep(
    kind: SweepKind,
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<Vec<ResultRow>, ExperimentError> {
    let specs = sweep_specs(kind, cfg);
    let outcomes = run_all(&specs, workers)?;
    let mut rows: Vec<ResultRow> = outcomes
        .iter()
        .map(|o| ResultRow::from_outcome(kind, o))
        .collect();
    for (sigma, d) in grid(kind, cfg) {
        rows.push(baseline_row(kind, cfg, sigma, d)?);
    }
    Ok(rows)
}

/// Baseline rows for a sweep without training anything.
pub fn baseline_rows(
    kind: SweepKind,
    cfg: &ExperimentConfig,
) -> Result<Vec<ResultRow>, ExperimentError> {
    grid(kind, cfg)
        .into_iter()
        .map(|(s, d)| baseline_row(kind, cfg, s, d))
        .collect()
}

/// Recomputes a row from its stored provenance.
pub fn rerun_row(row: &ResultRow) -> Result<ResultRow, ExperimentError> {
    let kind = match row.experiment.as_str() {
        "noise" => SweepKind::Noise,
        "trainsize" => SweepKind::TrainSize,
        "ablation" => SweepKind::Ablation,
        other => {
            return Err(ExperimentError::Validation(format!(
                "unknown experiment {other:?}"
            )))
        }
    };
    match row.spec() {
        Some(spec) => {
            if format!("{:016x}", spec.config_hash()) != row.config_hash {
                return Err(ExperimentError::Validation(format!(
                    "row provenance does not reproduce its config hash {}",
                    row.config_hash
                )));
            }
            Ok(ResultRow::from_outcome(kind, &execute(&spec)?))
        }
        None => {
            let cfg = ExperimentConfig {
                height: row.height,
                width: row.width,
                d_test: row.d_test,
                base_seed: row.base_seed,
                ..ExperimentConfig::default()
            };
            baseline_row(kind, &cfg, row.sigma, row.d_train)
        }
    }
}

/// Mean over replicates and grid points of one variant's mean f1, diverged
/// runs counting as zero.
pub fn cell_mean(rows: &[ResultRow], variant: RunVariant) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.spec().is_some_and(|s| s.variant == variant))
        .map(|r| r.mean_f1)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Table of `(grid point, mode) -> mean f1 over replicates`.
pub fn summarize(rows: &[ResultRow]) -> HashMap<(String, String), f64> {
    let mut acc: HashMap<(String, String), (f64, usize)> = HashMap::new();
    for r in rows {
        let key = (format!("{:?}/{}", r.sigma, r.d_train), r.mode.clone());
        let e = acc.entry(key).or_default();
        e.0 += r.mean_f1;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s / n as f64))
        .collect()
}

pub fn write_rows(rows: &[ResultRow], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads a sweep CSV; malformed rows are reported with their line number.
pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> ExperimentError {
    let line = e.position().map(|p| p.line());
    ExperimentError::Csv {
        path: path.display().to_string(),
        line,
        reason: e.to_string(),
    }
}

pub fn status_counts(outcomes: &[RunOutcome]) -> (usize, usize) {
    let diverged = outcomes
        .iter()
        .filter(|o| matches!(o.status, RunStatus::Diverged { .. }))
        .count();
    (outcomes.len() - diverged, diverged)
}
