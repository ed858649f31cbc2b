//! Sweeps, provenance and result files.

mod config;
pub mod plot;
mod run;
mod sweep;

use std::path::Path;

use serde::Serialize;

pub use config::{ExperimentConfig, VALID_KEYS};
pub use run::{
    baseline_for, execute, execute_on, test_split, RunOutcome, RunSpec, RunStatus, RunVariant,
    BASELINE_DRAWS,
};
pub use sweep::{
    baseline_rows, cell_mean, grid, read_rows, rerun_row, run_all, run_sweep, status_counts,
    summarize, sweep_specs, variants, write_rows, ResultRow, SweepKind,
};

use crate::autodiff::Tape;
use crate::eval::{pooled_logits, trajectory_pca, EvalError, TrajectoryPca};
use crate::net::{feedforward_forward, run_trajectory, ModelError, ModelParams, TrajectoryRecord};
use crate::polygen::{PolygenError, PolygonInstance};
use crate::train::{EpochStats, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Polygen(#[from] PolygenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}{}: {reason}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Csv {
        path: String,
        line: Option<u64>,
        reason: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<(), ExperimentError> {
    let err = |e: csv::Error| ExperimentError::Csv {
        path: path.display().to_string(),
        line: None,
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_loss_csv(curve: &[EpochStats], path: &Path) -> Result<(), ExperimentError> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        mean_loss: f64,
        max_delta_norm: f64,
    }
    let rows: Vec<Row> = curve
        .iter()
        .map(|e| Row {
            epoch: e.epoch,
            mean_loss: e.mean_loss,
            max_delta_norm: e.max_delta_norm,
        })
        .collect();
    write_csv(&rows, path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub instance_id: usize,
    pub sigma: f64,
    #[serde(rename = "D")]
    pub d_train: Option<usize>,
    pub mode: String,
    pub flags: String,
    pub f1: f64,
}

pub fn write_eval_csv(rows: &[EvalRow], path: &Path) -> Result<(), ExperimentError> {
    write_csv(rows, path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PcaRow {
    pub instance_id: usize,
    pub timestep: usize,
    pub projection: f64,
    pub explained_variance_ratio: f64,
}

/// Trajectory PCA of a feedback model on `instances`, plus the mean
/// projection of a feedforward model's pooled logits when one is given.
pub struct PcaAnalysis {
    pub pca: TrajectoryPca,
    pub records: Vec<TrajectoryRecord>,
    pub feedforward: Option<f64>,
}

impl PcaAnalysis {
    pub fn rows(&self) -> Vec<PcaRow> {
        self.pca
            .rows
            .iter()
            .zip(&self.pca.pca.projections)
            .map(|(&(i, t), &p)| PcaRow {
                instance_id: i,
                timestep: t,
                projection: p,
                explained_variance_ratio: self.pca.pca.explained_variance_ratio,
            })
            .collect()
    }

    pub fn series(&self) -> Vec<Vec<f64>> {
        (0..self.records.len())
            .map(|i| self.pca.instance_series(i))
            .collect()
    }

    pub fn svg(&self) -> String {
        plot::render_pca_svg(
            &self.series(),
            self.feedforward,
            self.pca.pca.explained_variance_ratio,
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        write_csv(&self.rows(), path)
    }
}

pub fn pca_analysis(
    model: &ModelParams,
    feedforward: Option<&ModelParams>,
    instances: &[PolygonInstance],
) -> Result<PcaAnalysis, ExperimentError> {
    if !model.config.variant.is_feedback() {
        return Err(ExperimentError::Validation(
            "PCA needs a feedback checkpoint".into(),
        ));
    }
    let records = instances
        .iter()
        .map(|inst| run_trajectory(model, &inst.image_tensor(), model.config.timesteps))
        .collect::<Result<Vec<_>, _>>()?;
    let pca = trajectory_pca(&records)?;
    let ff = match feedforward {
        Some(ff) => {
            if ff.config.variant.is_feedback() {
                return Err(ExperimentError::Validation(
                    "overlay checkpoint is not a feedforward model".into(),
                ));
            }
            let static_decay = matches!(
                ff.config.variant,
                crate::net::Variant::Feedforward { static_decay: true }
            );
            let mut total = 0.0;
            for inst in instances {
                let mut tape = Tape::new();
                let p = ff.bind(&mut tape, false);
                let x = tape.constant(inst.image_tensor());
                let out = feedforward_forward(&mut tape, &p, x, static_decay)?;
                let rec = TrajectoryRecord {
                    states: vec![],
                    deltas: vec![],
                    proposals: vec![],
                    decays: vec![],
                    logits: vec![tape.value(out.logits).clone()],
                    predictions: vec![],
                };
                total += pca.pca.project(&pooled_logits(&rec)[0]);
            }
            Some(total / instances.len() as f64)
        }
        None => None,
    };
    Ok(PcaAnalysis {
        pca,
        records,
        feedforward: ff,
    })
}

/// Checks that a checkpoint was built for the image size of a dataset.
pub fn check_compatible(
    params: &ModelParams,
    height: usize,
    width: usize,
) -> Result<(), ExperimentError> {
    if (params.config.height, params.config.width) != (height, width) {
        return Err(ExperimentError::Validation(format!(
            "checkpoint is configured for {}x{} images but the data is {height}x{width}",
            params.config.height, params.config.width
        )));
    }
    Ok(())
}
