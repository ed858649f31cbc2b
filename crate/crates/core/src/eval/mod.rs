//! Scoring and trajectory analysis.

mod convergence;
pub mod pca;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use convergence::{convergence_profile, StepNorms};
pub use pca::{pca_strongest_component, PcaProjection};

use crate::net::{
    feedforward_predict, prediction_mask, run_trajectory, ModelError, ModelParams,
    TrajectoryRecord, Variant,
};
use crate::polygen::PolygonInstance;

/// Stabiliser in the f1 denominator.
pub const F1_EPSILON: f64 = 0.001;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Confusion counts for the positive (polygon) class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `2pr / (p + r + ε)` with `0/0 := 0` for precision and recall.
    pub fn f1(&self) -> f64 {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        2.0 * p * r / (p + r + F1_EPSILON)
    }
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<Confusion, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Validation(format!(
            "mask sizes differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = Confusion::default();
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p > 1 || t > 1 {
            return Err(EvalError::Validation(format!(
                "non-binary mask value at pixel {i}"
            )));
        }
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// f1 of the polygon class.
pub fn f1_score(pred: &[u8], truth: &[u8]) -> Result<f64, EvalError> {
    Ok(confusion(pred, truth)?.f1())
}

/// Per-instance f1 scores of one evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub f1: Vec<f64>,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        if self.f1.is_empty() {
            return 0.0;
        }
        self.f1.iter().sum::<f64>() / self.f1.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.f1.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        (self.f1.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.f1.len() as f64).sqrt()
    }
}

/// Final-step prediction of either model kind.
pub fn predict(params: &ModelParams, instance: &PolygonInstance) -> Result<Vec<u8>, EvalError> {
    let x = instance.image_tensor();
    let pred = match params.config.variant {
        Variant::Feedback { .. } => {
            let rec = run_trajectory(params, &x, params.config.timesteps)?;
            rec.final_prediction().clone()
        }
        Variant::Feedforward { static_decay } => feedforward_predict(params, &x, static_decay)?,
    };
    Ok(prediction_mask(&pred)?)
}

pub fn evaluate(
    params: &ModelParams,
    instances: &[PolygonInstance],
) -> Result<EvalReport, EvalError> {
    let f1 = instances
        .iter()
        .map(|inst| f1_score(&predict(params, inst)?, &inst.mask))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport { f1 })
}

/// Mean f1 of per-pixel fair-coin masks against `masks`, over `n_draws`
/// independent draws per mask.
pub fn random_baseline(masks: &[&[u8]], n_draws: usize, seed: u64) -> Result<f64, EvalError> {
    if n_draws < 100 {
        return Err(EvalError::Validation(format!(
            "random baseline needs at least 100 draws, got {n_draws}"
        )));
    }
    if masks.is_empty() {
        return Err(EvalError::Validation(
            "random baseline needs at least one mask".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_draws {
        for truth in masks {
            let mut c = Confusion::default();
            let mut bits = 0u64;
            for (i, &t) in truth.iter().enumerate() {
                if i % 64 == 0 {
                    bits = rng.next_u64();
                }
                let p = (bits >> (i % 64)) & 1 == 1;
                match (p, t) {
                    (true, 1) => c.tp += 1,
                    (true, _) => c.fp += 1,
                    (false, 1) => c.fn_ += 1,
                    _ => {}
                }
            }
            total += c.f1();
        }
    }
    Ok(total / (n_draws * masks.len()) as f64)
}

/// Spatial mean of each head-logit channel: one `k`-vector per step.
pub fn pooled_logits(record: &TrajectoryRecord) -> Vec<Vec<f64>> {
    record
        .logits
        .iter()
        .map(|l| {
            let (_, k, h, w) = l.dims4().expect("logits are rank 4");
            let plane = h * w;
            (0..k)
                .map(|c| l.data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64)
                .collect()
        })
        .collect()
}

/// PCA of pooled head logits stacked over `(instance, timestep)` rows.
#[derive(Clone, Debug)]
pub struct TrajectoryPca {
    pub pca: PcaProjection,
    /// `(instance, timestep)` of every row; timesteps count from 1.
    pub rows: Vec<(usize, usize)>,
}

impl TrajectoryPca {
    /// Projections of one instance ordered by timestep.
    pub fn instance_series(&self, instance: usize) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.pca.projections)
            .filter(|((i, _), _)| *i == instance)
            .map(|(_, &p)| p)
            .collect()
    }

    /// Largest per-instance spread over the given timesteps, as a fraction of
    /// the global projection range.
    pub fn late_spread_fraction(&self, timesteps: &[usize]) -> f64 {
        let (lo, hi) = self
            .pca
            .projections
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| {
                (a.min(p), b.max(p))
            });
        let range = hi - lo;
        if range <= 0.0 {
            return 0.0;
        }
        let instances = self.rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        (0..instances)
            .map(|i| {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .zip(&self.pca.projections)
                    .filter(|((ii, t), _)| *ii == i && timesteps.contains(t))
                    .map(|(_, &p)| p)
                    .collect();
                let (a, b) = vals
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| {
                        (a.min(p), b.max(p))
                    });
                if vals.is_empty() {
                    0.0
                } else {
                    (b - a) / range
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn trajectory_pca(records: &[TrajectoryRecord]) -> Result<TrajectoryPca, EvalError> {
    let mut rows = Vec::new();
    let mut feats = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        for (t, f) in pooled_logits(rec).into_iter().enumerate() {
            rows.push((i, t + 1));
            feats.push(f);
        }
    }
    Ok(TrajectoryPca {
        pca: pca_strongest_component(&feats)?,
        rows,
    })
}
