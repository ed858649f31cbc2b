//! Adam and full-trajectory backpropagation through time.

mod adam;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, adam_update, AdamConfig, OptimizerState};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::net::{feedforward_forward, trajectory, ModelError, ModelParams, Variant};
use crate::polygen::PolygonInstance;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite gradient for {parameter} at optimizer step {step}")]
    NonFiniteGradient { parameter: String, step: u64 },
    #[error("loss is {value}")]
    NonFiniteLoss { value: f64 },
    #[error("training diverged at epoch {epoch}, instance {instance}: {reason}")]
    Divergence {
        epoch: usize,
        instance: usize,
        reason: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Drives the per-epoch visiting order.
    pub seed: u64,
    /// Global gradient-norm ceiling; off unless set.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            adam: AdamConfig::default(),
            seed: 0,
            clip: None,
        }
    }
}

/// Per-epoch summary; `max_delta_norm` is the largest `‖δ(t)‖₂` seen in
/// the epoch (zero for feedforward models).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub max_delta_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub max_delta_norm: f64,
}

/// `Σ_t CE(ŷ(t), y)` over a recorded trajectory.
pub fn trajectory_loss(
    tape: &mut Tape,
    predictions: &[Var],
    target: &Tensor,
    timesteps: usize,
) -> Result<Var, TrainError> {
    if predictions.len() != timesteps || timesteps == 0 {
        return Err(TrainError::Contract(format!(
            "trajectory has {} predictions, expected T = {timesteps}",
            predictions.len()
        )));
    }
    let mut total = tape.cross_entropy(predictions[0], target)?;
    for &p in &predictions[1..] {
        let ce = tape.cross_entropy(p, target)?;
        total = tape.add(total, ce)?;
    }
    Ok(total)
}

/// Forward, backward and one optimizer step on a single instance.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    instance: &PolygonInstance,
    clip: Option<f64>,
) -> Result<StepStats, TrainError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true);
    let x = tape.constant(instance.image_tensor());
    let target = instance.target_tensor();
    let (loss, max_delta_norm) = match params.config.variant {
        Variant::Feedback { .. } => {
            let tr = trajectory(&mut tape, &p, x, params.config.timesteps)?;
            let loss =
                trajectory_loss(&mut tape, &tr.predictions, &target, params.config.timesteps)?;
            let md = tr
                .deltas
                .iter()
                .map(|&d| tape.value(d).norm_l2())
                .fold(0.0, f64::max);
            (loss, md)
        }
        Variant::Feedforward { static_decay } => {
            let out = feedforward_forward(&mut tape, &p, x, static_decay)?;
            (tape.cross_entropy(out.prediction, &target)?, 0.0)
        }
    };
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(TrainError::NonFiniteLoss { value: loss_value });
    }
    tape.backward(loss)?;
    let mut grads = p.grads(&tape);
    if let Some(limit) = clip {
        let norm = grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > limit {
            let s = limit / norm;
            grads = grads.iter().map(|g| g.map(|v| v * s)).collect();
        }
    }
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    adam_step(&mut params.tensors_mut(), &grads, &names, opt)?;
    Ok(StepStats {
        loss: loss_value,
        max_delta_norm,
    })
}

/// Trains in place with batch size 1: every epoch visits each instance once
/// in a seeded order and takes one Adam step per instance.
pub fn train(
    params: &mut ModelParams,
    instances: &[PolygonInstance],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::Contract("training set is empty".into()));
    }
    if config.epochs == 0 {
        return Err(TrainError::Contract("epochs must be at least 1".into()));
    }
    let mut opt = OptimizerState::new(
        config.adam,
        params.named_tensors().into_iter().map(|(_, t)| t),
    );
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(
            config.seed,
            "epoch-order",
            epoch as u64,
        ));
        order.shuffle(&mut rng);
        let (mut total, mut max_delta) = (0.0, 0.0f64);
        for &i in &order {
            let stats =
                train_step(params, &mut opt, &instances[i], config.clip).map_err(|e| match e {
                    TrainError::NonFiniteLoss { .. }
                    | TrainError::NonFiniteGradient { .. }
                    | TrainError::Model(ModelError::NonFinite { .. }) => TrainError::Divergence {
                        epoch,
                        instance: i,
                        reason: e.to_string(),
                    },
                    other => other,
                })?;
            total += stats.loss;
            max_delta = max_delta.max(stats.max_delta_norm);
        }
        if !params.is_finite() {
            return Err(TrainError::Divergence {
                epoch,
                instance: *order.last().unwrap(),
                reason: "parameters became non-finite".into(),
            });
        }
        curve.push(EpochStats {
            epoch,
            mean_loss: total / instances.len() as f64,
            max_delta_norm: max_delta,
        });
    }
    Ok(curve)
}
