use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentError};
use crate::eval::{evaluate, random_baseline, EvalError, EvalReport};
use crate::net::{ModelError, ModelParams, NetConfig, Variant};
use crate::polygen::{build_split, Dataset, SplitConfig};
use crate::seed;
use crate::train::{train, AdamConfig, EpochStats, TrainConfig, TrainError};

/// Draws per mask in the random baseline.
pub const BASELINE_DRAWS: usize = 1000;

/// Everything that determines one training run and its evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub d_train: usize,
    pub d_test: usize,
    pub base_seed: u64,
    pub replicate: usize,
    pub epochs: usize,
    pub lr: f64,
    pub timesteps: usize,
    pub tau: f64,
    pub clip: Option<f64>,
    pub variant: RunVariant,
}

/// Flat form of [`Variant`] that also carries the softmax flag for
/// feedforward runs, where it is accepted and ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunVariant {
    pub feedback: bool,
    pub decay: bool,
    pub softmax: bool,
    pub static_decay: bool,
}

impl RunVariant {
    pub const STABILIZED: RunVariant = RunVariant {
        feedback: true,
        decay: true,
        softmax: true,
        static_decay: false,
    };
    pub const FEEDFORWARD: RunVariant = RunVariant {
        feedback: false,
        decay: false,
        softmax: true,
        static_decay: false,
    };

    pub fn feedback(decay: bool, softmax: bool) -> Self {
        RunVariant {
            feedback: true,
            decay,
            softmax,
            static_decay: false,
        }
    }

    pub fn feedforward(static_decay: bool, softmax: bool) -> Self {
        RunVariant {
            feedback: false,
            decay: false,
            softmax,
            static_decay,
        }
    }

    pub fn mode(&self) -> &'static str {
        if self.feedback {
            "feedback"
        } else {
            "feedforward"
        }
    }

    pub fn net_variant(&self) -> Variant {
        if self.feedback {
            Variant::Feedback {
                use_decay: self.decay,
                use_softmax: self.softmax,
            }
        } else {
            Variant::Feedforward {
                static_decay: self.static_decay,
            }
        }
    }
}

impl RunSpec {
    pub fn from_config(
        cfg: &ExperimentConfig,
        variant: RunVariant,
        sigma: f64,
        d_train: usize,
        replicate: usize,
    ) -> Self {
        RunSpec {
            height: cfg.height,
            width: cfg.width,
            sigma,
            d_train,
            d_test: cfg.d_test,
            base_seed: cfg.base_seed,
            replicate,
            epochs: cfg.epochs,
            lr: cfg.lr,
            timesteps: cfg.timesteps,
            tau: cfg.tau,
            clip: cfg.clip,
            variant,
        }
    }

    /// Seed of this replicate; drives initialisation, training data and
    /// visiting order.
    pub fn seed(&self) -> u64 {
        seed::derive_indexed(self.base_seed, "replicate", self.replicate as u64)
    }

    /// Stable hash of the canonical field encoding. The softmax flag is left
    /// out for feedforward runs because it does not change them.
    pub fn config_hash(&self) -> u64 {
        let v = &self.variant;
        let softmax = v.feedback && v.softmax;
        let canon = format!(
            "H={};W={};sigma={:?};D={};Dtest={};base={};rep={};epochs={};lr={:?};T={};tau={:?};clip={:?};fb={};decay={};softmax={};static={}",
            self.height,
            self.width,
            self.sigma,
            self.d_train,
            self.d_test,
            self.base_seed,
            self.replicate,
            self.epochs,
            self.lr,
            self.timesteps,
            self.tau,
            self.clip,
            v.feedback,
            v.decay,
            softmax,
            v.static_decay
        );
        seed::hash_str(&canon)
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            height: self.height,
            width: self.width,
            timesteps: self.timesteps,
            tau: self.tau,
            variant: self.variant.net_variant(),
            ..NetConfig::default()
        }
    }

    pub fn train_split(&self) -> SplitConfig {
        SplitConfig::new(
            "train",
            self.d_train,
            self.sigma,
            seed::derive(self.seed(), "train-data"),
        )
        .with_size(self.height, self.width)
    }

    /// Shared by every run with the same base seed, size and σ.
    pub fn test_split(&self) -> SplitConfig {
        test_split(
            self.base_seed,
            self.d_test,
            self.sigma,
            self.height,
            self.width,
        )
    }
}

pub fn test_split(
    base_seed: u64,
    d_test: usize,
    sigma: f64,
    height: usize,
    width: usize,
) -> SplitConfig {
    SplitConfig::new("test", d_test, sigma, base_seed).with_size(height, width)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Ok,
    Diverged {
        epoch: usize,
        instance: usize,
        reason: String,
    },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub status: RunStatus,
    /// Per-instance test f1; a diverged run scores 0 on every instance.
    pub report: EvalReport,
    pub curve: Vec<EpochStats>,
    /// Trained parameters of a completed run.
    pub params: Option<ModelParams>,
}

/// Trains and evaluates one run. Divergence during training or evaluation is
/// an outcome, not an error.
pub fn execute(spec: &RunSpec) -> Result<RunOutcome, ExperimentError> {
    let train_set = build_split(&spec.train_split())?;
    let test_set = build_split(&spec.test_split())?;
    execute_on(spec, &train_set, &test_set)
}

pub fn execute_on(
    spec: &RunSpec,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<RunOutcome, ExperimentError> {
    let s = spec.seed();
    let mut params = ModelParams::init(&spec.net_config(), seed::derive(s, "init"))?;
    let tc = TrainConfig {
        epochs: spec.epochs,
        adam: AdamConfig {
            lr: spec.lr,
            ..AdamConfig::default()
        },
        seed: seed::derive(s, "order"),
        clip: spec.clip,
    };
    let diverged = |epoch, instance, reason| RunOutcome {
        spec: spec.clone(),
        status: RunStatus::Diverged {
            epoch,
            instance,
            reason,
        },
        report: EvalReport {
            f1: vec![0.0; test_set.len()],
        },
        curve: Vec::new(),
        params: None,
    };
    let curve = match train(&mut params, &train_set.instances, &tc) {
        Ok(c) => c,
        Err(TrainError::Divergence {
            epoch,
            instance,
            reason,
        }) => return Ok(diverged(epoch, instance, reason)),
        Err(e) => return Err(e.into()),
    };
    match evaluate(&params, &test_set.instances) {
        Ok(report) => Ok(RunOutcome {
            spec: spec.clone(),
            status: RunStatus::Ok,
            report,
            curve,
            params: Some(params),
        }),
        Err(EvalError::Model(ModelError::NonFinite { step, .. })) => Ok(diverged(
            spec.epochs,
            0,
            format!("non-finite state at evaluation step {step}"),
        )),
        Err(e) => Err(e.into()),
    }
}

/// Random-baseline f1 on the test split of one grid point.
pub fn baseline_for(
    base_seed: u64,
    d_test: usize,
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<(f64, u64), ExperimentError> {
    let test = build_split(&test_split(base_seed, d_test, sigma, height, width))?;
    let masks: Vec<&[u8]> = test.instances.iter().map(|i| i.mask.as_slice()).collect();
    let rng_seed = seed::derive(base_seed, "random-baseline");
    Ok((random_baseline(&masks, BASELINE_DRAWS, rng_seed)?, rng_seed))
}
