//! The feedback U-Net.
//!
//! State layout per pixel: `h = [u, v]` with `l` segmentation channels `u`
//! followed by `k` feedback channels `v` (one per class). Each step the
//! network body `F` sees the image concatenated with the projected feedback
//! `softmax(v)`, proposes a `d = l + k` channel error, and the decay operator
//! `M(t) = Q·diag(e^{−t/τ})·Q⁻¹` scales that proposal before it is added to
//! the state. The head `G` (1×1 conv + class softmax) reads only `u`.

mod checkpoint;
mod decay;
mod feedback;
mod params;
mod unet;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use decay::{decay_factor, DecayOperator, SIGMA_EIGENVALUE};
pub use feedback::{
    feedback_step, feedforward_forward, feedforward_predict, prediction_mask, project_feedback,
    run_trajectory, trajectory, FeedforwardOutput, StateField, StepOutput, Trajectory,
    TrajectoryRecord,
};
pub use params::{BoundConv, BoundParams, Conv, ModelParams};
pub use unet::unet_forward;

use crate::autodiff::TensorError;

/// Which model is built and how its update is stabilised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Recurrent model; each flag enables one stabiliser.
    Feedback { use_decay: bool, use_softmax: bool },
    /// Single pass of the same body with no feedback input. With
    /// `static_decay` the body output is attenuated once by `M(T)`.
    Feedforward { static_decay: bool },
}

impl Variant {
    pub fn is_feedback(&self) -> bool {
        matches!(self, Variant::Feedback { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Feedback { .. } => "feedback",
            Variant::Feedforward { .. } => "feedforward",
        }
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::Feedback {
            use_decay: true,
            use_softmax: true,
        }
    }
}

/// Architecture and dynamics configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// `l`: channels read by the segmentation head.
    pub seg_channels: usize,
    /// `k`: class count, which is also the feedback channel count.
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Channel widths of the two encoder levels and the bottleneck.
    pub widths: [usize; 3],
    /// `T`: number of feedback steps.
    pub timesteps: usize,
    /// `τ`: decay time constant.
    pub tau: f64,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            seg_channels: 4,
            classes: 2,
            height: 64,
            width: 64,
            widths: [8, 16, 32],
            timesteps: 5,
            tau: 1.0,
            variant: Variant::default(),
        }
    }
}

impl NetConfig {
    /// `d = l + k`.
    pub fn state_channels(&self) -> usize {
        self.seg_channels + self.classes
    }

    /// Body input channels: grayscale image plus `k` feedback channels for
    /// the recurrent model.
    pub fn in_channels(&self) -> usize {
        if self.variant.is_feedback() {
            1 + self.classes
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.seg_channels == 0 || self.classes < 2 {
            return Err(ModelError::Config(format!(
                "need l ≥ 1 and k ≥ 2, got l={} k={}",
                self.seg_channels, self.classes
            )));
        }
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(4)
            || !self.width.is_multiple_of(4)
        {
            return Err(ModelError::Config(format!(
                "image size {}x{} must be nonzero and divisible by 4",
                self.height, self.width
            )));
        }
        if self.widths.contains(&0) {
            return Err(ModelError::Config("channel widths must be positive".into()));
        }
        if self.timesteps == 0 {
            return Err(ModelError::Config("T must be at least 1".into()));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(ModelError::Config(format!(
                "τ must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite state update at step {step} (max finite magnitude {max_magnitude:e})")]
    NonFinite { step: usize, max_magnitude: f64 },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
