//! # fbseg
//!
//! A feedback U-Net for binary segmentation. The network keeps a per-pixel
//! internal state `h(t)` that starts at zero and is refined over `T` steps by
//! decayed error proposals; part of the state is fed back (after a simplex
//! projection) alongside the input image, the rest drives the segmentation
//! head. Training differentiates the summed loss of the whole trajectory.
//!
//! ## Modules
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation over `f64` tensors
//! - [`polygen`]: synthetic single-polygon dataset, Gaussian noise, disk format
//! - [`net`]: U-Net body, decay operator, feedback step/trajectory, checkpoints
//! - [`train`]: Adam and the full-trajectory training loop
//! - [`eval`]: f1 scoring, random baseline, PCA of trajectories, convergence
//! - [`experiment`]: sweep harness, CSV/SVG emission, config files

pub mod autodiff;
pub mod eval;
pub mod experiment;
pub mod net;
pub mod polygen;
pub mod seed;
pub mod train;

pub use autodiff::{Tape, Tensor, TensorError, Var};
