//! C ABI over `fbseg`.
//!
//! Every function returns an [`FbsegStatus`]; on failure a message for the
//! calling thread is available from [`fbseg_last_error`]. Models and
//! polygons are opaque heap handles released with their `_free` function.
//! Grids are row-major `height × width` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use fbseg::autodiff::Tensor;
use fbseg::eval::{convergence_profile, f1_score, EvalError};
use fbseg::net::{
    feedforward_predict, load_checkpoint, prediction_mask, run_trajectory, save_checkpoint,
    ModelError, ModelParams, NetConfig, Variant,
};
use fbseg::polygen::{
    add_gaussian_noise, generate_polygon, PolygenError, PolygonInstance, PolygonParams,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Corrupt = 5,
    NonFinite = 6,
    Internal = 7,
}

/// Trained or freshly initialised network.
pub struct FbsegModel {
    params: ModelParams,
}

/// One generated image/mask pair.
pub struct FbsegPolygon {
    instance: PolygonInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(FbsegStatus, String);

impl From<ModelError> for Fail {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Config(_) | ModelError::Tensor(_) => FbsegStatus::InvalidArgument,
            ModelError::NonFinite { .. } => FbsegStatus::NonFinite,
            ModelError::Checkpoint { .. } => FbsegStatus::Corrupt,
            ModelError::Io { .. } => FbsegStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

impl From<PolygenError> for Fail {
    fn from(e: PolygenError) -> Self {
        let status = match e {
            PolygenError::Io { .. } => FbsegStatus::Io,
            PolygenError::Checksum { .. }
            | PolygenError::Load { .. }
            | PolygenError::Consistency { .. } => FbsegStatus::Corrupt,
            _ => FbsegStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<EvalError> for Fail {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => Fail(FbsegStatus::InvalidArgument, other.to_string()),
        }
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FbsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FbsegStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FbsegStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(FbsegStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| {
        Fail(
            FbsegStatus::InvalidArgument,
            "path is not valid UTF-8".into(),
        )
    })
}

fn image_tensor(
    model: &ModelParams,
    image: &[f64],
    height: usize,
    width: usize,
) -> Result<Tensor, Fail> {
    if (height, width) != (model.config.height, model.config.width) {
        return Err(Fail(
            FbsegStatus::InvalidArgument,
            format!(
                "image is {height}x{width} but the model expects {}x{}",
                model.config.height, model.config.width
            ),
        ));
    }
    Tensor::new(vec![1, 1, height, width], image.to_vec())
        .map_err(|e| Fail(FbsegStatus::InvalidArgument, e.to_string()))
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fbseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates one polygon instance with optional Gaussian noise.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fbseg_polygon_generate(
    seed: u64,
    height: usize,
    width: usize,
    sigma: f64,
    noise_seed: u64,
    out: *mut *mut FbsegPolygon,
) -> FbsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let clean = generate_polygon(seed, height, width, &PolygonParams::default())?;
        let instance = add_gaussian_noise(&clean, sigma, noise_seed)?;
        *out = Box::into_raw(Box::new(FbsegPolygon { instance }));
        Ok(())
    })
}

/// # Safety
/// `polygon` must be null or a handle from [`fbseg_polygon_generate`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fbseg_polygon_free(polygon: *mut FbsegPolygon) {
    if !polygon.is_null() {
        drop(Box::from_raw(polygon));
    }
}

/// Copies the image (`len` must equal `height·width`).
///
/// # Safety
/// `polygon` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fbseg_polygon_image(
    polygon: *const FbsegPolygon,
    out: *mut f64,
    len: usize,
) -> FbsegStatus {
    guard(|| {
        let p = polygon.as_ref().ok_or_else(|| null("polygon"))?;
        let dst = slice_mut(out, len, "out")?;
        if len != p.instance.image.len() {
            return Err(Fail(
                FbsegStatus::BufferTooSmall,
                format!("need {} values", p.instance.image.len()),
            ));
        }
        dst.copy_from_slice(&p.instance.image);
        Ok(())
    })
}

/// Copies the mask (1 = polygon).
///
/// # Safety
/// `polygon` must be a live handle and `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fbseg_polygon_mask(
    polygon: *const FbsegPolygon,
    out: *mut u8,
    len: usize,
) -> FbsegStatus {
    guard(|| {
        let p = polygon.as_ref().ok_or_else(|| null("polygon"))?;
        let dst = slice_mut(out, len, "out")?;
        if len != p.instance.mask.len() {
            return Err(Fail(
                FbsegStatus::BufferTooSmall,
                format!("need {} values", p.instance.mask.len()),
            ));
        }
        dst.copy_from_slice(&p.instance.mask);
        Ok(())
    })
}

/// Freshly initialised model. `feedback` selects the recurrent model;
/// `decay` and `softmax` are its stabilisers, `static_decay` applies to the
/// feedforward model only.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fbseg_model_new(
    height: usize,
    width: usize,
    feedback: bool,
    decay: bool,
    softmax: bool,
    static_decay: bool,
    seed: u64,
    out: *mut *mut FbsegModel,
) -> FbsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let variant = if feedback {
            Variant::Feedback {
                use_decay: decay,
                use_softmax: softmax,
            }
        } else {
            Variant::Feedforward { static_decay }
        };
        let config = NetConfig {
            height,
            width,
            variant,
            ..NetConfig::default()
        };
        let params = ModelParams::init(&config, seed)?;
        *out = Box::into_raw(Box::new(FbsegModel { params }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbseg_model_load(
    path: *const c_char,
    out: *mut *mut FbsegModel,
) -> FbsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = load_checkpoint(&self::path(path)?)?;
        *out = Box::into_raw(Box::new(FbsegModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fbseg_model_save(
    model: *const FbsegModel,
    path: *const c_char,
) -> FbsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        save_checkpoint(&m.params, &self::path(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbseg_model_free(model: *mut FbsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learned scalars.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fbseg_model_parameter_count(
    model: *const FbsegModel,
    out: *mut usize,
) -> FbsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = m.params.parameter_count();
        Ok(())
    })
}

/// Final-step segmentation of `image` into `mask_out` (1 = polygon).
///
/// # Safety
/// `image` must hold `height·width` doubles and `mask_out` as many bytes.
#[no_mangle]
pub unsafe extern "C" fn fbseg_model_predict(
    model: *const FbsegModel,
    image: *const f64,
    height: usize,
    width: usize,
    mask_out: *mut u8,
) -> FbsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = height * width;
        let x = image_tensor(&m.params, slice(image, n, "image")?, height, width)?;
        let dst = slice_mut(mask_out, n, "mask_out")?;
        let pred = match m.params.config.variant {
            Variant::Feedback { .. } => run_trajectory(&m.params, &x, m.params.config.timesteps)?
                .final_prediction()
                .clone(),
            Variant::Feedforward { static_decay } => {
                feedforward_predict(&m.params, &x, static_decay)?
            }
        };
        dst.copy_from_slice(&prediction_mask(&pred)?);
        Ok(())
    })
}

/// Per-step `‖δ(t)‖₂` of a feedback model's trajectory; writes
/// `min(T, len)` values and stores `T` in `written`.
///
/// # Safety
/// `image` must hold `height·width` doubles, `out` `len` doubles, and
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbseg_model_delta_norms(
    model: *const FbsegModel,
    image: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
    len: usize,
    written: *mut usize,
) -> FbsegStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if !m.params.config.variant.is_feedback() {
            return Err(Fail(
                FbsegStatus::InvalidArgument,
                "delta norms need a feedback model".into(),
            ));
        }
        let w = written.as_mut().ok_or_else(|| null("written"))?;
        let x = image_tensor(
            &m.params,
            slice(image, height * width, "image")?,
            height,
            width,
        )?;
        let rec = run_trajectory(&m.params, &x, m.params.config.timesteps)?;
        let norms: Vec<f64> = if rec.timesteps() >= 2 {
            convergence_profile(&rec)?
                .iter()
                .map(|s| s.delta_l2)
                .collect()
        } else {
            rec.deltas.iter().map(Tensor::norm_l2).collect()
        };
        let dst = slice_mut(out, len, "out")?;
        for (d, v) in dst.iter_mut().zip(&norms) {
            *d = *v;
        }
        *w = norms.len();
        if len < norms.len() {
            return Err(Fail(
                FbsegStatus::BufferTooSmall,
                format!("need {} values", norms.len()),
            ));
        }
        Ok(())
    })
}

/// Polygon-class f1 of two binary masks of `len` pixels.
///
/// # Safety
/// `pred` and `truth` must each hold `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbseg_f1_score(
    pred: *const u8,
    truth: *const u8,
    len: usize,
    out: *mut f64,
) -> FbsegStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = f1_score(slice(pred, len, "pred")?, slice(truth, len, "truth")?)?;
        Ok(())
    })
}
