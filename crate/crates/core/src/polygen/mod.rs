//! Synthetic single-polygon segmentation data.
//!
//! Each instance is a binary image holding one irregular star-shaped polygon
//! (foreground = class 1) and its mask. Generation is a pure function of the
//! instance seed; Gaussian noise comes from a separate stream keyed by its own
//! seed and is added without clamping.

mod io;
pub mod raster;
mod split;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use io::{read_dataset, write_dataset, FORMAT_VERSION};
pub use split::{
    build_split, instance_seed, noise_seed, Dataset, DatasetManifest, InstanceMeta, SplitConfig,
};

use crate::autodiff::Tensor;
use crate::seed;

/// Minimum foreground pixel count of an accepted polygon.
pub const MIN_AREA: usize = 8;
/// Attempts before generation gives up.
pub const MAX_ATTEMPTS: u64 = 100;

#[derive(Debug, thiserror::Error)]
pub enum PolygenError {
    #[error("invalid generation parameters: {0}")]
    Config(String),
    #[error("no acceptable polygon for seed {seed} after {attempts} attempts")]
    Degenerate { seed: u64, attempts: u64 },
    #[error("dataset {path}: {reason}")]
    Load { path: String, reason: String },
    #[error("checksum mismatch in {path}")]
    Checksum { path: String },
    #[error("dataset {path}: manifest lists {expected} instances but {found} instance files are present")]
    Consistency {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Shape distribution of the generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolygonParams {
    /// Inclusive vertex-count range.
    pub vertices: (usize, usize),
    /// Inclusive radius range as fractions of `min(H, W)`.
    pub radius: (f64, f64),
}

impl Default for PolygonParams {
    fn default() -> Self {
        PolygonParams {
            vertices: (3, 12),
            radius: (0.1, 0.4),
        }
    }
}

/// One image/mask pair with the metadata needed to regenerate it.
#[derive(Clone, Debug, PartialEq)]
pub struct PolygonInstance {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities; `{0, 1}` before noise.
    pub image: Vec<f64>,
    /// Row-major labels, 1 = polygon.
    pub mask: Vec<u8>,
    pub seed: u64,
    pub sigma: f64,
    /// Seed of the noise stream, absent for clean instances.
    pub noise_seed: Option<u64>,
    /// `(row, col)` vertices in fill order.
    pub vertices: Vec<(f64, f64)>,
}

impl PolygonInstance {
    pub fn foreground_area(&self) -> usize {
        self.mask.iter().map(|&m| m as usize).sum()
    }

    /// `[1, 1, H, W]` network input.
    pub fn image_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.height, self.width], self.image.clone())
            .expect("image matches its size")
    }

    /// `[1, 2, H, W]` one-hot target (background channel first).
    pub fn target_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 2 * plane];
        for (p, &m) in self.mask.iter().enumerate() {
            data[m as usize * plane + p] = 1.0;
        }
        Tensor::new(vec![1, 2, self.height, self.width], data).expect("target matches its size")
    }
}

fn validate(height: usize, width: usize, params: &PolygonParams) -> Result<(), PolygenError> {
    if height < 16 || width < 16 {
        return Err(PolygenError::Config(format!(
            "image must be at least 16x16, got {height}x{width}"
        )));
    }
    let (vlo, vhi) = params.vertices;
    if vlo < 3 || vhi > 16 || vlo > vhi {
        return Err(PolygenError::Config(format!(
            "vertex range ({vlo}, {vhi}) must lie within [3, 16]"
        )));
    }
    let (rlo, rhi) = params.radius;
    if !(rlo > 0.0 && rhi <= 0.5 && rlo <= rhi) {
        return Err(PolygenError::Config(format!(
            "radius range ({rlo}, {rhi}) must lie within (0, 0.5]"
        )));
    }
    Ok(())
}

fn sample_vertices(
    rng: &mut ChaCha8Rng,
    height: usize,
    width: usize,
    params: &PolygonParams,
) -> Vec<(f64, f64)> {
    let (h, w) = (height as f64, width as f64);
    let cy = rng.random_range(0.25 * h..0.75 * h);
    let cx = rng.random_range(0.25 * w..0.75 * w);
    let n = rng.random_range(params.vertices.0..=params.vertices.1);
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = h.min(w);
    angles
        .into_iter()
        .map(|a| {
            let r = scale * rng.random_range(params.radius.0..=params.radius.1);
            (cy + r * a.sin(), cx + r * a.cos())
        })
        .collect()
}

/// Samples a centre in the central half of the image, a vertex count, sorted
/// angles and per-vertex radii, then fills the polygon with the even-odd rule.
///
/// Candidates with fewer than [`MIN_AREA`] pixels, at least half the image,
/// more than one 4-connected component, or a centroid outside the image are
/// rejected and redrawn from the next derived seed.
pub fn generate_polygon(
    seed: u64,
    height: usize,
    width: usize,
    params: &PolygonParams,
) -> Result<PolygonInstance, PolygenError> {
    validate(height, width, params)?;
    for attempt in 0..MAX_ATTEMPTS {
        let s = if attempt == 0 {
            seed
        } else {
            seed::derive_indexed(seed, "polygon-retry", attempt)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let vertices = sample_vertices(&mut rng, height, width, params);
        let mask = raster::rasterize_even_odd(&vertices, height, width);
        let area: usize = mask.iter().map(|&m| m as usize).sum();
        if area < MIN_AREA || 2 * area >= height * width {
            continue;
        }
        if raster::component_count(&mask, height, width) != 1 {
            continue;
        }
        let (cy, cx) = raster::centroid(&vertices);
        if !(cy > 0.0 && cy < height as f64 && cx > 0.0 && cx < width as f64) {
            continue;
        }
        return Ok(PolygonInstance {
            height,
            width,
            image: mask.iter().map(|&m| m as f64).collect(),
            mask,
            seed,
            sigma: 0.0,
            noise_seed: None,
            vertices,
        });
    }
    Err(PolygenError::Degenerate {
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

/// Adds `N(0, σ²)` noise per pixel from the stream keyed by `noise_seed`.
/// The mask is untouched and values are not clamped.
pub fn add_gaussian_noise(
    instance: &PolygonInstance,
    sigma: f64,
    noise_seed: u64,
) -> Result<PolygonInstance, PolygenError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(PolygenError::Config(format!(
            "noise σ must be a finite value ≥ 0, got {sigma}"
        )));
    }
    let mut out = instance.clone();
    out.sigma = sigma;
    if sigma == 0.0 {
        out.noise_seed = None;
        return Ok(out);
    }
    out.noise_seed = Some(noise_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    for v in out.image.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Ok(out)
}
