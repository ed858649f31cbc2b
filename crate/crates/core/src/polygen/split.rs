use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_gaussian_noise, generate_polygon, PolygenError, PolygonInstance, PolygonParams};
use crate::seed::{derive, hash_str, mix64};

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub count: usize,
    pub sigma: f64,
    pub height: usize,
    pub width: usize,
    pub base_seed: u64,
    pub split: String,
    pub polygon: PolygonParams,
}

impl SplitConfig {
    pub fn new(split: &str, count: usize, sigma: f64, base_seed: u64) -> Self {
        SplitConfig {
            count,
            sigma,
            height: 64,
            width: 64,
            base_seed,
            split: split.to_string(),
            polygon: PolygonParams::default(),
        }
    }

    pub fn with_size(mut self, height: usize, width: usize) -> Self {
        self.height = height;
        self.width = width;
        self
    }
}

/// `base_seed ⊕ hash(split, i)`.
pub fn instance_seed(base_seed: u64, split: &str, index: usize) -> u64 {
    base_seed ^ mix64(hash_str(split) ^ mix64(index as u64))
}

pub fn noise_seed(instance_seed: u64) -> u64 {
    derive(instance_seed, "noise")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: usize,
    pub seed: u64,
    pub noise_seed: Option<u64>,
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: String,
    pub count: usize,
    pub sigma: f64,
    pub height: usize,
    pub width: usize,
    pub base_seed: u64,
    pub vertex_range: [usize; 2],
    pub radius_range: [f64; 2],
    pub instances: Vec<InstanceMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub instances: Vec<PolygonInstance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Generates a whole split; instance `i` uses [`instance_seed`] and its own
/// noise stream, so parallel generation yields the same bytes as serial.
pub fn build_split(config: &SplitConfig) -> Result<Dataset, PolygenError> {
    if config.count == 0 {
        return Err(PolygenError::Config(
            "split must contain at least one instance".into(),
        ));
    }
    let instances = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let seed = instance_seed(config.base_seed, &config.split, i);
            let clean = generate_polygon(seed, config.height, config.width, &config.polygon)?;
            add_gaussian_noise(&clean, config.sigma, noise_seed(seed))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = DatasetManifest {
        format_version: super::FORMAT_VERSION,
        split: config.split.clone(),
        count: config.count,
        sigma: config.sigma,
        height: config.height,
        width: config.width,
        base_seed: config.base_seed,
        vertex_range: [config.polygon.vertices.0, config.polygon.vertices.1],
        radius_range: [config.polygon.radius.0, config.polygon.radius.1],
        instances: instances
            .iter()
            .enumerate()
            .map(|(id, inst)| InstanceMeta {
                id,
                seed: inst.seed,
                noise_seed: inst.noise_seed,
                vertices: inst.vertices.iter().map(|&(r, c)| [r, c]).collect(),
            })
            .collect(),
    };
    Ok(Dataset {
        manifest,
        instances,
    })
}
