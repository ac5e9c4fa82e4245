//! Voxelwise lesion probability from (skeleton probability, normalized b900).
//!
//! Two interchangeable backends: a deterministic threshold rule, and the
//! shallow CNN evaluated by sliding-window tiling on a 1.6 mm in-plane grid.

pub mod cnn;
pub mod weights;

pub use cnn::{cnn_forward, CnnError, Tensor};
pub use weights::{load_weights, SegModelWeights, WeightsError};

use crate::model::{regrid_in_plane, resample_to_grid, GridMeta, ModelError, ResampleMode, ScalarVolume};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Threshold,
    Cnn,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Threshold => "threshold",
            Backend::Cnn => "cnn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegConfig {
    pub backend: Backend,
    /// Patch size in voxels, (x, y, z).
    pub patch_size: [usize; 3],
    pub patch_overlap: f64,
    pub binarize_threshold: f64,
    pub skeleton_prob_min: f64,
    /// Normalized-b900 floor for the threshold backend.
    pub intensity_min: f64,
    /// In-plane spacing (mm) of the CNN inference grid.
    pub inference_spacing_mm: f64,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            backend: Backend::Threshold,
            patch_size: [64, 64, 64],
            patch_overlap: 0.5,
            binarize_threshold: 0.5,
            skeleton_prob_min: 0.5,
            intensity_min: 2000.0,
            inference_spacing_mm: 1.6,
        }
    }
}

#[derive(Debug, Error)]
pub enum SegError {
    #[error("invalid segmentation config: {0}")]
    Config(String),
    #[error("inputs are on different grids")]
    GridMismatch,
    #[error("cnn backend selected but no weights supplied")]
    MissingWeights,
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SegConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if !(self.patch_overlap > 0.0 && self.patch_overlap < 1.0) {
            return Err(SegError::Config(format!("patch_overlap {} outside (0, 1)", self.patch_overlap)));
        }
        if self.patch_size.iter().any(|&p| p < 8) {
            return Err(SegError::Config(format!("patch_size {:?} below 8", self.patch_size)));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(SegError::Config(format!("binarize_threshold {} outside (0, 1)", self.binarize_threshold)));
        }
        if !(self.inference_spacing_mm > 0.0) {
            return Err(SegError::Config("inference_spacing_mm must be > 0".into()));
        }
        Ok(())
    }
}

/// Probability map plus any non-fatal diagnostics.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub probability: ScalarVolume,
    pub warnings: Vec<String>,
}

/// 1 where skeleton probability and normalized intensity both clear their floors.
pub fn segment_threshold(skeleton_prob: &ScalarVolume, norm_b900: &ScalarVolume, cfg: &SegConfig) -> Result<ScalarVolume, SegError> {
    if !skeleton_prob.meta().same_grid(norm_b900.meta()) {
        return Err(SegError::GridMismatch);
    }
    let data = skeleton_prob
        .data()
        .iter()
        .zip(norm_b900.data())
        .map(|(&p, &v)| if p >= cfg.skeleton_prob_min && v >= cfg.intensity_min { 1.0 } else { 0.0 })
        .collect();
    Ok(ScalarVolume::new(*skeleton_prob.meta(), data)?)
}

/// Binary mask of voxels with probability ≥ `threshold`.
pub fn binarize(prob: &ScalarVolume, threshold: f64) -> Result<ScalarVolume, SegError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SegError::Config(format!("binarize threshold {threshold} outside (0, 1)")));
    }
    Ok(prob.map(|p| if p >= threshold { 1.0 } else { 0.0 })?)
}

/// Patch origins along one axis; the final patch may run past the edge.
pub fn tile_starts(n: usize, patch: usize, overlap: f64) -> Vec<usize> {
    let stride = ((patch as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut starts = vec![0];
    let mut s = 0;
    while s + patch < n {
        s += stride;
        starts.push(s);
    }
    starts
}

fn extract_patch(a: &ScalarVolume, b: &ScalarVolume, origin: [usize; 3], size: [usize; 3]) -> Tensor {
    let m = a.meta();
    let [px, py, pz] = size;
    let mut t = Tensor::zeros(2, [pz, py, px]);
    let n = t.spatial_len();
    for z in 0..pz {
        let gz = origin[2] + z;
        if gz >= m.dims[2] {
            break;
        }
        for y in 0..py {
            let gy = origin[1] + y;
            if gy >= m.dims[1] {
                break;
            }
            let xs = px.min(m.dims[0].saturating_sub(origin[0]));
            let g0 = m.index(origin[0], gy, gz);
            let row = (z * py + y) * px;
            for x in 0..xs {
                t.data[row + x] = a.data()[g0 + x] as f32;
                t.data[n + row + x] = b.data()[g0 + x] as f32;
            }
        }
    }
    t
}

/// Sliding-window CNN inference on the volume's own grid. Overlapping
/// predictions are averaged with uniform weights.
pub fn tiled_inference(
    skeleton_prob: &ScalarVolume,
    norm_b900: &ScalarVolume,
    weights: &SegModelWeights,
    cfg: &SegConfig,
) -> Result<ScalarVolume, SegError> {
    cfg.validate()?;
    if !skeleton_prob.meta().same_grid(norm_b900.meta()) {
        return Err(SegError::GridMismatch);
    }
    let meta = *skeleton_prob.meta();
    let size = cfg.patch_size;
    let axes: Vec<Vec<usize>> = (0..3).map(|k| tile_starts(meta.dims[k], size[k], cfg.patch_overlap)).collect();
    let mut origins = Vec::new();
    for &z in &axes[2] {
        for &y in &axes[1] {
            for &x in &axes[0] {
                origins.push([x, y, z]);
            }
        }
    }
    let mut sum = vec![0f64; meta.len()];
    let mut count = vec![0u32; meta.len()];
    let chunk = (rayon::current_num_threads() * 2).max(1);
    for batch in origins.chunks(chunk) {
        let outputs: Vec<Tensor> = batch
            .par_iter()
            .map(|&o| cnn_forward(weights, &extract_patch(skeleton_prob, norm_b900, o, size)))
            .collect::<Result<_, _>>()?;
        // fixed accumulation order keeps results independent of thread count
        for (o, out) in batch.iter().zip(outputs) {
            let [px, py, pz] = size;
            for z in 0..pz.min(meta.dims[2] - o[2]) {
                for y in 0..py.min(meta.dims[1] - o[1]) {
                    let xs = px.min(meta.dims[0] - o[0]);
                    let g0 = meta.index(o[0], o[1] + y, o[2] + z);
                    let row = (z * py + y) * px;
                    for x in 0..xs {
                        sum[g0 + x] += out.data[row + x] as f64;
                        count[g0 + x] += 1;
                    }
                }
            }
        }
    }
    let data = sum.into_iter().zip(count).map(|(s, c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    Ok(ScalarVolume::new(meta, data)?)
}

fn inference_grid(meta: &GridMeta, spacing: f64) -> GridMeta {
    if meta.spacing[0] == spacing && meta.spacing[1] == spacing {
        *meta
    } else {
        regrid_in_plane(meta, spacing)
    }
}

/// CNN backend: resample to the inference grid, tile, and resample back.
pub fn segment_cnn(
    skeleton_prob: &ScalarVolume,
    norm_b900: &ScalarVolume,
    weights: &SegModelWeights,
    cfg: &SegConfig,
) -> Result<Segmentation, SegError> {
    cfg.validate()?;
    if !skeleton_prob.meta().same_grid(norm_b900.meta()) {
        return Err(SegError::GridMismatch);
    }
    let native = *skeleton_prob.meta();
    if skeleton_prob.data().iter().all(|&v| v == 0.0) {
        return Ok(Segmentation {
            probability: ScalarVolume::zeros(native),
            warnings: vec!["skeleton probability map is empty; lesion probability set to 0".into()],
        });
    }
    let grid = inference_grid(&native, cfg.inference_spacing_mm);
    let skel = resample_to_grid(skeleton_prob, &grid, ResampleMode::Trilinear)?;
    let b900 = resample_to_grid(norm_b900, &grid, ResampleMode::Trilinear)?;
    let prob = tiled_inference(&skel, &b900, weights, cfg)?;
    let probability = resample_to_grid(&prob, &native, ResampleMode::Trilinear)?;
    Ok(Segmentation { probability, warnings: Vec::new() })
}

/// Dispatches on `cfg.backend`.
pub fn segment(
    skeleton_prob: &ScalarVolume,
    norm_b900: &ScalarVolume,
    weights: Option<&SegModelWeights>,
    cfg: &SegConfig,
) -> Result<Segmentation, SegError> {
    match cfg.backend {
        Backend::Threshold => Ok(Segmentation {
            probability: segment_threshold(skeleton_prob, norm_b900, cfg)?,
            warnings: Vec::new(),
        }),
        Backend::Cnn => segment_cnn(skeleton_prob, norm_b900, weights.ok_or(SegError::MissingWeights)?, cfg),
    }
}
