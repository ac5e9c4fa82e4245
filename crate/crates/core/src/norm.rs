//! Two-stage b900 signal standardisation.
//!
//! Stage 1 equalises gain across station gaps by matching the median
//! foreground intensity of the slices either side of each gap. Stage 2
//! scales the whole volume so the spinal-canal median hits a fixed target.
//! Both stages are ratio-of-medians gains, so a pure multiplicative
//! corruption is undone exactly.

use crate::adc::{compute_cdwi, FitError, FitResult};
use crate::model::{ModelError, ScalarVolume, StationSlab, StudyBundle};
use crate::numfmt;
use crate::stats::descriptive::{median_in_place, percentile_sorted};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    /// Slices sampled on each side of a station gap.
    pub boundary_slices: usize,
    /// Foreground = voxels above this fraction of the slice's high percentile.
    pub noise_floor_fraction: f64,
    pub noise_floor_percentile: f64,
    /// Canal median after inter-scan normalization (normalized units).
    pub target: f64,
    pub b_target: f64,
    /// Overrides the canal-derived reference station.
    pub reference_station: Option<usize>,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            boundary_slices: 3,
            noise_floor_fraction: 0.05,
            noise_floor_percentile: 99.0,
            target: 1000.0,
            b_target: 900.0,
            reference_station: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationEqualization {
    pub volume: ScalarVolume,
    pub gains: Vec<f64>,
    pub reference_station: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum NormError {
    #[error("no stations")]
    NoStations,
    #[error("reference station {0} out of range")]
    BadReference(usize),
    #[error("spinal canal mask missing")]
    MissingCanal { stage1: Box<StationEqualization> },
    #[error("spinal canal mask is empty")]
    EmptyCanal { stage1: Option<Box<StationEqualization>> },
    #[error("canal median {median} is not positive")]
    NonPositiveCanal { median: f64, stage1: Option<Box<StationEqualization>> },
    #[error("canal mask grid differs from the volume grid")]
    GridMismatch,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl NormError {
    /// The station-equalized volume, when stage 1 completed before the failure.
    pub fn stage1(&self) -> Option<&StationEqualization> {
        match self {
            NormError::MissingCanal { stage1 } => Some(stage1),
            NormError::EmptyCanal { stage1 } | NormError::NonPositiveCanal { stage1, .. } => stage1.as_deref(),
            _ => None,
        }
    }

    fn attach(self, s1: &StationEqualization) -> Self {
        match self {
            NormError::EmptyCanal { .. } => NormError::EmptyCanal { stage1: Some(Box::new(s1.clone())) },
            NormError::NonPositiveCanal { median, .. } => {
                NormError::NonPositiveCanal { median, stage1: Some(Box::new(s1.clone())) }
            }
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationResult {
    #[serde(skip)]
    pub normalized_b900: Option<ScalarVolume>,
    #[serde(with = "numfmt::vec_real")]
    pub station_gains: Vec<f64>,
    #[serde(with = "numfmt::real")]
    pub scan_gain: f64,
    #[serde(with = "numfmt::real")]
    pub canal_median_before: f64,
    #[serde(with = "numfmt::real")]
    pub canal_median_after: f64,
    pub reference_station: usize,
    pub warnings: Vec<String>,
}

impl NormalizationResult {
    pub fn volume(&self) -> &ScalarVolume {
        self.normalized_b900.as_ref().expect("normalized volume present")
    }
}

fn slice_foreground(vol: &ScalarVolume, z: usize, cfg: &NormConfig) -> Vec<f64> {
    let n = vol.meta().slice_len();
    let slice = &vol.data()[z * n..(z + 1) * n];
    let mut sorted = slice.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let floor = cfg.noise_floor_fraction * percentile_sorted(&sorted, cfg.noise_floor_percentile);
    slice.iter().copied().filter(|&v| v > floor && v > 0.0).collect()
}

fn side_median(vol: &ScalarVolume, zs: impl Iterator<Item = usize>, cfg: &NormConfig) -> Option<f64> {
    let mut pooled: Vec<f64> = zs.flat_map(|z| slice_foreground(vol, z, cfg)).collect();
    median_in_place(&mut pooled).filter(|&m| m > 0.0)
}

/// Station containing the midpoint of the canal's z-extent.
pub fn canal_reference_station(canal: &ScalarVolume, slabs: &[StationSlab]) -> Option<usize> {
    let n = canal.meta().slice_len();
    let zs: Vec<usize> = canal.mask_indices().into_iter().map(|i| i / n).collect();
    let (lo, hi) = (*zs.iter().min()?, *zs.iter().max()?);
    let mid = (lo + hi) / 2;
    slabs.iter().position(|s| s.contains(mid))
}

/// Stage 1: per-station gains propagated outward from `reference`.
pub fn interstation_equalize(
    cdwi: &ScalarVolume,
    slabs: &[StationSlab],
    reference: usize,
    cfg: &NormConfig,
) -> Result<StationEqualization, NormError> {
    if slabs.is_empty() {
        return Err(NormError::NoStations);
    }
    if reference >= slabs.len() {
        return Err(NormError::BadReference(reference));
    }
    let k = cfg.boundary_slices.max(1);
    let mut warnings = Vec::new();
    // ratio[i] = median(lower side of gap i) / median(upper side)
    let ratios: Vec<f64> = slabs
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (lo, hi) = (pair[0], pair[1]);
            let lo_k = k.min(lo.len());
            let hi_k = k.min(hi.len());
            let below = side_median(cdwi, (lo.z_end + 1 - lo_k)..=lo.z_end, cfg);
            let above = side_median(cdwi, hi.z_start..hi.z_start + hi_k, cfg);
            match (below, above) {
                (Some(b), Some(a)) => b / a,
                _ => {
                    warnings.push(format!("station gap {}/{}: no foreground, gain set to 1", i, i + 1));
                    1.0
                }
            }
        })
        .collect();

    let mut gains = vec![1.0; slabs.len()];
    for i in reference..slabs.len() - 1 {
        gains[i + 1] = gains[i] * ratios[i];
    }
    for i in (0..reference).rev() {
        gains[i] = gains[i + 1] / ratios[i];
    }

    let n = cdwi.meta().slice_len();
    let mut data = cdwi.data().to_vec();
    for (slab, &g) in slabs.iter().zip(&gains) {
        if g != 1.0 {
            for v in &mut data[slab.z_start * n..(slab.z_end + 1) * n] {
                *v *= g;
            }
        }
    }
    Ok(StationEqualization { volume: ScalarVolume::new(*cdwi.meta(), data)?, gains, reference_station: reference, warnings })
}

fn canal_median(vol: &ScalarVolume, canal: &ScalarVolume) -> Result<f64, NormError> {
    if !canal.meta().same_grid(vol.meta()) {
        return Err(NormError::GridMismatch);
    }
    let mut values: Vec<f64> = canal.mask_indices().into_iter().map(|i| vol.data()[i]).collect();
    median_in_place(&mut values).ok_or(NormError::EmptyCanal { stage1: None })
}

/// Stage 2: scale so the canal median equals `target`. Returns the scaled
/// volume, the gain, and the canal median before scaling.
pub fn interscan_normalize(vol: &ScalarVolume, canal: &ScalarVolume, target: f64) -> Result<(ScalarVolume, f64, f64), NormError> {
    let before = canal_median(vol, canal)?;
    if !(before > 0.0) {
        return Err(NormError::NonPositiveCanal { median: before, stage1: None });
    }
    let gain = target / before;
    Ok((vol.map(|v| v * gain)?, gain, before))
}

/// cDWI(b900) → station equalization → canal-anchored scan normalization.
pub fn normalize_b900(fit: &FitResult, bundle: &StudyBundle, cfg: &NormConfig) -> Result<NormalizationResult, NormError> {
    let cdwi = compute_cdwi(fit, cfg.b_target)?;
    normalize_volume(&cdwi, &bundle.station_slabs, bundle.canal_mask.as_ref(), cfg)
}

/// Both stages on an already-computed high-b volume.
pub fn normalize_volume(
    cdwi: &ScalarVolume,
    slabs: &[StationSlab],
    canal: Option<&ScalarVolume>,
    cfg: &NormConfig,
) -> Result<NormalizationResult, NormError> {
    let mut warnings = Vec::new();
    let reference = match (cfg.reference_station, canal) {
        (Some(r), _) => r,
        (None, Some(c)) => canal_reference_station(c, slabs).unwrap_or_else(|| {
            warnings.push("canal mask empty; station 0 used as reference".into());
            0
        }),
        (None, None) => {
            warnings.push("canal mask missing; station 0 used as reference".into());
            0
        }
    };
    let stage1 = interstation_equalize(cdwi, slabs, reference, cfg)?;
    let Some(canal) = canal else {
        return Err(NormError::MissingCanal { stage1: Box::new(stage1) });
    };
    let (volume, scan_gain, before) =
        interscan_normalize(&stage1.volume, canal, cfg.target).map_err(|e| e.attach(&stage1))?;
    let after = canal_median(&volume, canal)?;
    warnings.extend(stage1.warnings.iter().cloned());
    Ok(NormalizationResult {
        normalized_b900: Some(volume),
        station_gains: stage1.gains,
        scan_gain,
        canal_median_before: before,
        canal_median_after: after,
        reference_station: reference,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{even_slabs, GridMeta};

    fn two_station(lower: f64, upper: f64) -> (ScalarVolume, Vec<StationSlab>) {
        let meta = GridMeta::new([4, 4, 8], [1.0; 3], [0.0; 3]).unwrap();
        let vol = ScalarVolume::from_fn(meta, |_, _, z| if z < 4 { lower } else { upper }).unwrap();
        (vol, even_slabs(8, 2))
    }

    #[test]
    fn single_station_is_identity() {
        let meta = GridMeta::new([3, 3, 5], [1.0; 3], [0.0; 3]).unwrap();
        let vol = ScalarVolume::from_fn(meta, |x, y, z| (1 + x + y + z) as f64).unwrap();
        let out = interstation_equalize(&vol, &even_slabs(5, 1), 0, &NormConfig::default()).unwrap();
        assert_eq!(out.gains, vec![1.0]);
        assert_eq!(out.volume, vol);
    }

    #[test]
    fn ratio_of_boundary_medians() {
        let (vol, slabs) = two_station(100.0, 80.0);
        let out = interstation_equalize(&vol, &slabs, 0, &NormConfig::default()).unwrap();
        assert_eq!(out.gains, vec![1.0, 1.25]);
        assert!(out.volume.data().iter().all(|&v| v == 100.0));
    }

    #[test]
    fn downward_propagation() {
        let (vol, slabs) = two_station(50.0, 100.0);
        let out = interstation_equalize(&vol, &slabs, 1, &NormConfig::default()).unwrap();
        assert_eq!(out.gains, vec![2.0, 1.0]);
    }

    #[test]
    fn empty_boundary_gets_unit_gain() {
        let (vol, slabs) = two_station(0.0, 80.0);
        let out = interstation_equalize(&vol, &slabs, 0, &NormConfig::default()).unwrap();
        assert_eq!(out.gains, vec![1.0, 1.0]);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn scan_gain_from_canal_median() {
        let meta = GridMeta::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let vol = ScalarVolume::from_fn(meta, |x, _, _| if x == 0 { 500.0 } else { 40.0 }).unwrap();
        let canal = ScalarVolume::from_fn(meta, |x, _, _| if x == 0 { 1.0 } else { 0.0 }).unwrap();
        let (out, gain, before) = interscan_normalize(&vol, &canal, 1000.0).unwrap();
        assert_eq!((gain, before), (2.0, 500.0));
        assert!(out.data().iter().zip(vol.data()).all(|(a, b)| *a == 2.0 * b));
        let (same, gain, _) = interscan_normalize(&out, &canal, 1000.0).unwrap();
        assert_eq!(gain, 1.0);
        assert_eq!(same, out);
    }

    #[test]
    fn empty_canal_errors() {
        let meta = GridMeta::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let vol = ScalarVolume::filled(meta, 3.0);
        let canal = ScalarVolume::zeros(meta);
        assert!(matches!(interscan_normalize(&vol, &canal, 1000.0), Err(NormError::EmptyCanal { .. })));
        let err = normalize_volume(&vol, &even_slabs(2, 1), Some(&canal), &NormConfig::default()).unwrap_err();
        assert!(err.stage1().is_some());
    }

    #[test]
    fn missing_canal_keeps_stage1() {
        let (vol, slabs) = two_station(100.0, 80.0);
        let err = normalize_volume(&vol, &slabs, None, &NormConfig::default()).unwrap_err();
        let s1 = err.stage1().expect("stage 1 retained");
        assert_eq!(s1.gains, vec![1.0, 1.25]);
    }
}
