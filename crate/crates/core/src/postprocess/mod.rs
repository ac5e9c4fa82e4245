//! Binary lesion mask → curated lesion set.
//!
//! Fixed order: connected components, low-gADC filter, organ-overlap
//! exclusion, minimum-size filter, skeletal-region attribution. Each
//! excluded ROI carries the first rule it failed.

pub mod components;

pub use components::{connected_components, Components, Connectivity};

use crate::model::{voxel_volume_ml, GridMeta, LabelVolume, ModelError, RegionCode, ScalarVolume};
use crate::numfmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PostError {
    #[error("mask, gADC, organ, and region volumes must share one grid")]
    GridMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    LowGadc,
    OrganOverlap,
    TooSmall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostConfig {
    pub connectivity: Connectivity,
    /// Exclude an ROI when at least this fraction of voxels is below `adc_floor`.
    pub gadc_fraction: f64,
    /// mm²/s
    pub adc_floor: f64,
    /// Exclude an ROI when at least this fraction overlaps organs (0 = any overlap).
    pub organ_overlap_min: f64,
    pub min_voxels: usize,
}

impl Default for PostConfig {
    fn default() -> Self {
        PostConfig {
            connectivity: Connectivity::TwentySix,
            gadc_fraction: 0.65,
            adc_floor: 0.5e-3,
            organ_overlap_min: 0.10,
            min_voxels: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LesionRoi {
    pub label: u32,
    /// Linear voxel indices, ascending.
    pub voxels: Vec<usize>,
    pub volume_ml: f64,
    pub region: RegionCode,
    /// gADC (mm²/s) at each voxel, same order as `voxels`.
    pub gadc_values: Vec<f64>,
    pub excluded_reason: Option<ExclusionReason>,
}

impl LesionRoi {
    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LesionSet {
    pub kept: Vec<LesionRoi>,
    pub excluded: Vec<LesionRoi>,
    pub meta: GridMeta,
    pub warnings: Vec<String>,
}

/// Serializable per-ROI record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub label: u32,
    pub region: RegionCode,
    pub voxel_count: usize,
    #[serde(with = "numfmt::real")]
    pub volume_ml: f64,
    pub excluded_reason: Option<ExclusionReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSetSummary {
    pub kept: Vec<RoiSummary>,
    pub excluded: Vec<RoiSummary>,
    pub warnings: Vec<String>,
}

impl LesionSet {
    pub fn kept_mask(&self) -> ScalarVolume {
        let mut data = vec![0.0; self.meta.len()];
        for roi in &self.kept {
            for &i in &roi.voxels {
                data[i] = 1.0;
            }
        }
        ScalarVolume::new(self.meta, data).expect("finite mask")
    }

    /// Kept ROIs written with their labels; background 0.
    pub fn label_map(&self) -> Vec<u32> {
        let mut data = vec![0u32; self.meta.len()];
        for roi in &self.kept {
            for &i in &roi.voxels {
                data[i] = roi.label;
            }
        }
        data
    }

    pub fn kept_voxel_count(&self) -> usize {
        self.kept.iter().map(LesionRoi::voxel_count).sum()
    }

    pub fn summary(&self) -> LesionSetSummary {
        let s = |r: &LesionRoi| RoiSummary {
            label: r.label,
            region: r.region,
            voxel_count: r.voxel_count(),
            volume_ml: r.volume_ml,
            excluded_reason: r.excluded_reason,
        };
        LesionSetSummary {
            kept: self.kept.iter().map(s).collect(),
            excluded: self.excluded.iter().map(s).collect(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Components of `mask` as ROIs, with gADC samples attached.
pub fn build_rois(mask: &ScalarVolume, gadc: &ScalarVolume, connectivity: Connectivity) -> Result<Vec<LesionRoi>, PostError> {
    if !mask.meta().same_grid(gadc.meta()) {
        return Err(PostError::GridMismatch);
    }
    let bits: Vec<bool> = mask.data().iter().map(|&v| v > 0.5).collect();
    let comps = connected_components(&bits, mask.meta(), connectivity);
    let vml = voxel_volume_ml(mask.meta());
    Ok(comps
        .components
        .into_iter()
        .enumerate()
        .map(|(k, voxels)| LesionRoi {
            label: k as u32 + 1,
            volume_ml: voxels.len() as f64 * vml,
            gadc_values: voxels.iter().map(|&i| gadc.data()[i]).collect(),
            voxels,
            region: RegionCode::WholeSkeleton,
            excluded_reason: None,
        })
        .collect())
}

fn partition(rois: Vec<LesionRoi>, reason: ExclusionReason, fails: impl Fn(&LesionRoi) -> bool) -> (Vec<LesionRoi>, Vec<LesionRoi>) {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for mut roi in rois {
        if roi.excluded_reason.is_none() && fails(&roi) {
            roi.excluded_reason = Some(reason);
            excluded.push(roi);
        } else {
            kept.push(roi);
        }
    }
    (kept, excluded)
}

/// Excludes ROIs whose fraction of voxels with gADC strictly below
/// `adc_floor` is at least `fraction`.
pub fn filter_by_gadc(rois: Vec<LesionRoi>, fraction: f64, adc_floor: f64) -> (Vec<LesionRoi>, Vec<LesionRoi>) {
    partition(rois, ExclusionReason::LowGadc, |r| {
        let low = r.gadc_values.iter().filter(|&&v| v < adc_floor).count();
        !r.gadc_values.is_empty() && low as f64 >= fraction * r.gadc_values.len() as f64
    })
}

/// Excludes ROIs that touch the organ mask with overlap fraction ≥ `min_fraction`.
pub fn exclude_organ_overlap(rois: Vec<LesionRoi>, organ_mask: &ScalarVolume, min_fraction: f64) -> (Vec<LesionRoi>, Vec<LesionRoi>) {
    partition(rois, ExclusionReason::OrganOverlap, |r| {
        let inside = r.voxels.iter().filter(|&&i| organ_mask.is_set(i)).count();
        inside > 0 && inside as f64 >= min_fraction * r.voxels.len() as f64
    })
}

pub fn min_size_filter(rois: Vec<LesionRoi>, min_voxels: usize) -> (Vec<LesionRoi>, Vec<LesionRoi>) {
    partition(rois, ExclusionReason::TooSmall, |r| r.voxels.len() < min_voxels)
}

/// Assigns each ROI the region with the largest voxel overlap (ties go to
/// the lower code). ROIs outside every region get `WholeSkeleton`; their
/// labels are returned as warnings.
pub fn attribute_regions(rois: &mut [LesionRoi], regions: &LabelVolume) -> Vec<String> {
    let mut warnings = Vec::new();
    for roi in rois.iter_mut() {
        let mut counts = [0usize; 7];
        for &i in &roi.voxels {
            let c = regions.data()[i] as usize;
            if (1..=6).contains(&c) {
                counts[c] += 1;
            }
        }
        let best = (1..=6).fold(0usize, |best, c| if counts[c] > counts[best] { c } else { best });
        roi.region = match RegionCode::from_code(best as u32).ok().flatten() {
            Some(r) if counts[best] > 0 => r,
            _ => {
                warnings.push(format!("roi {} lies outside all skeletal regions", roi.label));
                RegionCode::WholeSkeleton
            }
        };
    }
    warnings
}

/// Runs the full post-processing chain.
pub fn postprocess(
    mask: &ScalarVolume,
    gadc: &ScalarVolume,
    organ_mask: &ScalarVolume,
    regions: &LabelVolume,
    cfg: &PostConfig,
) -> Result<LesionSet, PostError> {
    let meta = *mask.meta();
    if !organ_mask.meta().same_grid(&meta) || !regions.meta().same_grid(&meta) {
        return Err(PostError::GridMismatch);
    }
    let rois = build_rois(mask, gadc, cfg.connectivity)?;
    let (rois, mut excluded) = filter_by_gadc(rois, cfg.gadc_fraction, cfg.adc_floor);
    let (rois, ex) = exclude_organ_overlap(rois, organ_mask, cfg.organ_overlap_min);
    excluded.extend(ex);
    let (mut kept, ex) = min_size_filter(rois, cfg.min_voxels);
    excluded.extend(ex);
    excluded.sort_by_key(|r| r.label);
    let warnings = attribute_regions(&mut kept, regions);
    Ok(LesionSet { kept, excluded, meta, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi(gadc: Vec<f64>) -> LesionRoi {
        LesionRoi {
            label: 1,
            voxels: (0..gadc.len()).collect(),
            volume_ml: gadc.len() as f64,
            region: RegionCode::WholeSkeleton,
            gadc_values: gadc,
            excluded_reason: None,
        }
    }

    fn low_high(low: usize, total: usize) -> Vec<f64> {
        (0..total).map(|i| if i < low { 0.3e-3 } else { 0.9e-3 }).collect()
    }

    #[test]
    fn gadc_fraction_boundary() {
        let (kept, ex) = filter_by_gadc(vec![roi(low_high(65, 100))], 0.65, 0.5e-3);
        assert!(kept.is_empty());
        assert_eq!(ex[0].excluded_reason, Some(ExclusionReason::LowGadc));
        let (kept, _) = filter_by_gadc(vec![roi(low_high(64, 100))], 0.65, 0.5e-3);
        assert_eq!(kept.len(), 1);
        let (kept, _) = filter_by_gadc(vec![roi(vec![0.5e-3; 100])], 0.65, 0.5e-3);
        assert_eq!(kept.len(), 1, "values exactly at the floor are not below it");
    }

    fn organ(meta: GridMeta, inside: usize) -> ScalarVolume {
        ScalarVolume::from_fn(meta, |x, _, _| if x < inside { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn organ_overlap_rules() {
        let meta = GridMeta::new([100, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let r = || roi(vec![1e-3; 100]);
        let (k, e) = exclude_organ_overlap(vec![r()], &organ(meta, 100), 0.1);
        assert!(k.is_empty() && e[0].excluded_reason == Some(ExclusionReason::OrganOverlap));
        let (k, _) = exclude_organ_overlap(vec![r()], &organ(meta, 0), 0.1);
        assert_eq!(k.len(), 1);
        let (k, _) = exclude_organ_overlap(vec![r()], &organ(meta, 5), 0.1);
        assert_eq!(k.len(), 1);
        let (k, _) = exclude_organ_overlap(vec![r()], &organ(meta, 5), 0.0);
        assert!(k.is_empty());
        let (k, _) = exclude_organ_overlap(vec![r()], &organ(meta, 0), 0.0);
        assert_eq!(k.len(), 1);
    }

    #[test]
    fn size_filter() {
        let (k, e) = min_size_filter(vec![roi(vec![1e-3; 1])], 10);
        assert!(k.is_empty() && e[0].excluded_reason == Some(ExclusionReason::TooSmall));
        let (k, _) = min_size_filter(vec![roi(vec![1e-3; 10])], 10);
        assert_eq!(k.len(), 1);
        let (k, _) = min_size_filter(vec![roi(vec![1e-3; 1])], 0);
        assert_eq!(k.len(), 1);
    }

    fn labelled(codes: Vec<u32>) -> LabelVolume {
        let meta = GridMeta::new([codes.len(), 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        LabelVolume::new(meta, codes).unwrap()
    }

    #[test]
    fn region_majority_and_ties() {
        let pelvis = RegionCode::Pelvis.code();
        let lumbar = RegionCode::LumbarSpine.code();
        let mut rois = vec![roi(vec![1e-3; 10])];
        attribute_regions(&mut rois, &labelled(vec![pelvis; 10]));
        assert_eq!(rois[0].region, RegionCode::Pelvis);
        let mut codes = vec![pelvis; 6];
        codes.extend(vec![lumbar; 4]);
        attribute_regions(&mut rois, &labelled(codes));
        assert_eq!(rois[0].region, RegionCode::Pelvis);
        let mut codes = vec![lumbar; 5];
        codes.extend(vec![pelvis; 5]);
        attribute_regions(&mut rois, &labelled(codes));
        assert_eq!(rois[0].region, RegionCode::Pelvis, "tie goes to the lower code");
        let w = attribute_regions(&mut rois, &labelled(vec![0; 10]));
        assert_eq!(rois[0].region, RegionCode::WholeSkeleton);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn first_failing_rule_wins() {
        let meta = GridMeta::new([12, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mask = ScalarVolume::filled(meta, 1.0);
        let gadc = ScalarVolume::filled(meta, 0.1e-3);
        let organs = ScalarVolume::filled(meta, 1.0);
        let regions = LabelVolume::new(meta, vec![1; 12]).unwrap();
        let set = postprocess(&mask, &gadc, &organs, &regions, &PostConfig::default()).unwrap();
        assert_eq!(set.excluded.len(), 1);
        assert_eq!(set.excluded[0].excluded_reason, Some(ExclusionReason::LowGadc));
    }
}
