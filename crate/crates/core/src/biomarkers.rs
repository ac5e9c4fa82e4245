//! TDV, log-TDV, gADC distribution statistics, and the ROI size census,
//! globally and per skeletal region.
//!
//! Region membership is decided per ROI (see `postprocess::attribute_regions`),
//! so a lesion is never split across regions.

use crate::model::{voxel_volume_ml, RegionCode};
use crate::numfmt;
use crate::postprocess::{LesionRoi, LesionSet};
use crate::stats::descriptive::median_sorted;
use serde::{Deserialize, Serialize};

pub fn log_tdv(tdv_ml: f64) -> Option<f64> {
    (tdv_ml > 0.0).then(|| tdv_ml.ln())
}

/// Kept-voxel volume in mL; `None` selects all regions.
pub fn compute_tdv(lesions: &LesionSet, region: Option<RegionCode>) -> f64 {
    let n: usize = select(lesions, region).map(LesionRoi::voxel_count).sum();
    n as f64 * voxel_volume_ml(&lesions.meta)
}

fn select(lesions: &LesionSet, region: Option<RegionCode>) -> impl Iterator<Item = &LesionRoi> {
    lesions.kept.iter().filter(move |r| region.is_none_or(|g| g == RegionCode::WholeSkeleton || r.region == g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GadcStats {
    #[serde(with = "numfmt::real")]
    pub mean: f64,
    #[serde(with = "numfmt::real")]
    pub median: f64,
    #[serde(with = "numfmt::real")]
    pub variance: f64,
    #[serde(with = "numfmt::opt_real")]
    pub skewness: Option<f64>,
    #[serde(with = "numfmt::opt_real")]
    pub kurtosis: Option<f64>,
}

/// Moments with denominator n; kurtosis is non-excess. `None` for an empty
/// sample; skewness and kurtosis are `None` when the variance is zero.
pub fn describe(values: &[f64]) -> Option<GadcStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // sum in sorted order so the result does not depend on voxel order
    let mean = sorted.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in &sorted {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let shape = m2 > 0.0;
    Some(GadcStats {
        mean,
        median: median_sorted(&sorted),
        variance: m2,
        skewness: shape.then(|| m3 / m2.powf(1.5)),
        kurtosis: shape.then(|| m4 / (m2 * m2)),
    })
}

pub fn gadc_stats(lesions: &LesionSet, region: Option<RegionCode>) -> Option<GadcStats> {
    let values: Vec<f64> = select(lesions, region).flat_map(|r| r.gadc_values.iter().copied()).collect();
    describe(&values)
}

/// Kept ROIs with volume strictly above 1 mL and strictly above 3 mL.
pub fn roi_size_census<'a>(rois: impl IntoIterator<Item = &'a LesionRoi>) -> (usize, usize) {
    rois.into_iter().fold((0, 0), |(a, b), r| (a + (r.volume_ml > 1.0) as usize, b + (r.volume_ml > 3.0) as usize))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionBiomarkers {
    pub region: RegionCode,
    #[serde(with = "numfmt::real")]
    pub tdv_ml: f64,
    #[serde(with = "numfmt::opt_real")]
    pub log_tdv: Option<f64>,
    pub gadc: Option<GadcStats>,
    pub roi_count: usize,
    pub roi_count_gt_1ml: usize,
    pub roi_count_gt_3ml: usize,
}

/// Whole-skeleton entry first, then the six regions in code order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerRecord {
    pub regions: Vec<RegionBiomarkers>,
}

impl BiomarkerRecord {
    pub fn get(&self, region: RegionCode) -> Option<&RegionBiomarkers> {
        self.regions.iter().find(|r| r.region == region)
    }

    pub fn global(&self) -> &RegionBiomarkers {
        self.get(RegionCode::WholeSkeleton).expect("record always has a whole-skeleton entry")
    }
}

pub fn region_biomarkers(lesions: &LesionSet, region: RegionCode) -> RegionBiomarkers {
    let rois: Vec<&LesionRoi> = select(lesions, Some(region)).collect();
    let tdv_ml = compute_tdv(lesions, Some(region));
    let (gt1, gt3) = roi_size_census(rois.iter().copied());
    RegionBiomarkers {
        region,
        tdv_ml,
        log_tdv: log_tdv(tdv_ml),
        gadc: gadc_stats(lesions, Some(region)),
        roi_count: rois.len(),
        roi_count_gt_1ml: gt1,
        roi_count_gt_3ml: gt3,
    }
}

pub fn compute_biomarkers(lesions: &LesionSet) -> BiomarkerRecord {
    let mut regions = vec![region_biomarkers(lesions, RegionCode::WholeSkeleton)];
    regions.extend(RegionCode::REGIONS.iter().map(|&r| region_biomarkers(lesions, r)));
    BiomarkerRecord { regions }
}
