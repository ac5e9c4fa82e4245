//! Overlap between an automated and a reference mask: Dice, precision,
//! recall, and symmetric average surface distance.

use crate::model::{GridMeta, LabelVolume, RegionCode};
use crate::numfmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OverlapError {
    #[error("masks have {auto} and {manual} voxels, grid has {grid}")]
    Length { auto: usize, manual: usize, grid: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    #[serde(with = "numfmt::opt_real")]
    pub dice: Option<f64>,
    #[serde(with = "numfmt::opt_real")]
    pub precision: Option<f64>,
    #[serde(with = "numfmt::opt_real")]
    pub recall: Option<f64>,
    #[serde(with = "numfmt::opt_real")]
    pub asd_mm: Option<f64>,
    pub auto_voxels: usize,
    pub manual_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionOverlap {
    pub region: RegionCode,
    pub metrics: OverlapMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub global: OverlapMetrics,
    pub regions: Vec<RegionOverlap>,
}

/// Mask voxels with at least one face neighbour outside the mask (the grid
/// edge counts as outside).
pub fn boundary(mask: &[bool], meta: &GridMeta) -> Vec<bool> {
    let [nx, ny, nz] = meta.dims;
    let mut out = vec![false; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = meta.index(x, y, z);
                if !mask[i] {
                    continue;
                }
                let edge = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                out[i] = edge
                    || !mask[i - 1]
                    || !mask[i + 1]
                    || !mask[i - nx]
                    || !mask[i + nx]
                    || !mask[i - nx * ny]
                    || !mask[i + nx * ny];
            }
        }
    }
    out
}

/// Lower-envelope squared distance transform along one line with sample
/// positions `i * spacing`.
fn edt_1d(f: &[f64], spacing: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let pos = |i: usize| i as f64 * spacing;
    let intersect = |p: usize, q: usize| ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
    let mut k = 0usize;
    let mut first = None;
    for q in 0..n {
        if f[q].is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        // z[0] is -inf, so the loop always stops at k >= 0
        let mut s = intersect(v[k], q);
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        out[q] = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance (mm) from every voxel to the nearest `feature` voxel.
pub fn distance_transform(feature: &[bool], meta: &GridMeta) -> Vec<f64> {
    let [nx, ny, nz] = meta.dims;
    let mut d: Vec<f64> = feature.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }).collect();
    let nmax = nx.max(ny).max(nz);
    let (mut line, mut out) = (vec![0.0; nmax], vec![0.0; nmax]);
    let (mut v, mut zb) = (vec![0usize; nmax], vec![0.0; nmax + 1]);
    let strides = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = meta.dims[axis];
        let stride = strides[axis];
        let spacing = meta.spacing[axis];
        for start in 0..d.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = d[start + i * stride];
            }
            edt_1d(&line[..n], spacing, &mut out[..n], &mut v, &mut zb);
            for i in 0..n {
                d[start + i * stride] = out[i];
            }
        }
    }
    d.iter().map(|v| v.sqrt()).collect()
}

fn directed_mean(from: &[bool], to_dist: &[f64]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &b) in from.iter().enumerate() {
        if b {
            sum += to_dist[i];
            n += 1;
        }
    }
    sum / n as f64
}

pub fn overlap_metrics(auto: &[bool], manual: &[bool], meta: &GridMeta) -> Result<OverlapMetrics, OverlapError> {
    if auto.len() != meta.len() || manual.len() != meta.len() {
        return Err(OverlapError::Length { auto: auto.len(), manual: manual.len(), grid: meta.len() });
    }
    let a = auto.iter().filter(|&&v| v).count();
    let m = manual.iter().filter(|&&v| v).count();
    let inter = auto.iter().zip(manual).filter(|(&x, &y)| x && y).count() as f64;
    let ratio = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
    let dice = (a + m > 0).then(|| 2.0 * inter / (a + m) as f64);
    let asd_mm = (a > 0 && m > 0).then(|| {
        let (ba, bm) = (boundary(auto, meta), boundary(manual, meta));
        let (da, dm) = (distance_transform(&ba, meta), distance_transform(&bm, meta));
        0.5 * (directed_mean(&ba, &dm) + directed_mean(&bm, &da))
    });
    Ok(OverlapMetrics { dice, precision: ratio(inter, a), recall: ratio(inter, m), asd_mm, auto_voxels: a, manual_voxels: m })
}

/// Global metrics plus one entry per skeletal region (both masks restricted
/// to that region's voxels).
pub fn overlap_report(auto: &[bool], manual: &[bool], regions: &LabelVolume) -> Result<OverlapReport, OverlapError> {
    let meta = regions.meta();
    let global = overlap_metrics(auto, manual, meta)?;
    let mut out = Vec::new();
    for r in RegionCode::REGIONS {
        let code = r.code();
        let restrict = |m: &[bool]| -> Vec<bool> { m.iter().zip(regions.data()).map(|(&v, &c)| v && c == code).collect() };
        out.push(RegionOverlap { region: r, metrics: overlap_metrics(&restrict(auto), &restrict(manual), meta)? });
    }
    Ok(OverlapReport { global, regions: out })
}
