//! Grid search for the response cutoffs that maximize Youden's J, with
//! seeded case-level bootstrap CIs.
//!
//! Two independent searches: the responder pair (ΔTDV decrease, ΔgADC
//! increase) against "responder vs not", and the progression ΔTDV increase
//! against "progression vs not". Each candidate is scored by running the
//! full decision matrix with that cutoff and the defaults for the rest.

use crate::numfmt;
use crate::response::{Cutoffs, DeltaRecord, Outcome};
use crate::stats::bootstrap::{percentile_interval, resample_indices, Interval};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ITERATIONS: usize = 200;
pub const MIN_CASES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum CutoffError {
    #[error("need at least {MIN_CASES} cases, got {0}")]
    TooFewCases(usize),
    #[error("reference has only one class for the {0} search")]
    SingleClass(&'static str),
    #[error("empty or invalid grid for {0}")]
    EmptyGrid(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Axis {
    /// Grid values rounded to 1e-6 so decimal steps land on exact cutoffs.
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || !(self.hi >= self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Vec::new();
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| ((self.lo + i as f64 * self.step) * 1e6).round() / 1e6).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub tdv_decrease: Axis,
    pub gadc_increase: Axis,
    pub tdv_increase: Axis,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            tdv_decrease: Axis { lo: -80.0, hi: -10.0, step: 0.2 },
            gadc_increase: Axis { lo: 5.0, hi: 50.0, step: 0.5 },
            tdv_increase: Axis { lo: 10.0, hi: 80.0, step: 0.5 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffCase {
    pub delta: DeltaRecord,
    /// Reference outcome: Responder, Stable, or Progression.
    pub reference: Outcome,
}

/// Youden's J from weighted confusion counts; `None` if a class is absent.
pub fn youden(tp: f64, p: f64, tn: f64, n: f64) -> Option<f64> {
    (p > 0.0 && n > 0.0).then(|| tp / p + tn / n - 1.0)
}

/// J of binary predictions against binary truth.
pub fn youden_of(pred: &[bool], truth: &[bool]) -> Option<f64> {
    let (mut tp, mut p, mut tn, mut n) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &t) in pred.iter().zip(truth) {
        if t {
            p += 1.0;
            tp += a as u8 as f64;
        } else {
            n += 1.0;
            tn += !a as u8 as f64;
        }
    }
    youden(tp, p, tn, n)
}

/// Case reduced to what the decision matrix needs; undefined deltas are
/// never predicted positive.
#[derive(Clone, Copy)]
struct Prepared {
    dt: f64,
    dg: f64,
    roi_growth: bool,
    defined: bool,
    responder: bool,
    progression: bool,
}

fn prepare(cases: &[CutoffCase], defaults: &Cutoffs) -> Vec<Prepared> {
    cases
        .iter()
        .map(|c| {
            let d = &c.delta;
            Prepared {
                dt: d.delta_tdv_pct.unwrap_or(f64::NAN),
                dg: d.delta_median_gadc_pct.unwrap_or(f64::NAN),
                roi_growth: d.delta_roi_gt_1ml >= defaults.roi_gt_1ml_increase || d.delta_roi_gt_3ml >= defaults.roi_gt_3ml_increase,
                defined: d.delta_tdv_pct.is_some() && d.delta_median_gadc_pct.is_some(),
                responder: c.reference == Outcome::Responder,
                progression: c.reference == Outcome::Progression,
            }
        })
        .collect()
}

/// Responder under (dec, inc) with the default increase cutoff.
#[inline]
fn predicts_responder(c: &Prepared, dec: f64, inc: f64, tdv_inc: f64) -> bool {
    c.defined && !(c.dt > tdv_inc || c.roi_growth) && (c.dt <= dec || c.dg >= inc)
}

/// Progression under `tdv_inc` with the default gADC cutoff.
#[inline]
fn predicts_progression(c: &Prepared, tdv_inc: f64, gadc_inc: f64) -> bool {
    c.defined && (c.dt > tdv_inc || c.roi_growth) && c.dg < gadc_inc
}

fn weighted_j(cases: &[Prepared], weights: &[f64], truth: impl Fn(&Prepared) -> bool, pred: impl Fn(&Prepared) -> bool) -> Option<f64> {
    let (mut tp, mut p, mut tn, mut n) = (0.0, 0.0, 0.0, 0.0);
    for (c, &w) in cases.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let hit = pred(c);
        if truth(c) {
            p += w;
            tp += w * hit as u8 as f64;
        } else {
            n += w;
            tn += w * !hit as u8 as f64;
        }
    }
    youden(tp, p, tn, n)
}

/// Best cell; ties go to the cell closest to `default`, then the smallest
/// coordinates.
fn argmax<const K: usize>(cells: impl Iterator<Item = ([f64; K], Option<f64>)>, default: [f64; K]) -> Option<([f64; K], f64)> {
    let dist = |c: &[f64; K]| c.iter().zip(&default).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut best: Option<([f64; K], f64)> = None;
    for (cell, j) in cells {
        let Some(j) = j else { continue };
        let better = match &best {
            None => true,
            Some((b, bj)) => j > *bj || (j == *bj && (dist(&cell) < dist(b) || (dist(&cell) == dist(b) && cell < *b))),
        };
        if better {
            best = Some((cell, j));
        }
    }
    best
}

struct Grids {
    dec: Vec<f64>,
    inc: Vec<f64>,
    prog: Vec<f64>,
}

fn search_responder(cases: &[Prepared], w: &[f64], g: &Grids, d: &Cutoffs) -> Option<([f64; 2], f64)> {
    let cells = g.dec.iter().flat_map(|&dec| g.inc.iter().map(move |&inc| [dec, inc]));
    argmax(
        cells.map(|[dec, inc]| ([dec, inc], weighted_j(cases, w, |c| c.responder, |c| predicts_responder(c, dec, inc, d.tdv_increase)))),
        [d.tdv_decrease, d.gadc_increase],
    )
}

fn search_progression(cases: &[Prepared], w: &[f64], g: &Grids, d: &Cutoffs) -> Option<([f64; 1], f64)> {
    argmax(
        g.prog.iter().map(|&t| ([t], weighted_j(cases, w, |c| c.progression, |c| predicts_progression(c, t, d.gadc_increase)))),
        [d.tdv_increase],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponderCutoffs {
    #[serde(with = "numfmt::real")]
    pub tdv_decrease: f64,
    #[serde(with = "numfmt::real")]
    pub gadc_increase: f64,
    #[serde(with = "numfmt::real")]
    pub youden: f64,
    pub tdv_decrease_ci: Option<Interval>,
    pub gadc_increase_ci: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressionCutoff {
    #[serde(with = "numfmt::real")]
    pub tdv_increase: f64,
    #[serde(with = "numfmt::real")]
    pub youden: f64,
    pub tdv_increase_ci: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSearchResult {
    pub responder: ResponderCutoffs,
    pub progression: ProgressionCutoff,
    pub iterations: usize,
    /// Resamples in which both classes were present for each search.
    pub valid_responder_iterations: usize,
    pub valid_progression_iterations: usize,
    pub seed: u64,
    pub n_cases: usize,
}

pub fn optimize_cutoffs(cases: &[CutoffCase], grid: &GridSpec, defaults: &Cutoffs, iterations: usize, seed: u64) -> Result<CutoffSearchResult, CutoffError> {
    if cases.len() < MIN_CASES {
        return Err(CutoffError::TooFewCases(cases.len()));
    }
    let g = Grids { dec: grid.tdv_decrease.values(), inc: grid.gadc_increase.values(), prog: grid.tdv_increase.values() };
    if g.dec.is_empty() || g.inc.is_empty() {
        return Err(CutoffError::EmptyGrid("responder"));
    }
    if g.prog.is_empty() {
        return Err(CutoffError::EmptyGrid("progression"));
    }
    let prepared = prepare(cases, defaults);
    let ones = vec![1.0; prepared.len()];
    let (resp, j_resp) = search_responder(&prepared, &ones, &g, defaults).ok_or(CutoffError::SingleClass("responder"))?;
    let (prog, j_prog) = search_progression(&prepared, &ones, &g, defaults).ok_or(CutoffError::SingleClass("progression"))?;

    let n = prepared.len();
    let boots: Vec<(Option<[f64; 2]>, Option<f64>)> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut w = vec![0.0; n];
            for k in resample_indices(n, seed, i as u64) {
                w[k] += 1.0;
            }
            (search_responder(&prepared, &w, &g, defaults).map(|c| c.0), search_progression(&prepared, &w, &g, defaults).map(|c| c.0[0]))
        })
        .collect();
    let resp_boot: Vec<[f64; 2]> = boots.iter().filter_map(|b| b.0).collect();
    let prog_boot: Vec<f64> = boots.iter().filter_map(|b| b.1).collect();
    Ok(CutoffSearchResult {
        responder: ResponderCutoffs {
            tdv_decrease: resp[0],
            gadc_increase: resp[1],
            youden: j_resp,
            tdv_decrease_ci: percentile_interval(resp_boot.iter().map(|c| c[0])),
            gadc_increase_ci: percentile_interval(resp_boot.iter().map(|c| c[1])),
        },
        progression: ProgressionCutoff { tdv_increase: prog[0], youden: j_prog, tdv_increase_ci: percentile_interval(prog_boot.iter().copied()) },
        iterations,
        valid_responder_iterations: resp_boot.len(),
        valid_progression_iterations: prog_boot.len(),
        seed,
        n_cases: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::rec_classify;

    fn case(dt: f64, dg: f64, reference: Outcome) -> CutoffCase {
        CutoffCase {
            delta: DeltaRecord { delta_tdv_pct: Some(dt), delta_median_gadc_pct: Some(dg), delta_roi_gt_1ml: 0, delta_roi_gt_3ml: 0 },
            reference,
        }
    }

    /// Responders sit exactly on the default cutoffs, non-responders one grid
    /// step inside them, so only the defaults separate the classes.
    pub(crate) fn planted(per_group: usize) -> Vec<CutoffCase> {
        let mut v = Vec::new();
        for _ in 0..per_group {
            v.push(case(-40.0, 0.0, Outcome::Responder));
            v.push(case(0.0, 25.0, Outcome::Responder));
            v.push(case(-39.8, 24.8, Outcome::Stable));
            v.push(case(40.3, 0.0, Outcome::Progression));
            v.push(case(40.0, 0.0, Outcome::Stable));
        }
        v
    }

    #[test]
    fn axis_values_land_on_decimals() {
        let v = GridSpec::default().tdv_decrease.values();
        assert_eq!(v.len(), 351);
        assert!(v.contains(&-40.0) && v.contains(&-42.6));
        assert_eq!(GridSpec::default().gadc_increase.values().len(), 91);
        assert!(Axis { lo: 1.0, hi: 0.0, step: 1.0 }.values().is_empty());
    }

    #[test]
    fn planted_optimum() {
        let r = optimize_cutoffs(&planted(4), &GridSpec::default(), &Cutoffs::default(), 0, 1).unwrap();
        assert_eq!((r.responder.tdv_decrease, r.responder.gadc_increase), (-40.0, 25.0));
        assert_eq!(r.progression.tdv_increase, 40.0);
        assert_eq!((r.responder.youden, r.progression.youden), (1.0, 1.0));
        assert!(r.responder.tdv_decrease_ci.is_none());
    }

    #[test]
    fn matches_brute_force_on_small_grid() {
        let mut cases = Vec::new();
        let mut s = 99u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..40 {
            let reference = [Outcome::Responder, Outcome::Stable, Outcome::Progression][i % 3];
            cases.push(case(next() * 140.0 - 80.0, next() * 60.0 - 10.0, reference));
        }
        let grid = GridSpec {
            tdv_decrease: Axis { lo: -70.0, hi: -20.0, step: 5.0 },
            gadc_increase: Axis { lo: 10.0, hi: 40.0, step: 5.0 },
            tdv_increase: Axis { lo: 20.0, hi: 60.0, step: 5.0 },
        };
        let r = optimize_cutoffs(&cases, &grid, &Cutoffs::default(), 0, 1).unwrap();
        let truth: Vec<bool> = cases.iter().map(|c| c.reference == Outcome::Responder).collect();
        let mut best = f64::NEG_INFINITY;
        for dec in grid.tdv_decrease.values() {
            for inc in grid.gadc_increase.values() {
                let cut = Cutoffs { tdv_decrease: dec, gadc_increase: inc, ..Cutoffs::default() };
                let pred: Vec<bool> = cases.iter().map(|c| rec_classify(&c.delta, &cut).outcome == Outcome::Responder).collect();
                best = best.max(youden_of(&pred, &truth).unwrap());
            }
        }
        assert_eq!(r.responder.youden, best);
        let truth: Vec<bool> = cases.iter().map(|c| c.reference == Outcome::Progression).collect();
        let mut best = f64::NEG_INFINITY;
        for t in grid.tdv_increase.values() {
            let cut = Cutoffs { tdv_increase: t, ..Cutoffs::default() };
            let pred: Vec<bool> = cases.iter().map(|c| rec_classify(&c.delta, &cut).outcome == Outcome::Progression).collect();
            best = best.max(youden_of(&pred, &truth).unwrap());
        }
        assert_eq!(r.progression.youden, best);
    }

    #[test]
    fn class_swap_negates_j() {
        let pred = [true, true, false, false, true];
        let truth = [true, false, false, true, true];
        let swapped: Vec<bool> = truth.iter().map(|t| !t).collect();
        assert!((youden_of(&pred, &truth).unwrap() + youden_of(&pred, &swapped).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let few = planted(1);
        assert_eq!(optimize_cutoffs(&few[..4], &GridSpec::default(), &Cutoffs::default(), 0, 1).unwrap_err(), CutoffError::TooFewCases(4));
        let one: Vec<CutoffCase> = (0..12).map(|_| case(0.0, 0.0, Outcome::Stable)).collect();
        assert_eq!(optimize_cutoffs(&one, &GridSpec::default(), &Cutoffs::default(), 0, 1).unwrap_err(), CutoffError::SingleClass("responder"));
        let bad = GridSpec { tdv_increase: Axis { lo: 0.0, hi: 1.0, step: 0.0 }, ..GridSpec::default() };
        assert_eq!(optimize_cutoffs(&planted(3), &bad, &Cutoffs::default(), 0, 1).unwrap_err(), CutoffError::EmptyGrid("progression"));
    }

    #[test]
    fn bootstrap_is_seeded() {
        let cases = planted(3);
        let a = optimize_cutoffs(&cases, &GridSpec::default(), &Cutoffs::default(), 20, 5).unwrap();
        let b = optimize_cutoffs(&cases, &GridSpec::default(), &Cutoffs::default(), 20, 5).unwrap();
        assert_eq!(a, b);
        let ci = a.responder.tdv_decrease_ci.unwrap();
        assert!(ci.lo <= -40.0 && -40.0 <= ci.hi);
    }
}
