//! Wilcoxon signed-rank test and Spearman rank correlation.

use crate::numfmt;
use crate::stats::descriptive::{average_ranks, pearson};
use crate::stats::repeatability::t_two_tailed;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Largest number of nonzero differences handled by the exact distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum RankTestError {
    #[error("samples differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite observation at {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Two,
    /// Alternative: `x - y` tends to be positive.
    Greater,
    Less,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    #[serde(with = "numfmt::real")]
    pub w_plus: f64,
    #[serde(with = "numfmt::real")]
    pub p: f64,
    pub n_nonzero: usize,
    pub exact: bool,
    /// Every difference was zero.
    pub degenerate: bool,
}

/// Null distribution of doubled W+ (integer) by subset-sum counting.
/// Returns counts indexed by doubled rank sum.
fn exact_counts(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Paired test on `x - y`. Zero differences are dropped, ties share
/// average ranks. Exact null distribution up to `EXACT_MAX_N` nonzero
/// differences; above that, normal approximation with tie-corrected
/// variance and no continuity correction.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], tail: Tail) -> Result<WilcoxonResult, RankTestError> {
    if x.len() != y.len() {
        return Err(RankTestError::Length(x.len(), y.len()));
    }
    let mut d = Vec::with_capacity(x.len());
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        let v = a - b;
        if !v.is_finite() {
            return Err(RankTestError::NonFinite(i));
        }
        if v != 0.0 {
            d.push(v);
        }
    }
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult { w_plus: 0.0, p: 1.0, n_nonzero: 0, exact: true, degenerate: true });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let (p_upper, p_lower, exact) = if n <= EXACT_MAX_N {
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let counts = exact_counts(&doubled);
        let total: f64 = counts.iter().sum();
        let w2 = (2.0 * w_plus).round() as usize;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / total;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / total;
        (upper, lower, true)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w_plus - mu) / var.sqrt();
        let norm = Normal::standard();
        (1.0 - norm.cdf(z), norm.cdf(z), false)
    };
    let p = match tail {
        Tail::Greater => p_upper,
        Tail::Less => p_lower,
        Tail::Two => (2.0 * p_upper.min(p_lower)).min(1.0),
    };
    Ok(WilcoxonResult { w_plus, p, n_nonzero: n, exact, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationBand {
    Weak,
    Moderate,
    Strong,
    VeryStrong,
}

/// |r| below 0.4 weak, 0.4 to 0.6 moderate, 0.6 to 0.8 strong, 0.8 and above very strong.
pub fn correlation_band(r: f64) -> CorrelationBand {
    match r.abs() {
        a if a >= 0.8 => CorrelationBand::VeryStrong,
        a if a >= 0.6 => CorrelationBand::Strong,
        a if a >= 0.4 => CorrelationBand::Moderate,
        _ => CorrelationBand::Weak,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    #[serde(with = "numfmt::real")]
    pub r: f64,
    #[serde(with = "numfmt::real")]
    pub p: f64,
    pub n: usize,
    pub band: CorrelationBand,
}

/// Pearson correlation of average ranks; two-tailed p from the t
/// approximation on n − 2 degrees of freedom. `None` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<SpearmanResult>, RankTestError> {
    if x.len() != y.len() {
        return Err(RankTestError::Length(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(RankTestError::TooFew { needed: 3, got: x.len() });
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(RankTestError::NonFinite(i % x.len()));
    }
    let Some(r) = pearson(&average_ranks(x), &average_ranks(y)) else {
        return Ok(None);
    };
    let df = (x.len() - 2) as f64;
    let t = if r.abs() >= 1.0 { f64::INFINITY } else { r * (df / (1.0 - r * r)).sqrt() };
    Ok(Some(SpearmanResult { r, p: t_two_tailed(t, df), n: x.len(), band: correlation_band(r) }))
}
