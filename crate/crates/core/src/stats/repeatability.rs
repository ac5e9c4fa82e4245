//! Test-retest repeatability (within-subject SD, CoV, RC, ANOVA-based Sb and
//! ICC, paired t-test) and Bland-Altman agreement.

use crate::numfmt;
use crate::stats::bootstrap::{percentile_interval, replicate, Interval};
use crate::stats::descriptive::{mean, pearson, sample_sd};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum RepeatabilityError {
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("grand mean is zero, CoV is undefined")]
    ZeroMean,
    #[error("non-finite measurement for subject {0}")]
    NonFinite(usize),
}

/// Two-tailed p-value of a t statistic.
pub fn t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Paired two-tailed t-test on the differences; p = 1 when all are zero and
/// p = 0 when they are identical and nonzero.
pub fn paired_t_test(d: &[f64]) -> Option<(f64, f64)> {
    let n = d.len();
    if n < 2 {
        return None;
    }
    let m = mean(d)?;
    let sd = sample_sd(d)?;
    let t = if sd == 0.0 {
        if m == 0.0 {
            return Some((0.0, 1.0));
        }
        f64::INFINITY.copysign(m)
    } else {
        m / (sd / (n as f64).sqrt())
    };
    Some((t, t_two_tailed(t, (n - 1) as f64)))
}

/// Point estimates for one set of paired measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatabilityPoint {
    pub sw: f64,
    pub cov_pct: f64,
    pub rc: f64,
    pub rc_pct: f64,
    pub sb: Option<f64>,
    pub icc: Option<f64>,
    pub bias: f64,
    pub loa: (f64, f64),
    pub t_p: f64,
}

fn point(pairs: &[(f64, f64)]) -> Option<RepeatabilityPoint> {
    let n = pairs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let d: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    let sw2 = d.iter().map(|x| x * x / 2.0).sum::<f64>() / nf;
    let sw = sw2.sqrt();
    let grand = pairs.iter().map(|(a, b)| a + b).sum::<f64>() / (2.0 * nf);
    if grand == 0.0 {
        return None;
    }
    let msb = 2.0 * pairs.iter().map(|(a, b)| ((a + b) / 2.0 - grand).powi(2)).sum::<f64>() / (nf - 1.0);
    let sb2 = (msb - sw2) / 2.0;
    let sb = (sb2 >= 0.0).then(|| sb2.sqrt());
    let icc = sb.and_then(|_| (sb2 + sw2 > 0.0).then(|| sb2 / (sb2 + sw2)));
    let rc = 1.96 * std::f64::consts::SQRT_2 * sw;
    let bias = mean(&d)?;
    let sd = sample_sd(&d)?;
    let (_, t_p) = paired_t_test(&d)?;
    Some(RepeatabilityPoint {
        sw,
        cov_pct: 100.0 * sw / grand,
        rc,
        rc_pct: 100.0 * rc / grand,
        sb,
        icc,
        bias,
        loa: (bias - 1.96 * sd, bias + 1.96 * sd),
        t_p,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(with = "numfmt::real")]
    pub value: f64,
    pub ci: Option<Interval>,
}

/// Sb and ICC are `None` ("not calculable") when the ANOVA between-subject
/// variance estimate is negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    pub n_subjects: usize,
    pub sw: Estimate,
    pub cov_pct: Estimate,
    pub rc: Estimate,
    pub rc_pct: Estimate,
    pub sb: Option<Estimate>,
    pub icc: Option<Estimate>,
    pub bias: Estimate,
    pub loa_lower: Estimate,
    pub loa_upper: Estimate,
    #[serde(with = "numfmt::real")]
    pub t_test_p: f64,
    pub bootstrap_iterations: usize,
}

/// Full-sample point estimates with percentile bootstrap CIs over subjects.
pub fn repeatability(pairs: &[(f64, f64)], iterations: usize, seed: u64) -> Result<RepeatabilityReport, RepeatabilityError> {
    if pairs.len() < 2 {
        return Err(RepeatabilityError::TooFewSubjects(pairs.len()));
    }
    if let Some(i) = pairs.iter().position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(RepeatabilityError::NonFinite(i));
    }
    let p = point(pairs).ok_or(RepeatabilityError::ZeroMean)?;
    let boots: Vec<Option<RepeatabilityPoint>> = replicate(pairs.len(), iterations, seed, |idx| {
        let sample: Vec<(f64, f64)> = idx.iter().map(|&i| pairs[i]).collect();
        point(&sample)
    });
    let ci = |f: &dyn Fn(&RepeatabilityPoint) -> Option<f64>| percentile_interval(boots.iter().flatten().filter_map(f));
    let est = |value: f64, f: &dyn Fn(&RepeatabilityPoint) -> Option<f64>| Estimate { value, ci: ci(f) };
    Ok(RepeatabilityReport {
        n_subjects: pairs.len(),
        sw: est(p.sw, &|q| Some(q.sw)),
        cov_pct: est(p.cov_pct, &|q| Some(q.cov_pct)),
        rc: est(p.rc, &|q| Some(q.rc)),
        rc_pct: est(p.rc_pct, &|q| Some(q.rc_pct)),
        sb: p.sb.map(|v| est(v, &|q| q.sb)),
        icc: p.icc.map(|v| est(v, &|q| q.icc)),
        bias: est(p.bias, &|q| Some(q.bias)),
        loa_lower: est(p.loa.0, &|q| Some(q.loa.0)),
        loa_upper: est(p.loa.1, &|q| Some(q.loa.1)),
        t_test_p: p.t_p,
        bootstrap_iterations: iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    #[serde(with = "numfmt::real")]
    pub bias: f64,
    #[serde(with = "numfmt::real")]
    pub sd: f64,
    #[serde(with = "numfmt::pair_real")]
    pub loa: (f64, f64),
    /// Correlation of differences with pair means; `None` when either is constant.
    #[serde(with = "numfmt::opt_real")]
    pub proportional_r: Option<f64>,
    #[serde(with = "numfmt::opt_real")]
    pub proportional_p: Option<f64>,
}

/// Differences are `second - first`; sd uses denominator n − 1.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltman, RepeatabilityError> {
    let n = pairs.len();
    if n < 2 {
        return Err(RepeatabilityError::TooFewSubjects(n));
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    let m: Vec<f64> = pairs.iter().map(|(a, b)| (a + b) / 2.0).collect();
    let bias = mean(&d).expect("nonempty");
    let sd = sample_sd(&d).expect("n >= 2");
    let r = pearson(&m, &d);
    let p = r.and_then(|r| {
        (n > 2).then(|| {
            let df = (n - 2) as f64;
            let t = if r.abs() >= 1.0 { f64::INFINITY } else { r * (df / (1.0 - r * r)).sqrt() };
            t_two_tailed(t, df)
        })
    });
    Ok(BlandAltman { bias, sd, loa: (bias - 1.96 * sd, bias + 1.96 * sd), proportional_r: r, proportional_p: p })
}
