//! Diagnostic accuracy against a reference standard, with Wilson score
//! intervals. Benefit is the positive class.

use crate::numfmt;
use crate::response::{Benefit, ReviewPolicy};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AccuracyError {
    #[error("{successes} successes out of {n} trials")]
    SuccessesExceedTrials { successes: u64, n: u64 },
    #[error("no trials")]
    NoTrials,
    #[error("confidence must lie in (0, 1), got {0}")]
    Confidence(f64),
    #[error("predicted and reference lists differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("no cases left after applying the review policy")]
    Empty,
}

/// Wilson score interval for `successes / n`, optionally with continuity
/// correction. Bounds are fractions in [0, 1].
pub fn wilson_interval(successes: u64, n: u64, confidence: f64, continuity: bool) -> Result<(f64, f64), AccuracyError> {
    if n == 0 {
        return Err(AccuracyError::NoTrials);
    }
    if successes > n {
        return Err(AccuracyError::SuccessesExceedTrials { successes, n });
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(AccuracyError::Confidence(confidence));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let (lo, hi) = if continuity {
        let denom = 2.0 * (nf + z2);
        let lo = if successes == 0 {
            0.0
        } else {
            (2.0 * nf * p + z2 - 1.0 - z * (z2 - 2.0 - 1.0 / nf + 4.0 * p * (nf * (1.0 - p) + 1.0)).sqrt()) / denom
        };
        let hi = if successes == n {
            1.0
        } else {
            (2.0 * nf * p + z2 + 1.0 + z * (z2 + 2.0 - 1.0 / nf + 4.0 * p * (nf * (1.0 - p) - 1.0)).sqrt()) / denom
        };
        (lo, hi)
    } else {
        let centre = p + z2 / (2.0 * nf);
        let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
        let denom = 1.0 + z2 / nf;
        let lo = if successes == 0 { 0.0 } else { (centre - half) / denom };
        let hi = if successes == n { 1.0 } else { (centre + half) / denom };
        (lo, hi)
    };
    Ok((lo.clamp(0.0, p), hi.clamp(p, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub numerator: u64,
    pub denominator: u64,
    #[serde(with = "numfmt::real")]
    pub value: f64,
    #[serde(with = "numfmt::pair_real")]
    pub ci: (f64, f64),
}

impl Proportion {
    pub fn new(numerator: u64, denominator: u64, confidence: f64, continuity: bool) -> Result<Self, AccuracyError> {
        let ci = wilson_interval(numerator, denominator, confidence, continuity)?;
        Ok(Proportion { numerator, denominator, value: numerator as f64 / denominator as f64, ci })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: Proportion,
    /// `None` when the reference has no positives.
    pub sensitivity: Option<Proportion>,
    /// `None` when the reference has no negatives.
    pub specificity: Option<Proportion>,
    pub excluded_review: usize,
    pub continuity_correction: bool,
}

/// Accuracy from confusion counts (TP, P, TN, N).
pub fn accuracy_from_counts(tp: u64, p: u64, tn: u64, n: u64, continuity: bool) -> Result<AccuracyReport, AccuracyError> {
    let opt = |num, den| if den == 0 { Ok(None) } else { Proportion::new(num, den, 0.95, continuity).map(Some) };
    Ok(AccuracyReport {
        accuracy: Proportion::new(tp + tn, p + n, 0.95, continuity)?,
        sensitivity: opt(tp, p)?,
        specificity: opt(tn, n)?,
        excluded_review: 0,
        continuity_correction: continuity,
    })
}

/// `reference[i]` is true when case i truly benefits.
pub fn diagnostic_accuracy(predicted: &[Benefit], reference: &[bool], policy: ReviewPolicy, continuity: bool) -> Result<AccuracyReport, AccuracyError> {
    if predicted.len() != reference.len() {
        return Err(AccuracyError::Length(predicted.len(), reference.len()));
    }
    let (mut tp, mut p, mut tn, mut n, mut excluded) = (0, 0, 0, 0, 0);
    for (&pred, &truth) in predicted.iter().zip(reference) {
        let Some(pos) = policy.binary(pred) else {
            excluded += 1;
            continue;
        };
        if truth {
            p += 1;
            tp += pos as u64;
        } else {
            n += 1;
            tn += !pos as u64;
        }
    }
    if p + n == 0 {
        return Err(AccuracyError::Empty);
    }
    let mut report = accuracy_from_counts(tp, p, tn, n, continuity)?;
    report.excluded_review = excluded;
    Ok(report)
}
