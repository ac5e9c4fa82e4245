//! Voxelwise mono-exponential diffusion fit, S(b) = S0·exp(−b·ADC), and
//! computed high-b images.

use crate::model::{ModelError, ScalarVolume, StudyBundle};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper clamp for fitted ADC (mm²/s), just above free water at 37 °C.
pub const DEFAULT_ADC_MAX: f64 = 4e-3;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least two b-values, got {0}")]
    TooFewBValues(usize),
    #[error("b-values are not distinct")]
    DuplicateBValues,
    #[error("b-value volumes are on different grids")]
    GridMismatch,
    #[error("target b-value must be > 0, got {0}")]
    BadTargetB(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdcConfig {
    pub adc_max: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        AdcConfig { adc_max: DEFAULT_ADC_MAX }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub s0: ScalarVolume,
    /// mm²/s
    pub gadc: ScalarVolume,
    pub valid_mask: ScalarVolume,
}

/// Least-squares line through `(b, ln S)`, precomputed for a fixed b-value set.
#[derive(Clone, Debug)]
pub struct LogLinearFit {
    b_mean: f64,
    weights: Vec<f64>,
}

impl LogLinearFit {
    pub fn new(b_values: &[f64]) -> Result<Self, FitError> {
        if b_values.len() < 2 {
            return Err(FitError::TooFewBValues(b_values.len()));
        }
        let n = b_values.len() as f64;
        let b_mean = b_values.iter().sum::<f64>() / n;
        let sxx: f64 = b_values.iter().map(|b| (b - b_mean).powi(2)).sum();
        let mut sorted = b_values.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sxx <= 0.0 || sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(FitError::DuplicateBValues);
        }
        let weights = b_values.iter().map(|b| (b - b_mean) / sxx).collect();
        Ok(LogLinearFit { b_mean, weights })
    }

    /// Returns `(S0, ADC)` before clamping, or `None` if any signal is ≤ 0.
    ///
    /// Logs are taken of ratios to the first signal, so scaling every
    /// signal by a power of two scales S0 exactly and leaves ADC bit-identical.
    pub fn fit(&self, signals: &[f64]) -> Option<(f64, f64)> {
        if signals.iter().any(|&s| !(s > 0.0)) {
            return None;
        }
        let s_ref = signals[0];
        let n = signals.len() as f64;
        let mut slope = 0.0;
        let mut y_sum = 0.0;
        for (s, w) in signals.iter().zip(&self.weights) {
            let y = (s / s_ref).ln();
            slope += w * y;
            y_sum += y;
        }
        let intercept = y_sum / n - slope * self.b_mean;
        Some((s_ref * intercept.exp(), -slope))
    }
}

/// Fits S0 and gADC at every voxel of the bundle.
pub fn fit_monoexponential(bundle: &StudyBundle, config: &AdcConfig) -> Result<FitResult, FitError> {
    fit_volumes(&bundle.b_values, &bundle.b_volumes, config)
}

pub fn fit_volumes(b_values: &[f64], volumes: &[ScalarVolume], config: &AdcConfig) -> Result<FitResult, FitError> {
    if volumes.len() != b_values.len() {
        return Err(FitError::TooFewBValues(volumes.len().min(b_values.len())));
    }
    let model = LogLinearFit::new(b_values)?;
    let meta = *volumes[0].meta();
    if volumes.iter().any(|v| !v.meta().same_grid(&meta)) {
        return Err(FitError::GridMismatch);
    }
    let adc_max = config.adc_max;
    let fitted: Vec<(f64, f64, f64)> = (0..meta.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; volumes.len()],
            |signals, i| {
                for (s, v) in signals.iter_mut().zip(volumes) {
                    *s = v.data()[i];
                }
                match model.fit(signals) {
                    Some((s0, adc)) => (s0, adc.clamp(0.0, adc_max), 1.0),
                    None => (0.0, 0.0, 0.0),
                }
            },
        )
        .collect();
    let (mut s0, mut gadc, mut valid) =
        (Vec::with_capacity(meta.len()), Vec::with_capacity(meta.len()), Vec::with_capacity(meta.len()));
    for (a, b, c) in fitted {
        s0.push(a);
        gadc.push(b);
        valid.push(c);
    }
    Ok(FitResult {
        s0: ScalarVolume::new(meta, s0)?,
        gadc: ScalarVolume::new(meta, gadc)?,
        valid_mask: ScalarVolume::new(meta, valid)?,
    })
}

/// Computed DWI at `b_target`: S0·exp(−b·gADC), zero where the fit is invalid.
pub fn compute_cdwi(fit: &FitResult, b_target: f64) -> Result<ScalarVolume, FitError> {
    if !(b_target > 0.0 && b_target.is_finite()) {
        return Err(FitError::BadTargetB(b_target));
    }
    let data = fit
        .s0
        .data()
        .par_iter()
        .zip(fit.gadc.data().par_iter())
        .zip(fit.valid_mask.data().par_iter())
        .map(|((&s0, &adc), &ok)| if ok > 0.5 { s0 * (-b_target * adc).exp() } else { 0.0 })
        .collect();
    Ok(ScalarVolume::new(*fit.s0.meta(), data)?)
}
