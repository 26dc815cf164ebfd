//! Seed averaging and power-law fits of in-context loss curves,
//! `L(t) = (t / d_c)^α`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{LossCurve, Metric};

/// Smallest context length included in a default fit.
pub const DEFAULT_FIT_MIN: usize = 10;
/// Log-log slope above which a curve counts as flat.
pub const DEFAULT_PLATEAU_THRESHOLD: f64 = 0.05;
/// Points per sliding window in [`detect_plateau`].
pub const PLATEAU_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("no curves to average")]
    Empty,
    #[error("curve {index} does not share the context grid of curve 0")]
    GridMismatch { index: usize },
    #[error("curve {index} uses metric {found}, expected {expected}")]
    MetricMismatch { index: usize, expected: Metric, found: Metric },
    #[error("fit window [{lo}, {hi}] holds {points} usable points; need at least 3")]
    TooFewPoints { lo: usize, hi: usize, points: usize },
}

pub type Result<T> = std::result::Result<T, ScalingError>;

/// Pointwise mean over seeds with the standard error of that mean
/// (zero for a single curve).
pub fn average_curves(curves: &[LossCurve]) -> Result<LossCurve> {
    let first = curves.first().ok_or(ScalingError::Empty)?;
    for (index, c) in curves.iter().enumerate().skip(1) {
        if c.context_lens != first.context_lens {
            return Err(ScalingError::GridMismatch { index });
        }
        if c.metric != first.metric {
            return Err(ScalingError::MetricMismatch { index, expected: first.metric, found: c.metric });
        }
    }
    let k = curves.len() as f64;
    let mut mean = vec![0.0; first.len()];
    let mut err = vec![0.0; first.len()];
    for i in 0..first.len() {
        let m = curves.iter().map(|c| c.values[i]).sum::<f64>() / k;
        mean[i] = m;
        if curves.len() > 1 {
            let var = curves.iter().map(|c| (c.values[i] - m).powi(2)).sum::<f64>() / (k - 1.0);
            err[i] = (var / k).sqrt();
        }
    }
    Ok(LossCurve { metric: first.metric, context_lens: first.context_lens.clone(), values: mean, std_err: Some(err) })
}

/// Inclusive range of context lengths used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub min: usize,
    pub max: Option<usize>,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { min: DEFAULT_FIT_MIN, max: None }
    }
}

impl FitWindow {
    pub fn all() -> Self {
        Self { min: 0, max: None }
    }

    fn contains(&self, t: usize) -> bool {
        t >= self.min && self.max.is_none_or(|m| t <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    /// `None` when α = 0 (a flat curve has no characteristic length).
    pub d_c: Option<f64>,
    /// Context lengths actually spanned by the fitted points.
    pub window: (usize, usize),
    pub r_squared: f64,
    pub points: usize,
    /// Context lengths dropped for nonpositive or non-finite loss.
    pub excluded: Vec<usize>,
}

impl PowerLawFit {
    pub fn predict(&self, t: f64) -> f64 {
        match self.d_c {
            Some(d_c) => (t / d_c).powf(self.alpha),
            None => 1.0,
        }
    }

    /// Intercept `ln L(1)` of the log-log line.
    pub fn log_intercept(&self) -> f64 {
        self.d_c.map_or(0.0, |d| -self.alpha * d.ln())
    }
}

/// Ordinary least squares `y ≈ slope·x + intercept`, with r².
fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (slope, intercept, r2)
}

/// Least squares on `(ln t, ln L)` over the points inside `window`.
/// A constant curve fits to α = 0 with r² = 1.
pub fn fit_power_law(curve: &LossCurve, window: FitWindow) -> Result<PowerLawFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for p in curve.points().filter(|p| window.contains(p.context_len)) {
        if p.context_len > 0 && p.value > 0.0 && p.value.is_finite() {
            xs.push((p.context_len as f64).ln());
            ys.push(p.value.ln());
            used.push(p.context_len);
        } else {
            excluded.push(p.context_len);
        }
    }
    if used.len() < 3 {
        return Err(ScalingError::TooFewPoints {
            lo: window.min,
            hi: window.max.unwrap_or(usize::MAX),
            points: used.len(),
        });
    }
    let (alpha, intercept, r_squared) = ols(&xs, &ys);
    let d_c = (alpha != 0.0).then(|| (-intercept / alpha).exp());
    Ok(PowerLawFit {
        alpha,
        d_c,
        window: (used[0], *used.last().expect("nonempty")),
        r_squared,
        points: used.len(),
        excluded,
    })
}

/// Log-spaced bins per decade used to resample curves before plateau
/// detection, so that a window always spans the same log-range no matter how
/// densely the curve was sampled.
pub const PLATEAU_BINS_PER_DECADE: f64 = 10.0;

/// Smallest context length from which every sliding window of
/// [`PLATEAU_WINDOW`] log-spaced bins has log-log slope above `−threshold`.
///
/// Points are first grouped into bins of width `1 / PLATEAU_BINS_PER_DECADE`
/// decades, each represented by its mean `ln t` and mean `ln L`. Returns
/// `None` when the curve is still decaying at its end, or spans fewer than
/// [`PLATEAU_WINDOW`] bins.
pub fn detect_plateau(curve: &LossCurve, threshold: f64) -> Option<usize> {
    // (first context length, Σ ln t, Σ ln L, count) per bin, in order.
    let mut bins: Vec<(i64, usize, f64, f64, f64)> = Vec::new();
    for p in curve.points().filter(|p| p.context_len > 0 && p.value > 0.0 && p.value.is_finite()) {
        let t = p.context_len as f64;
        let key = (t.log10() * PLATEAU_BINS_PER_DECADE + 1e-9).floor() as i64;
        match bins.last_mut() {
            Some(b) if b.0 == key => {
                b.2 += t.ln();
                b.3 += p.value.ln();
                b.4 += 1.0;
            }
            _ => bins.push((key, p.context_len, t.ln(), p.value.ln(), 1.0)),
        }
    }
    if bins.len() < PLATEAU_WINDOW {
        return None;
    }
    let pts: Vec<(usize, f64, f64)> = bins.iter().map(|b| (b.1, b.2 / b.4, b.3 / b.4)).collect();
    let slopes: Vec<f64> = pts
        .windows(PLATEAU_WINDOW)
        .map(|w| {
            let x: Vec<f64> = w.iter().map(|p| p.1).collect();
            let y: Vec<f64> = w.iter().map(|p| p.2).collect();
            ols(&x, &y).0
        })
        .collect();
    let flat = |s: &f64| *s > -threshold;
    if !slopes.last().is_some_and(flat) {
        return None;
    }
    let start = slopes.iter().rposition(|s| !flat(s)).map_or(0, |i| i + 1);
    Some(pts[start].0)
}
