//! Losses between predicted Hierarchy-PDFs and ground-truth kernels.
//!
//! Kernel probabilities on a bin are exact CDF differences, never
//! center-point densities times widths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpdf::{HierarchyPdf, HpdfError};
use crate::systems::TransitionKernel;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Upper clamp on the Bhattacharyya distance.
pub const BHATTACHARYYA_CLAMP: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("Bhattacharyya distance needs a stochastic kernel; use sdm or nll for deterministic systems")]
    DeterministicKernel,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Pdf(#[from] HpdfError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bhattacharyya,
    Sdm,
    Kl,
    Nll,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Bhattacharyya => "bhattacharyya",
            Metric::Sdm => "sdm",
            Metric::Kl => "kl",
            Metric::Nll => "nll",
        }
    }

    /// Bhattacharyya for stochastic systems, SDM for deterministic ones.
    pub fn default_for(stochastic: bool) -> Self {
        if stochastic {
            Metric::Bhattacharyya
        } else {
            Metric::Sdm
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bhattacharyya" => Ok(Metric::Bhattacharyya),
            "sdm" => Ok(Metric::Sdm),
            "kl" => Ok(Metric::Kl),
            "nll" => Ok(Metric::Nll),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub context_len: usize,
    pub value: f64,
    pub metric: Metric,
}

/// Loss as a function of context length, optionally with standard errors
/// (present on seed averages).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub metric: Metric,
    pub context_lens: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_err: Option<Vec<f64>>,
}

impl LossCurve {
    pub fn new(metric: Metric, context_lens: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if context_lens.len() != values.len() {
            return Err(MetricError::LengthMismatch(context_lens.len(), values.len()));
        }
        Ok(Self { metric, context_lens, values, std_err: None })
    }

    pub fn from_points(metric: Metric, points: &[LossPoint]) -> Self {
        Self {
            metric,
            context_lens: points.iter().map(|p| p.context_len).collect(),
            values: points.iter().map(|p| p.value).collect(),
            std_err: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value_at(&self, context_len: usize) -> Option<f64> {
        self.context_lens.iter().position(|&t| t == context_len).map(|i| self.values[i])
    }

    pub fn points(&self) -> impl Iterator<Item = LossPoint> + '_ {
        self.context_lens
            .iter()
            .zip(&self.values)
            .map(|(&context_len, &value)| LossPoint { context_len, value, metric: self.metric })
    }
}

fn clamp_distance(bc: f64) -> f64 {
    if !(bc > 0.0) {
        return BHATTACHARYYA_CLAMP;
    }
    (-bc.ln()).clamp(0.0, BHATTACHARYYA_CLAMP)
}

/// `−ln Σ √(p_i q_i)` for two mass vectors on a shared partition.
pub fn bhattacharyya_masses(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MetricError::LengthMismatch(p.len(), q.len()));
    }
    Ok(clamp_distance(p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum()))
}

/// Discretized Bhattacharyya distance on the PDF's own partition:
/// with `p(x) = mass / Δx`, `Σ √(p p̃) Δx = Σ √(mass · mass̃)`.
pub fn bhattacharyya(kernel: &TransitionKernel, pdf: &HierarchyPdf, window: (f64, f64)) -> Result<f64> {
    if !kernel.is_stochastic() {
        return Err(MetricError::DeterministicKernel);
    }
    let truth = pdf.kernel_masses(kernel, window);
    let pred: Vec<f64> = pdf.bins.iter().map(|b| b.mass).collect();
    bhattacharyya_masses(&truth, &pred)
}

/// Bhattacharyya distance between the PDF and a point mass at `x_true`
/// collapsed onto its containing finest bin (width `10^(1-n)`). On the
/// finest partition the PDF spreads a coarse bin's mass uniformly, so the
/// overlap is `√(mass · Δx_finest / width)`.
pub fn bhattacharyya_dirac(x_true: f64, pdf: &HierarchyPdf, n_digits: usize) -> Result<f64> {
    let bin = pdf.bin_containing(x_true)?;
    let finest = 10f64.powi(1 - n_digits as i32);
    Ok(clamp_distance((bin.mass * finest / bin.width()).sqrt()))
}

/// Squared deviation of `x_true` from the PDF mean.
pub fn sdm(x_true: f64, pdf: &HierarchyPdf) -> f64 {
    let d = x_true - pdf.mean();
    d * d
}

/// `Σ P log(max(P, floor) / max(Q, floor))` over the PDF's partition; `P` is
/// the kernel. Flooring both sides keeps identical inputs at exactly zero.
pub fn kl_divergence(kernel: &TransitionKernel, pdf: &HierarchyPdf, window: (f64, f64)) -> f64 {
    pdf.kernel_masses(kernel, window)
        .iter()
        .zip(&pdf.bins)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, b)| p * (p.max(PROB_FLOOR) / b.mass.max(PROB_FLOOR)).ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nll {
    /// `−ln p̃(x_true)` with `p̃ = mass / width`, mass floored.
    pub value: f64,
    /// `n · ln 10`, reported for cross-checking the D_B reduction.
    pub digit_constant: f64,
}

pub fn nll(x_true: f64, pdf: &HierarchyPdf, n_digits: usize) -> Result<Nll> {
    let bin = pdf.bin_containing(x_true)?;
    Ok(Nll {
        value: -(bin.mass.max(PROB_FLOOR) / bin.width()).ln(),
        digit_constant: n_digits as f64 * std::f64::consts::LN_10,
    })
}

/// Exact `½·nll − ½·ln Δx_finest = ½·nll + ((n−1)/2)·ln 10`, the constant
/// that makes `½·nll + C` equal [`bhattacharyya_dirac`] whenever neither
/// side is floored or clamped.
pub fn dirac_nll_constant(n_digits: usize) -> f64 {
    0.5 * (n_digits as f64 - 1.0) * std::f64::consts::LN_10
}

/// Closed-form Bhattacharyya distance between two normals.
pub fn gaussian_bhattacharyya(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let v = s1 * s1 + s2 * s2;
    0.25 * (m1 - m2).powi(2) / v + 0.5 * (v / (2.0 * s1 * s2)).ln()
}

/// Closed-form `KL(N(m1, s1²) ‖ N(m2, s2²))`.
pub fn gaussian_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
}

/// One loss value under `metric`.
pub fn score(
    metric: Metric,
    kernel: &TransitionKernel,
    pdf: &HierarchyPdf,
    x_true: f64,
    window: (f64, f64),
    n_digits: usize,
) -> Result<f64> {
    match metric {
        Metric::Bhattacharyya => bhattacharyya(kernel, pdf, window),
        Metric::Sdm => Ok(sdm(x_true, pdf)),
        Metric::Kl => Ok(kl_divergence(kernel, pdf, window)),
        Metric::Nll => Ok(nll(x_true, pdf, n_digits)?.value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::WINDOW;
    use crate::hpdf::Bin;
    use proptest::prelude::*;

    const WIDE: (f64, f64) = (0.0, 10.0);

    fn gauss(mean: f64, std: f64) -> TransitionKernel {
        TransitionKernel::Gaussian { mean, std }
    }

    fn uniform() -> HierarchyPdf {
        HierarchyPdf::discretize(&TransitionKernel::Uniform { lo: 1.5, hi: 8.5 }, WINDOW, 3, 0).unwrap()
    }

    #[test]
    fn bhattacharyya_examples() {
        let k = gauss(5.0, 0.3);
        let pdf = HierarchyPdf::discretize(&k, WINDOW, 3, 0).unwrap();
        assert!(bhattacharyya(&k, &pdf, WINDOW).unwrap().abs() < 1e-9);

        // N(0,1) vs N(1,1) mapped by x ↦ 0.5x + 4.75; the distance is affine invariant.
        let pdf = HierarchyPdf::discretize(&gauss(5.25, 0.5), WIDE, 3, 0).unwrap();
        let d = bhattacharyya(&gauss(4.75, 0.5), &pdf, WIDE).unwrap();
        assert!((d - 0.125).abs() < 1e-3, "{d}");
        assert!((gaussian_bhattacharyya(0.0, 1.0, 1.0, 1.0) - 0.125).abs() < 1e-15);

        let far = HierarchyPdf::discretize(&TransitionKernel::Uniform { lo: 2.0, hi: 3.0 }, WIDE, 2, 0).unwrap();
        assert_eq!(bhattacharyya(&TransitionKernel::Uniform { lo: 6.0, hi: 7.0 }, &far, WIDE).unwrap(), BHATTACHARYYA_CLAMP);

        assert_eq!(bhattacharyya(&TransitionKernel::Dirac { point: 5.0 }, &pdf, WIDE), Err(MetricError::DeterministicKernel));
    }

    #[test]
    fn kl_examples() {
        let k = gauss(5.0, 0.3);
        let pdf = HierarchyPdf::discretize(&k, WINDOW, 3, 0).unwrap();
        assert_eq!(kl_divergence(&k, &pdf, WINDOW), 0.0);

        let pdf = HierarchyPdf::discretize(&gauss(5.25, 0.5), WIDE, 3, 0).unwrap();
        let kl = kl_divergence(&gauss(4.75, 0.5), &pdf, WIDE);
        assert!((kl - 0.5).abs() < 5e-3, "{kl}");
        assert!((gaussian_kl(0.0, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);

        let one_hot = HierarchyPdf::discretize(&TransitionKernel::Dirac { point: 3.0 }, WINDOW, 1, 0).unwrap();
        let kl = kl_divergence(&TransitionKernel::Dirac { point: 5.5 }, &one_hot, WINDOW);
        assert!((kl - (1.0 / PROB_FLOOR).ln()).abs() < 1e-12);
    }

    #[test]
    fn sdm_examples() {
        let one_hot = HierarchyPdf::discretize(&TransitionKernel::Dirac { point: 5.257 }, WINDOW, 3, 0).unwrap();
        assert!(sdm(5.257, &one_hot) <= 0.005f64.powi(2));
        assert!((sdm(6.0, &uniform()) - 1.0).abs() < 1e-12);
        let g = HierarchyPdf::discretize(&gauss(5.0, 0.2), WINDOW, 3, 0).unwrap();
        assert!(sdm(5.0, &g) < 1e-4);
    }

    #[test]
    fn nll_examples() {
        let n = nll(4.321, &uniform(), 3).unwrap();
        assert!((n.value - 7f64.ln()).abs() < 1e-12);
        assert!((n.digit_constant - 3.0 * std::f64::consts::LN_10).abs() < 1e-15);
        let one_hot = HierarchyPdf::discretize(&TransitionKernel::Dirac { point: 5.257 }, WINDOW, 3, 0).unwrap();
        assert!((nll(5.257, &one_hot, 3).unwrap().value + 100f64.ln()).abs() < 1e-9);
        assert!(nll(11.0, &one_hot, 3).is_err());
    }

    #[test]
    fn one_hot_dirac_overlap_is_zero() {
        let one_hot = HierarchyPdf::discretize(&TransitionKernel::Dirac { point: 5.257 }, WINDOW, 3, 0).unwrap();
        assert!(bhattacharyya_dirac(5.257, &one_hot, 3).unwrap().abs() < 1e-12);
        let half = 0.5 * nll(5.257, &one_hot, 3).unwrap().value;
        assert!((half + dirac_nll_constant(3)).abs() < 1e-12);
    }

    fn random_pdf(masses: &[f64]) -> HierarchyPdf {
        // Depth-1 bins 0..4, bin 5 refined to depth 2, bins 6..9 at depth 1.
        let total: f64 = masses.iter().sum();
        let mut bins = Vec::new();
        let mut it = masses.iter().map(|m| m / total);
        for d in 0..10u64 {
            if d == 5 {
                for e in 0..10 {
                    bins.push(Bin { code: 50 + e, depth: 2, mass: it.next().unwrap() });
                }
            } else {
                bins.push(Bin { code: d, depth: 1, mass: it.next().unwrap() });
            }
        }
        HierarchyPdf::new(0, bins).unwrap()
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(m1 in 2.0f64..8.0, s1 in 0.05f64..2.0, m2 in 2.0f64..8.0, s2 in 0.05f64..2.0) {
            let pdf = HierarchyPdf::discretize(&gauss(m2, s2), WINDOW, 2, 0).unwrap();
            prop_assert!(kl_divergence(&gauss(m1, s1), &pdf, WINDOW) >= -1e-6);
        }

        #[test]
        fn bhattacharyya_is_symmetric(p in proptest::collection::vec(0.001f64..1.0, 19), q in proptest::collection::vec(0.001f64..1.0, 19)) {
            let (a, b) = (random_pdf(&p), random_pdf(&q));
            let ma: Vec<f64> = a.bins.iter().map(|b| b.mass).collect();
            let mb: Vec<f64> = b.bins.iter().map(|b| b.mass).collect();
            prop_assert_eq!(bhattacharyya_masses(&ma, &mb).unwrap(), bhattacharyya_masses(&mb, &ma).unwrap());
            prop_assert!(bhattacharyya_masses(&ma, &ma).unwrap().abs() < 1e-12);
        }

        #[test]
        fn dirac_identity_with_exact_constant(p in proptest::collection::vec(0.001f64..1.0, 19), x in 1.5f64..8.5) {
            let pdf = random_pdf(&p);
            let db = bhattacharyya_dirac(x, &pdf, 3).unwrap();
            let rhs = 0.5 * nll(x, &pdf, 3).unwrap().value + dirac_nll_constant(3);
            prop_assert!((db - rhs).abs() < 1e-9);
        }

        #[test]
        fn sdm_ignores_refining_empty_bins(p in proptest::collection::vec(0.001f64..1.0, 19), x in 1.5f64..8.5) {
            let mut masses = p.clone();
            masses[0] = 0.0;
            let pdf = random_pdf(&masses);
            let mut refined = pdf.clone();
            let zero = refined.bins.remove(0);
            prop_assert_eq!(zero.mass, 0.0);
            for e in (0..10).rev() {
                refined.bins.insert(0, Bin { code: e, depth: 2, mass: 0.0 });
            }
            refined.validate().unwrap();
            prop_assert!((sdm(x, &pdf) - sdm(x, &refined)).abs() < 1e-12);
        }
    }
}
