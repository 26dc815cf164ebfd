//! Reference learners: in-context n-gram estimators for discrete chains and
//! one-step autoregressive Gaussian predictors (linear and MLP) for
//! continuous series.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpdf::{Bin, HierarchyPdf};
use crate::metrics::{self, LossCurve, Metric};
use crate::models::NgramCounts;
use crate::par;
use crate::systems::{StochasticMatrix, TransitionKernel};

mod net;

pub use net::{Adam, Grads, LayerSnapshot, Mlp};

/// Lower bound on every predicted standard deviation (system units).
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Context lengths at which AR1 baselines are retrained.
pub const DEFAULT_GRID: [usize; 12] = [2, 3, 5, 10, 18, 32, 56, 100, 178, 316, 562, 1000];
/// Fewest observations the network is trained on.
pub const MIN_NET_POINTS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("not enough data: need {need} points, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("inputs have zero variance")]
    DegenerateInputs,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Order of the n-gram baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NgramOrder {
    Unigram,
    Bigram,
}

impl NgramOrder {
    fn order(self) -> usize {
        match self {
            NgramOrder::Unigram => 1,
            NgramOrder::Bigram => 2,
        }
    }
}

/// In-context n-gram loss: at every `t ≥ 1` the estimator sees states
/// `x_0..x_{t-1}` and predicts `x_t`; the prediction is scored against the
/// true row `P[x_{t-1}, ·]`. `context_lens[i] = t`.
pub fn ngram_loss_curve(
    states: &[usize],
    matrix: &StochasticMatrix,
    order: NgramOrder,
    alpha: f64,
    metric: Metric,
) -> Result<LossCurve> {
    let n = matrix.n();
    if states.len() < 2 {
        return Err(BaselineError::TooShort { need: 2, got: states.len() });
    }
    if let Some(s) = states.iter().find(|&&s| s >= n) {
        return Err(BaselineError::Parameter(format!("state {s} outside a {n}-state chain")));
    }
    let support: Vec<u8> = (0..n as u8).collect();
    let mut counts = NgramCounts::default();
    let mut lens = Vec::with_capacity(states.len() - 1);
    let mut values = Vec::with_capacity(states.len() - 1);
    for t in 1..states.len() {
        counts.push(states[t - 1] as u8);
        let probs = counts.predict(order.order(), alpha, &support);
        let pdf = categorical_pdf(&probs[..n], t);
        let kernel = TransitionKernel::Categorical { probs: matrix.row(states[t - 1]).to_vec() };
        let value = metrics::score(metric, &kernel, &pdf, states[t] as f64 + 0.5, (0.0, 10.0), 1)?;
        lens.push(t);
        values.push(value);
    }
    Ok(LossCurve::new(metric, lens, values)?)
}

pub fn bigram_loss_curve(states: &[usize], matrix: &StochasticMatrix, alpha: f64, metric: Metric) -> Result<LossCurve> {
    ngram_loss_curve(states, matrix, NgramOrder::Bigram, alpha, metric)
}

pub fn unigram_loss_curve(states: &[usize], matrix: &StochasticMatrix, alpha: f64, metric: Metric) -> Result<LossCurve> {
    ngram_loss_curve(states, matrix, NgramOrder::Unigram, alpha, metric)
}

/// Depth-1 PDF with `probs[j]` on `[j, j + 1)`.
fn categorical_pdf(probs: &[f64], state_index: usize) -> HierarchyPdf {
    let bins = (0..10u64)
        .map(|j| Bin { code: j, depth: 1, mass: probs.get(j as usize).copied().unwrap_or(0.0) })
        .collect();
    HierarchyPdf { state_index, bins }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ar1NetConfig {
    pub hidden_widths: [usize; 3],
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for Ar1NetConfig {
    fn default() -> Self {
        Self { hidden_widths: [64, 32, 16], learning_rate: 1e-3, max_epochs: 5000, patience: 200 }
    }
}

impl Ar1NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.contains(&0) || !(self.learning_rate > 0.0) || self.max_epochs == 0 {
            return Err(BaselineError::Parameter(format!("invalid network config {self:?}")));
        }
        Ok(())
    }
}

/// Standardized-coordinate network; see [`GaussianPredictor::predict`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Net {
    pub mlp: Mlp,
    pub x_mean: f64,
    pub x_scale: f64,
    pub y_mean: f64,
    pub y_scale: f64,
}

/// `x_{t-1} ↦ N(μ(x), σ(x)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaussianPredictor {
    Linear { a: f64, b: f64, sigma: f64 },
    Net(Ar1Net),
}

impl GaussianPredictor {
    /// Mean and standard deviation of the next value given `x`.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        match self {
            GaussianPredictor::Linear { a, b, sigma } => (a * x + b, *sigma),
            GaussianPredictor::Net(net) => {
                let input = Array2::from_elem((1, 1), (x - net.x_mean) / net.x_scale);
                let out = net.mlp.forward(&input);
                let sigma = net.y_scale * out[[0, 1]].exp() + SIGMA_FLOOR;
                (net.y_mean + net.y_scale * out[[0, 0]], sigma)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("predictor serializes")
    }
}

fn pairs(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (values[..values.len() - 1].to_vec(), values[1..].to_vec())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Least squares `x_t ≈ a x_{t-1} + b` with the residual standard
/// deviation (floored) as a constant σ.
pub fn fit_ar1_linear(values: &[f64]) -> Result<GaussianPredictor> {
    if values.len() < 3 {
        return Err(BaselineError::TooShort { need: 3, got: values.len() });
    }
    let (x, y) = pairs(values);
    let (mx, sx) = mean_std(&x);
    let my = y.iter().sum::<f64>() / y.len() as f64;
    if sx <= 1e-300 {
        return Err(BaselineError::DegenerateInputs);
    }
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64;
    let a = cov / (sx * sx);
    let b = my - a * mx;
    let ssr = x.iter().zip(&y).map(|(xi, yi)| (yi - a * xi - b).powi(2)).sum::<f64>();
    let sigma = (ssr / x.len() as f64).sqrt().max(SIGMA_FLOOR);
    Ok(GaussianPredictor::Linear { a, b, sigma })
}

/// Diagnostics of one network training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Training loss at each accepted (improving) checkpoint.
    pub accepted_losses: Vec<f64>,
}

/// Full-batch Adam on the mean Gaussian NLL of `(x_{t-1}, x_t)` pairs in
/// standardized coordinates; early stopping keeps the best parameters.
pub fn train_ar1_net(values: &[f64], config: &Ar1NetConfig, seed: u64) -> Result<(GaussianPredictor, TrainReport)> {
    config.validate()?;
    if values.len() < MIN_NET_POINTS {
        return Err(BaselineError::TooShort { need: MIN_NET_POINTS, got: values.len() });
    }
    let (x, y) = pairs(values);
    let (x_mean, sx) = mean_std(&x);
    let (y_mean, sy) = mean_std(&y);
    let x_scale = if sx > 1e-12 { sx } else { 1.0 };
    let y_scale = if sy > 1e-12 { sy } else { 1.0 };
    let xs = Array2::from_shape_fn((x.len(), 1), |(i, _)| (x[i] - x_mean) / x_scale);
    let ys = Array1::from_iter(y.iter().map(|v| (v - y_mean) / y_scale));
    let floor = SIGMA_FLOOR / y_scale;

    let [h1, h2, h3] = config.hidden_widths;
    let mut mlp = Mlp::init(&[1, h1, h2, h3, 2], seed);
    let mut params = mlp.flatten();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut accepted = Vec::new();
    let mut epochs = 0;
    for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        let (loss, grads) = mlp.nll_and_grad(&xs, &ys, floor);
        if !loss.is_finite() {
            return Err(BaselineError::Diverged { epoch, loss });
        }
        if loss < best.0 {
            best = (loss, params.clone(), epoch);
            accepted.push(loss);
        } else if epoch - best.2 >= config.patience {
            break;
        }
        adam.update(&mut params, &grads.flatten());
        mlp.set_flat(&params);
    }
    mlp.set_flat(&best.1);
    let report = TrainReport { epochs, best_epoch: best.2, best_loss: best.0, accepted_losses: accepted };
    Ok((GaussianPredictor::Net(Ar1Net { mlp, x_mean, x_scale, y_mean, y_scale }), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ar1Kind {
    Linear,
    Net,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Curve {
    pub curve: LossCurve,
    /// Grid points whose fit failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// Loss of a predictor against the true law of the next value: closed-form
/// Gaussian Bhattacharyya for Gaussian kernels, SDM of the predicted mean
/// for point masses.
pub fn score_predictor(pred: (f64, f64), kernel: &TransitionKernel) -> Result<(Metric, f64)> {
    let (mu, sigma) = pred;
    match *kernel {
        TransitionKernel::Gaussian { mean, std } => {
            Ok((Metric::Bhattacharyya, metrics::gaussian_bhattacharyya(mu, sigma, mean, std).min(metrics::BHATTACHARYYA_CLAMP)))
        }
        TransitionKernel::Dirac { point } => Ok((Metric::Sdm, (point - mu).powi(2))),
        _ => Err(BaselineError::Parameter("AR1 baselines score Gaussian or point-mass kernels only".into())),
    }
}

/// Retrains from scratch at every grid point `t`: the learner sees
/// `values[..t]` and predicts `values[t]`, whose true law is `kernels[t-1]`.
pub fn ar1_loss_curve(
    values: &[f64],
    kernels: &[TransitionKernel],
    kind: Ar1Kind,
    config: &Ar1NetConfig,
    grid: &[usize],
    seed: u64,
) -> Result<Ar1Curve> {
    if kernels.len() + 1 != values.len() {
        return Err(BaselineError::Parameter(format!("{} kernels for {} values", kernels.len(), values.len())));
    }
    if let Some(&t) = grid.iter().find(|&&t| t == 0 || t >= values.len()) {
        return Err(BaselineError::Parameter(format!("grid point {t} outside 1..{}", values.len())));
    }
    let jobs: Vec<usize> = grid.to_vec();
    let results = par::map(jobs, |t| -> (usize, Result<(Metric, f64)>) {
        let fitted = match kind {
            Ar1Kind::Linear => fit_ar1_linear(&values[..t]),
            Ar1Kind::Net => train_ar1_net(&values[..t], config, seed).map(|(p, _)| p),
        };
        let out = fitted.and_then(|p| score_predictor(p.predict(values[t - 1]), &kernels[t - 1]));
        (t, out)
    });
    let mut lens = Vec::new();
    let mut vals = Vec::new();
    let mut failures = Vec::new();
    let mut metric = None;
    for (t, r) in results {
        match r {
            Ok((m, v)) => {
                if metric.is_some_and(|prev| prev != m) {
                    return Err(BaselineError::Parameter("kernels mix stochastic and deterministic laws".into()));
                }
                metric = Some(m);
                lens.push(t);
                vals.push(v);
            }
            Err(e) => failures.push((t, e.to_string())),
        }
    }
    let metric = metric.unwrap_or(Metric::Bhattacharyya);
    Ok(Ar1Curve { curve: LossCurve::new(metric, lens, vals)?, failures })
}
