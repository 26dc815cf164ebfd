use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::systems::seeded_rng;

const WEIGHT_STREAM: u64 = 5;

/// Fully connected tanh network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<LayerSnapshot>", try_from = "Vec<LayerSnapshot>")]
pub struct Mlp {
    /// `weights[l]` has shape `(out, in)`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Serialized layer: row-major weights of shape `(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<Mlp> for Vec<LayerSnapshot> {
    fn from(m: Mlp) -> Self {
        m.weights
            .into_iter()
            .zip(m.biases)
            .map(|(w, b)| LayerSnapshot { rows: w.nrows(), cols: w.ncols(), weights: w.iter().copied().collect(), bias: b.to_vec() })
            .collect()
    }
}

impl TryFrom<Vec<LayerSnapshot>> for Mlp {
    type Error = String;

    fn try_from(layers: Vec<LayerSnapshot>) -> Result<Self, String> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, l) in layers.into_iter().enumerate() {
            if l.bias.len() != l.rows {
                return Err(format!("layer {i}: bias length {} for {} rows", l.bias.len(), l.rows));
            }
            if let Some(prev) = weights.last().map(|w: &Array2<f64>| w.nrows()) {
                if prev != l.cols {
                    return Err(format!("layer {i}: {} inputs after a layer of width {prev}", l.cols));
                }
            }
            weights.push(Array2::from_shape_vec((l.rows, l.cols), l.weights).map_err(|e| format!("layer {i}: {e}"))?);
            biases.push(Array1::from(l.bias));
        }
        if weights.is_empty() {
            return Err("network has no layers".into());
        }
        Ok(Self { weights, biases })
    }
}

/// Per-parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Self {
        let mut rng = seeded_rng(seed, WEIGHT_STREAM);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Activations of every layer; the last entry is the linear output.
    fn forward_all(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t()) + b;
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_all(x).pop().expect("at least one layer")
    }

    /// Mean Gaussian NLL `ln σ + ½((y − μ)/σ)²` with outputs `(μ, s)` and
    /// `σ = exp(s) + sigma_floor`, plus its gradient.
    pub fn nll_and_grad(&self, x: &Array2<f64>, y: &Array1<f64>, sigma_floor: f64) -> (f64, Grads) {
        let acts = self.forward_all(x);
        let out = acts.last().expect("output");
        let m = x.nrows() as f64;
        let mut loss = 0.0;
        let mut d_out = Array2::zeros(out.raw_dim());
        for i in 0..out.nrows() {
            let (mu, s) = (out[[i, 0]], out[[i, 1]]);
            let es = s.exp();
            let sigma = es + sigma_floor;
            let r = (y[i] - mu) / sigma;
            loss += sigma.ln() + 0.5 * r * r;
            d_out[[i, 0]] = -r / sigma / m;
            d_out[[i, 1]] = (1.0 - r * r) / sigma * es / m;
        }
        (loss / m, self.backward(&acts, d_out))
    }

    pub fn nll(&self, x: &Array2<f64>, y: &Array1<f64>, sigma_floor: f64) -> f64 {
        let out = self.forward(x);
        let total: f64 = out
            .outer_iter()
            .zip(y)
            .map(|(o, &yi)| {
                let sigma = o[1].exp() + sigma_floor;
                let r = (yi - o[0]) / sigma;
                sigma.ln() + 0.5 * r * r
            })
            .sum();
        total / x.nrows() as f64
    }

    fn backward(&self, acts: &[Array2<f64>], mut delta: Array2<f64>) -> Grads {
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        for l in (0..n).rev() {
            gw.push(delta.t().dot(&acts[l]));
            gb.push(delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut d = delta.dot(&self.weights[l]);
                d.zip_mut_with(&acts[l], |g, &a| *g *= 1.0 - a * a);
                delta = d;
            }
        }
        gw.reverse();
        gb.reverse();
        Grads { weights: gw, biases: gb }
    }

    /// All parameters in a fixed order (weights then bias, per layer).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[i];
                i += 1;
            }
        }
    }
}

impl Grads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Adam optimizer state.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
