//! Simulators for the studied dynamical systems and their exact one-step
//! transition kernels.
//!
//! Every simulator is a pure function of its parameters and a `u64` seed.
//! Trajectories include the initial state, so `steps` transitions produce
//! `steps + 1` values.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normal;

/// Lower clip bound applied to the noisy logistic map.
pub const LOGISTIC_CLIP_LO: f64 = 1e-6;
/// Upper clip bound applied to the noisy logistic map.
pub const LOGISTIC_CLIP_HI: f64 = 1.0 - 1e-6;
/// Smallest standard deviation a Gaussian kernel of the noisy logistic map
/// may have (system units).
pub const STD_FLOOR: f64 = 1e-4;
/// Lorenz states whose magnitude exceeds this are treated as a blow-up.
pub const LORENZ_BLOWUP: f64 = 1e6;

const POWER_ITERATION_CAP: usize = 100_000;
const POWER_ITERATION_DAMPING: f64 = 0.999;
const POWER_ITERATION_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("simulation failed at step {step}: {reason}")]
    Simulation { step: usize, reason: String },
    #[error("x = {0} is outside the density's domain")]
    Domain(f64),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

type Result<T> = std::result::Result<T, SystemError>;

/// ChaCha8 generator for `seed`, on an independent stream per purpose.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Row-stochastic matrix: `rows[i][j] = P(X_{t+1} = j | X_t = i)`.
///
/// States are indexed from 0 so that every state is a single digit token,
/// which caps the state count at 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StochasticMatrix {
    rows: Vec<Vec<f64>>,
}

impl StochasticMatrix {
    pub const MIN_STATES: usize = 2;
    pub const MAX_STATES: usize = 10;

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if !(Self::MIN_STATES..=Self::MAX_STATES).contains(&n) {
            return Err(SystemError::Parameter(format!(
                "state count {n} outside {}..={}",
                Self::MIN_STATES,
                Self::MAX_STATES
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SystemError::Parameter(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(SystemError::Parameter(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(SystemError::Parameter(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    /// Rows drawn i.i.d. from the flat Dirichlet via normalized exponentials.
    pub fn sample(n: usize, seed: u64) -> Result<Self> {
        if !(Self::MIN_STATES..=Self::MAX_STATES).contains(&n) {
            return Err(SystemError::Parameter(format!("state count {n} outside 2..=10")));
        }
        let mut rng = seeded_rng(seed, 0);
        let rows = (0..n)
            .map(|_| {
                let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = draws.iter().sum();
                draws.into_iter().map(|d| d / total).collect()
            })
            .collect();
        Self::new(rows)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / n as f64; n]; n])
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// One step of distribution evolution, `π ↦ π P`.
    pub fn step(&self, dist: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        for (i, &pi) in dist.iter().enumerate() {
            for (o, &p) in out.iter_mut().zip(&self.rows[i]) {
                *o += pi * p;
            }
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for StochasticMatrix {
    type Error = SystemError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<StochasticMatrix> for Vec<Vec<f64>> {
    fn from(m: StochasticMatrix) -> Self {
        m.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeParams {
    pub mu: f64,
    pub sigma: f64,
    pub dt: f64,
    pub x0: f64,
}

impl SdeParams {
    pub fn brownian_default() -> Self {
        Self { mu: 0.1, sigma: 0.5, dt: 0.04, x0: 0.0 }
    }

    pub fn gbm_default() -> Self {
        Self { mu: 0.05, sigma: 0.2, dt: 0.01, x0: 1.0 }
    }

    fn validate(&self, kind: SdeKind) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SystemError::Parameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() || !self.mu.is_finite() || !self.x0.is_finite() {
            return Err(SystemError::Parameter("sigma must be ≥ 0 and all SDE parameters finite".into()));
        }
        if kind == SdeKind::Geometric && self.x0 <= 0.0 {
            return Err(SystemError::Parameter(format!("GBM requires x0 > 0, got {}", self.x0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeKind {
    Brownian,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapParams {
    pub r: f64,
    pub noise_sigma: f64,
    pub x0: f64,
}

impl MapParams {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..4.0).contains(&self.r) {
            return Err(SystemError::Parameter(format!("r must lie in [1, 4), got {}", self.r)));
        }
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(SystemError::Parameter(format!("x0 must lie in (0, 1), got {}", self.x0)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(SystemError::Parameter(format!("noise sigma must be ≥ 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    pub fn f(&self, x: f64) -> f64 {
        self.r * x * (1.0 - x)
    }

    pub fn df(&self, x: f64) -> f64 {
        self.r * (1.0 - 2.0 * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub stride: usize,
    pub init: [f64; 3],
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0, dt: 0.01, stride: 5, init: [0.15, 1.0, 1.0] }
    }
}

impl LorenzParams {
    /// Same parameters with the x-coordinate drawn uniformly from (0, 0.3).
    pub fn with_seeded_x0(mut self, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, 3);
        loop {
            let x: f64 = rng.random_range(0.0..0.3);
            if x > 0.0 {
                self.init[0] = x;
                return self;
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SystemError::Parameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.stride == 0 {
            return Err(SystemError::Parameter("stride must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Identifies which system produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemTag {
    MarkovChain,
    Logistic,
    NoisyLogistic,
    Brownian,
    Gbm,
    Lorenz,
}

impl SystemTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemTag::MarkovChain => "markov_chain",
            SystemTag::Logistic => "logistic",
            SystemTag::NoisyLogistic => "noisy_logistic",
            SystemTag::Brownian => "brownian",
            SystemTag::Gbm => "gbm",
            SystemTag::Lorenz => "lorenz",
        }
    }

    pub fn is_discrete(self) -> bool {
        self == SystemTag::MarkovChain
    }
}

impl std::fmt::Display for SystemTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub dt: Option<f64>,
    pub seed: u64,
    pub system: SystemTag,
}

impl Trajectory {
    pub fn new(values: Vec<f64>, dt: Option<f64>, seed: u64, system: SystemTag) -> Result<Self> {
        if values.len() < 2 {
            return Err(SystemError::Parameter("a trajectory needs at least two values".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SystemError::Simulation { step: i, reason: "non-finite value".into() });
        }
        Ok(Self { values, dt, seed, system })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Integer states of a discrete chain.
    pub fn states(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }
}

/// Ground-truth conditional law of the next state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransitionKernel {
    /// Discrete law; state `j` occupies the unit interval `[j, j + 1)`.
    Categorical { probs: Vec<f64> },
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    Dirac { point: f64 },
}

impl TransitionKernel {
    /// Gaussian kernel, collapsing to a Dirac when `std == 0`.
    pub fn gaussian(mean: f64, std: f64) -> Self {
        if std == 0.0 {
            TransitionKernel::Dirac { point: mean }
        } else {
            TransitionKernel::Gaussian { mean, std }
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, TransitionKernel::Dirac { .. })
    }

    /// Image under `y = scale·x + offset`. Categorical laws are unchanged.
    pub fn affine(&self, scale: f64, offset: f64) -> Self {
        match *self {
            TransitionKernel::Categorical { ref probs } => TransitionKernel::Categorical { probs: probs.clone() },
            TransitionKernel::Gaussian { mean, std } => {
                TransitionKernel::Gaussian { mean: scale * mean + offset, std: scale * std }
            }
            TransitionKernel::Uniform { lo, hi } => TransitionKernel::Uniform { lo: scale * lo + offset, hi: scale * hi + offset },
            TransitionKernel::Dirac { point } => TransitionKernel::Dirac { point: scale * point + offset },
        }
    }

    /// Probability of `[lo, hi)` under the untruncated law.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.mass_within(lo, hi, (f64::NEG_INFINITY, f64::INFINITY))
    }

    /// Probability of `[lo, hi)` under the law conditioned on `window`
    /// (closed interval). Dirac points outside the window are clamped onto it.
    /// Categorical laws ignore the window.
    pub fn mass_within(&self, lo: f64, hi: f64, window: (f64, f64)) -> f64 {
        match *self {
            TransitionKernel::Categorical { ref probs } => probs
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let (a, b) = (j as f64, j as f64 + 1.0);
                    let overlap = (hi.min(b) - lo.max(a)).max(0.0);
                    p * overlap
                })
                .sum(),
            TransitionKernel::Gaussian { mean, std } => {
                let total = normal::interval_mass(window.0, window.1, mean, std);
                if total <= 0.0 {
                    // Entire law is outside the window: fall back to the
                    // nearest window edge as a point mass.
                    let p = if mean < window.0 { window.0 } else { window.1 };
                    return if lo <= p && p < hi { 1.0 } else { 0.0 };
                }
                normal::interval_mass(lo.max(window.0), hi.min(window.1), mean, std) / total
            }
            TransitionKernel::Uniform { lo: a, hi: b } => {
                let a2 = a.max(window.0);
                let b2 = b.min(window.1);
                if b2 <= a2 {
                    return 0.0;
                }
                (hi.min(b2) - lo.max(a2)).max(0.0) / (b2 - a2)
            }
            TransitionKernel::Dirac { point } => {
                let p = point.clamp(window.0, window.1);
                if lo <= p && p < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            TransitionKernel::Categorical { ref probs } => probs.iter().enumerate().map(|(j, p)| p * (j as f64 + 0.5)).sum(),
            TransitionKernel::Gaussian { mean, .. } => mean,
            TransitionKernel::Uniform { lo, hi } => 0.5 * (lo + hi),
            TransitionKernel::Dirac { point } => point,
        }
    }
}

/// A concrete system with all of its parameters fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    MarkovChain { matrix: StochasticMatrix },
    Logistic(MapParams),
    Brownian(SdeParams),
    Gbm(SdeParams),
    Lorenz(LorenzParams),
}

impl System {
    pub fn tag(&self) -> SystemTag {
        match self {
            System::MarkovChain { .. } => SystemTag::MarkovChain,
            System::Logistic(p) if p.noise_sigma > 0.0 => SystemTag::NoisyLogistic,
            System::Logistic(_) => SystemTag::Logistic,
            System::Brownian(_) => SystemTag::Brownian,
            System::Gbm(_) => SystemTag::Gbm,
            System::Lorenz(_) => SystemTag::Lorenz,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        match self {
            System::MarkovChain { .. } => true,
            System::Logistic(p) => p.noise_sigma > 0.0,
            System::Brownian(p) | System::Gbm(p) => p.sigma > 0.0,
            System::Lorenz(_) => false,
        }
    }

    pub fn simulate(&self, steps: usize, seed: u64) -> Result<Trajectory> {
        match self {
            System::MarkovChain { matrix } => simulate_markov_chain(matrix, steps, None, seed),
            System::Logistic(p) => simulate_map(p, steps, seed),
            System::Brownian(p) => simulate_sde(p, SdeKind::Brownian, steps, seed),
            System::Gbm(p) => simulate_sde(p, SdeKind::Geometric, steps, seed),
            System::Lorenz(p) => simulate_lorenz(p, steps, seed),
        }
    }

    /// Exact law of `X_{t+1}` given `X_t = x_t`.
    ///
    /// Lorenz observations are not Markov in `x` alone; use
    /// [`lorenz_kernel`] with the full state instead.
    pub fn transition_kernel(&self, x_t: f64) -> Result<TransitionKernel> {
        if !x_t.is_finite() {
            return Err(SystemError::Parameter(format!("state {x_t} is not finite")));
        }
        match self {
            System::MarkovChain { matrix } => {
                let i = x_t as usize;
                if x_t < 0.0 || x_t.fract() != 0.0 || i >= matrix.n() {
                    return Err(SystemError::Parameter(format!("{x_t} is not a state of a {}-state chain", matrix.n())));
                }
                Ok(TransitionKernel::Categorical { probs: matrix.row(i).to_vec() })
            }
            System::Logistic(p) => {
                if !(x_t > 0.0 && x_t < 1.0) {
                    return Err(SystemError::Parameter(format!("logistic state {x_t} outside (0, 1)")));
                }
                if p.noise_sigma == 0.0 {
                    Ok(TransitionKernel::Dirac { point: p.f(x_t) })
                } else {
                    let std = (p.noise_sigma * p.df(x_t)).abs().max(STD_FLOOR);
                    Ok(TransitionKernel::Gaussian { mean: p.f(x_t), std })
                }
            }
            System::Brownian(p) => Ok(TransitionKernel::gaussian(x_t + p.mu * p.dt, p.sigma * p.dt.sqrt())),
            System::Gbm(p) => {
                if x_t <= 0.0 {
                    return Err(SystemError::Parameter(format!("GBM state {x_t} must be positive")));
                }
                Ok(TransitionKernel::gaussian(x_t + p.mu * x_t * p.dt, p.sigma * x_t * p.dt.sqrt()))
            }
            System::Lorenz(_) => Err(SystemError::Parameter(
                "the Lorenz kernel depends on the full (x, y, z) state; use lorenz_kernel".into(),
            )),
        }
    }

    /// Kernels for predicting `values[t]` from the history up to `t - 1`,
    /// returned for `t = 1..len` (index `t - 1`).
    pub fn ground_truth(&self, traj: &Trajectory) -> Result<Vec<TransitionKernel>> {
        match self {
            System::Lorenz(_) => Ok(traj.values[1..].iter().map(|&x| TransitionKernel::Dirac { point: x }).collect()),
            _ => traj.values[..traj.len() - 1].iter().map(|&x| self.transition_kernel(x)).collect(),
        }
    }
}

pub fn simulate_markov_chain(matrix: &StochasticMatrix, steps: usize, start: Option<usize>, seed: u64) -> Result<Trajectory> {
    if steps == 0 {
        return Err(SystemError::Parameter("steps must be ≥ 1".into()));
    }
    let n = matrix.n();
    let mut rng = seeded_rng(seed, 1);
    let mut state = match start {
        Some(s) if s < n => s,
        Some(s) => return Err(SystemError::Parameter(format!("start state {s} out of range"))),
        None => rng.random_range(0..n),
    };
    let mut values = Vec::with_capacity(steps + 1);
    values.push(state as f64);
    for _ in 0..steps {
        let u: f64 = rng.random();
        let row = matrix.row(state);
        let mut acc = 0.0;
        // Fall back to the last state with positive mass to absorb rounding.
        let mut next = row.iter().rposition(|&p| p > 0.0).unwrap_or(n - 1);
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        state = next;
        values.push(state as f64);
    }
    Trajectory::new(values, None, seed, SystemTag::MarkovChain)
}

/// Logistic map, optionally perturbed: `x_{t+1} = f(x_t + ε)`, ε ~ N(0, σ²).
///
/// With noise, states are clipped to `[LOGISTIC_CLIP_LO, LOGISTIC_CLIP_HI]`.
pub fn simulate_map(params: &MapParams, steps: usize, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    if steps == 0 {
        return Err(SystemError::Parameter("steps must be ≥ 1".into()));
    }
    let noisy = params.noise_sigma > 0.0;
    let mut rng = seeded_rng(seed, 2);
    let mut x = params.x0;
    let mut values = Vec::with_capacity(steps + 1);
    values.push(x);
    for step in 1..=steps {
        x = if noisy {
            let eps = params.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            params.f(x + eps).clamp(LOGISTIC_CLIP_LO, LOGISTIC_CLIP_HI)
        } else {
            params.f(x)
        };
        if !(x > 0.0 && x < 1.0) {
            return Err(SystemError::Simulation { step, reason: format!("state {x} escaped (0, 1)") });
        }
        values.push(x);
    }
    let tag = if noisy { SystemTag::NoisyLogistic } else { SystemTag::Logistic };
    Trajectory::new(values, None, seed, tag)
}

/// Euler–Maruyama for Brownian motion or geometric Brownian motion.
pub fn simulate_sde(params: &SdeParams, kind: SdeKind, steps: usize, seed: u64) -> Result<Trajectory> {
    params.validate(kind)?;
    if steps == 0 {
        return Err(SystemError::Parameter("steps must be ≥ 1".into()));
    }
    let mut rng = seeded_rng(seed, 4);
    let sqrt_dt = params.dt.sqrt();
    let mut x = params.x0;
    let mut values = Vec::with_capacity(steps + 1);
    values.push(x);
    for step in 1..=steps {
        let z = if params.sigma > 0.0 { rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        x += match kind {
            SdeKind::Brownian => params.mu * params.dt + params.sigma * sqrt_dt * z,
            SdeKind::Geometric => params.mu * x * params.dt + params.sigma * x * sqrt_dt * z,
        };
        if !x.is_finite() {
            return Err(SystemError::Simulation { step, reason: "non-finite state".into() });
        }
        values.push(x);
    }
    let tag = match kind {
        SdeKind::Brownian => SystemTag::Brownian,
        SdeKind::Geometric => SystemTag::Gbm,
    };
    Trajectory::new(values, Some(params.dt), seed, tag)
}

/// One forward-Euler step of the Lorenz equations.
pub fn lorenz_step(params: &LorenzParams, [x, y, z]: [f64; 3]) -> [f64; 3] {
    let dx = params.sigma * (y - x);
    let dy = x * (params.rho - z) - y;
    let dz = x * y - params.beta * z;
    [x + params.dt * dx, y + params.dt * dy, z + params.dt * dz]
}

fn lorenz_advance(params: &LorenzParams, mut state: [f64; 3], step: usize) -> Result<[f64; 3]> {
    for _ in 0..params.stride {
        state = lorenz_step(params, state);
        if state.iter().any(|v| !v.is_finite() || v.abs() > LORENZ_BLOWUP) {
            return Err(SystemError::Simulation { step, reason: format!("Lorenz state blew up: {state:?}") });
        }
    }
    Ok(state)
}

/// x-component of the Lorenz system, observed every `stride` Euler steps.
pub fn simulate_lorenz(params: &LorenzParams, steps: usize, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    if steps == 0 {
        return Err(SystemError::Parameter("steps must be ≥ 1".into()));
    }
    let mut state = params.init;
    let mut values = Vec::with_capacity(steps + 1);
    values.push(state[0]);
    for step in 1..=steps {
        state = lorenz_advance(params, state, step)?;
        values.push(state[0]);
    }
    Trajectory::new(values, Some(params.dt * params.stride as f64), seed, SystemTag::Lorenz)
}

/// Dirac kernel of the next observed x-coordinate given the full state.
pub fn lorenz_kernel(params: &LorenzParams, state: [f64; 3]) -> Result<TransitionKernel> {
    params.validate()?;
    let next = lorenz_advance(params, state, 1)?;
    Ok(TransitionKernel::Dirac { point: next[0] })
}

/// Fixed point of `π ↦ π P` by power iteration from the uniform vector.
///
/// If the iterates oscillate (periodic chains), the lazy chain
/// `0.999·P + 0.001·I`, which shares the stationary distribution, is used.
pub fn stationary_distribution(matrix: &StochasticMatrix) -> Result<Vec<f64>> {
    let n = matrix.n();
    let mut pi = vec![1.0 / n as f64; n];
    let mut damped = false;
    let mut history: Vec<f64> = Vec::new();
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_ITERATION_CAP {
        let mut next = matrix.step(&pi);
        if damped {
            for (nx, p) in next.iter_mut().zip(&pi) {
                *nx = POWER_ITERATION_DAMPING * *nx + (1.0 - POWER_ITERATION_DAMPING) * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if residual <= POWER_ITERATION_TOL {
            return Ok(pi);
        }
        if !damped {
            history.push(residual);
            // No progress over 50 iterations: the chain is (nearly) periodic.
            if history.len() > 50 && residual > 0.9 * history[history.len() - 51] {
                damped = true;
            }
        }
    }
    // The damped chain can stall just above the tolerance; accept anything
    // that is invariant for the undamped chain.
    let check = matrix.step(&pi);
    let invariance = check.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if invariance <= 1e-12 {
        return Ok(pi);
    }
    Err(SystemError::NoConvergence { iterations: POWER_ITERATION_CAP, residual })
}

/// Closed-form marginal density of `X_t` for BM (normal) or GBM (log-normal).
pub fn marginal_density(kind: SdeKind, params: &SdeParams, t: f64, x: f64) -> Result<f64> {
    params.validate(kind)?;
    if !(t > 0.0) {
        return Err(SystemError::Parameter(format!("t must be positive, got {t}")));
    }
    let var = params.sigma * params.sigma * t;
    if var == 0.0 {
        return Err(SystemError::Parameter("sigma = 0 gives a degenerate marginal".into()));
    }
    match kind {
        SdeKind::Brownian => Ok(normal::pdf(x, params.x0 + params.mu * t, var.sqrt())),
        SdeKind::Geometric => {
            if x <= 0.0 {
                return Err(SystemError::Domain(x));
            }
            let m = (x / params.x0).ln() - params.mu * t - 0.5 * var;
            Ok((-(m * m) / (2.0 * var)).exp() / (x * (2.0 * std::f64::consts::PI * var).sqrt()))
        }
    }
}
