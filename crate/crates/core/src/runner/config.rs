use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::Ar1NetConfig;
use crate::hpdf::RefinePolicy;
use crate::metrics::Metric;
use crate::models::ngram::DEFAULT_ALPHA;
use crate::systems::{seeded_rng, LorenzParams, MapParams, SdeParams, StochasticMatrix, System};

use super::RunnerError;

/// Environment variable holding the logit server URL.
pub const REMOTE_URL_ENV: &str = "ICL_REMOTE_URL";

const INIT_STREAM: u64 = 6;

/// One experiment, read from a single JSON document. Unknown keys are
/// rejected everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default = "default_digits")]
    pub n_digits: usize,
    /// Transitions simulated per seed (the series has `steps + 1` states).
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Defaults to full refinement to `n_digits`.
    #[serde(default)]
    pub refine: Option<RefineSpec>,
    /// Defaults to Bhattacharyya for stochastic systems, SDM otherwise.
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default)]
    pub baselines: BaselineSpec,
}

fn default_digits() -> usize {
    3
}
fn default_steps() -> usize {
    1000
}
fn default_temperature() -> f64 {
    1.0
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Seeds `start..start + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub start: u64,
    pub count: u64,
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self { start: 0, count: 10 }
    }
}

impl SeedSpec {
    pub fn range(&self) -> Range<u64> {
        self.start..self.start + self.count
    }

    /// Parses `a..b` (half-open).
    pub fn parse(text: &str) -> Result<Self, RunnerError> {
        let bad = || RunnerError::Config(format!("seed range {text:?} is not of the form a..b"));
        let (a, b) = text.split_once("..").ok_or_else(bad)?;
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if b <= a {
            return Err(RunnerError::Config(format!("seed range {text:?} is empty")));
        }
        Ok(Self { start: a, count: b - a })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// A fixed `matrix`, one sampled from `matrix_seed`, or (neither) a
    /// fresh matrix sampled from each run seed.
    MarkovChain {
        n_states: usize,
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        matrix_seed: Option<u64>,
    },
    /// `x0` omitted: drawn uniformly from (0.1, 0.9) per seed.
    Logistic {
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default)]
        x0: Option<f64>,
    },
    /// Omitted fields take the Brownian defaults.
    Brownian {
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default)]
        x0: Option<f64>,
    },
    /// Omitted fields take the GBM defaults.
    Gbm {
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default)]
        x0: Option<f64>,
    },
    /// Omitted fields take the classic parameters; without `init` the
    /// initial x is drawn from (0, 0.3) per seed.
    Lorenz {
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        rho: Option<f64>,
        #[serde(default)]
        beta: Option<f64>,
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default)]
        stride: Option<usize>,
        #[serde(default)]
        init: Option<[f64; 3]>,
    },
}

fn default_r() -> f64 {
    3.9
}

fn sde(d: SdeParams, mu: Option<f64>, sigma: Option<f64>, dt: Option<f64>, x0: Option<f64>) -> SdeParams {
    SdeParams { mu: mu.unwrap_or(d.mu), sigma: sigma.unwrap_or(d.sigma), dt: dt.unwrap_or(d.dt), x0: x0.unwrap_or(d.x0) }
}

impl SystemSpec {
    /// The concrete system simulated for `seed`.
    pub fn instantiate(&self, seed: u64) -> Result<System, RunnerError> {
        let sys = match self {
            SystemSpec::MarkovChain { n_states, matrix, matrix_seed } => {
                let matrix = match (matrix, matrix_seed) {
                    (Some(rows), _) => StochasticMatrix::new(rows.clone()),
                    (None, Some(s)) => StochasticMatrix::sample(*n_states, *s),
                    (None, None) => StochasticMatrix::sample(*n_states, seed),
                }
                .map_err(|e| RunnerError::Config(e.to_string()))?;
                System::MarkovChain { matrix }
            }
            SystemSpec::Logistic { r, noise_sigma, x0 } => {
                let x0 = x0.unwrap_or_else(|| {
                    use rand::Rng;
                    seeded_rng(seed, INIT_STREAM).random_range(0.1..0.9)
                });
                System::Logistic(MapParams { r: *r, noise_sigma: *noise_sigma, x0 })
            }
            SystemSpec::Brownian { mu, sigma, dt, x0 } => {
                System::Brownian(sde(SdeParams::brownian_default(), *mu, *sigma, *dt, *x0))
            }
            SystemSpec::Gbm { mu, sigma, dt, x0 } => System::Gbm(sde(SdeParams::gbm_default(), *mu, *sigma, *dt, *x0)),
            SystemSpec::Lorenz { sigma, rho, beta, dt, stride, init } => {
                let d = LorenzParams::default();
                let p = LorenzParams {
                    sigma: sigma.unwrap_or(d.sigma),
                    rho: rho.unwrap_or(d.rho),
                    beta: beta.unwrap_or(d.beta),
                    dt: dt.unwrap_or(d.dt),
                    stride: stride.unwrap_or(d.stride),
                    init: init.unwrap_or(d.init),
                };
                System::Lorenz(if init.is_some() { p } else { p.with_seeded_x0(seed) })
            }
        };
        Ok(sys)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::MarkovChain { .. } => "markov_chain",
            SystemSpec::Logistic { noise_sigma, .. } if *noise_sigma > 0.0 => "noisy_logistic",
            SystemSpec::Logistic { .. } => "logistic",
            SystemSpec::Brownian { .. } => "brownian",
            SystemSpec::Gbm { .. } => "gbm",
            SystemSpec::Lorenz { .. } => "lorenz",
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, SystemSpec::MarkovChain { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Oracle {},
    Ngram {
        #[serde(default = "bigram")]
        order: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    /// `url` falls back to the `ICL_REMOTE_URL` environment variable, which
    /// takes precedence when set.
    Remote {
        #[serde(default)]
        url: Option<String>,
        #[serde(default)]
        vocab: Option<PathBuf>,
        /// Longest token sequence the server accepts.
        #[serde(default)]
        context_limit: Option<usize>,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Oracle {}
    }
}

fn bigram() -> usize {
    2
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    pub target_depth: usize,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    #[serde(default = "fit_min")]
    pub min_context: usize,
    #[serde(default)]
    pub max_context: Option<usize>,
    #[serde(default = "plateau")]
    pub plateau_threshold: f64,
}

fn fit_min() -> usize {
    crate::scaling::DEFAULT_FIT_MIN
}
fn plateau() -> f64 {
    crate::scaling::DEFAULT_PLATEAU_THRESHOLD
}

impl Default for FitSpec {
    fn default() -> Self {
        Self { min_context: fit_min(), max_context: None, plateau_threshold: plateau() }
    }
}

impl FitSpec {
    pub fn window(&self) -> crate::scaling::FitWindow {
        crate::scaling::FitWindow { min: self.min_context, max: self.max_context }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Unigram,
    Bigram,
    Ar1Linear,
    Ar1Net,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Unigram => "unigram",
            BaselineKind::Bigram => "bigram",
            BaselineKind::Ar1Linear => "ar1_linear",
            BaselineKind::Ar1Net => "ar1_net",
        }
    }

    fn for_discrete(self) -> bool {
        matches!(self, BaselineKind::Unigram | BaselineKind::Bigram)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    /// Defaults to unigram + bigram for chains, linear + network AR1 otherwise.
    #[serde(default)]
    pub kinds: Option<Vec<BaselineKind>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// AR1 context lengths; defaults to the geometric grid up to `steps`.
    #[serde(default)]
    pub grid: Option<Vec<usize>>,
    #[serde(default)]
    pub net: Ar1NetConfig,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { kinds: None, alpha: DEFAULT_ALPHA, grid: None, net: Ar1NetConfig::default() }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunnerError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            RunnerError::Config(m) => RunnerError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn refine_policy(&self) -> RefinePolicy {
        match self.refine {
            None => RefinePolicy::full(self.effective_digits()),
            Some(RefineSpec { target_depth, top_k: None }) => RefinePolicy::full(target_depth),
            Some(RefineSpec { target_depth, top_k: Some(k) }) => RefinePolicy::top_k(target_depth, k),
        }
    }

    /// Digits per state actually serialized (chains always use one).
    pub fn effective_digits(&self) -> usize {
        if self.system.is_discrete() {
            1
        } else {
            self.n_digits
        }
    }

    /// Tokens in one serialized series.
    pub fn sequence_len(&self) -> usize {
        let states = self.steps + 1;
        if self.system.is_discrete() {
            states
        } else {
            states * (self.n_digits + 1) - 1
        }
    }

    pub fn stochastic(&self) -> Result<bool, RunnerError> {
        Ok(self.system.instantiate(self.seeds.start)?.is_stochastic())
    }

    pub fn metric(&self) -> Result<Metric, RunnerError> {
        Ok(self.metric.unwrap_or(Metric::default_for(self.stochastic()?)))
    }

    pub fn baseline_kinds(&self) -> Vec<BaselineKind> {
        self.baselines.kinds.clone().unwrap_or_else(|| {
            if self.system.is_discrete() {
                vec![BaselineKind::Unigram, BaselineKind::Bigram]
            } else {
                vec![BaselineKind::Ar1Linear, BaselineKind::Ar1Net]
            }
        })
    }

    pub fn baseline_grid(&self) -> Vec<usize> {
        self.baselines
            .grid
            .clone()
            .unwrap_or_else(|| crate::baselines::DEFAULT_GRID.iter().copied().filter(|&t| t <= self.steps).collect())
    }

    /// Resolved server URL: environment first, then the config.
    pub fn remote_url(&self) -> Option<String> {
        let env = std::env::var(REMOTE_URL_ENV).ok().filter(|s| !s.trim().is_empty());
        match &self.backend {
            BackendSpec::Remote { url, .. } => env.or_else(|| url.clone()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let fail = |m: String| Err(RunnerError::Config(m));
        let n_max = crate::codec::MAX_DIGITS;
        if !(1..=n_max).contains(&self.n_digits) {
            return fail(format!("n_digits must be in 1..={n_max}, got {}", self.n_digits));
        }
        if self.steps < 1 {
            return fail("steps must be ≥ 1".into());
        }
        if self.seeds.count < 1 {
            return fail("at least one seed is required".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if let SystemSpec::MarkovChain { n_states, matrix, .. } = &self.system {
            if !(2..=10).contains(n_states) {
                return fail(format!("n_states must be in 2..=10, got {n_states}"));
            }
            if matrix.as_ref().is_some_and(|m| m.len() != *n_states) {
                return fail(format!("matrix does not have {n_states} rows"));
            }
        }
        // Surfaces parameter errors (r out of range, dt ≤ 0, …) before any work.
        let sys = self.system.instantiate(self.seeds.start)?;
        sys.simulate(1, self.seeds.start).map_err(|e| RunnerError::Config(e.to_string()))?;
        self.refine_policy()
            .validate(self.effective_digits())
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        if self.metric == Some(Metric::Bhattacharyya) && !sys.is_stochastic() {
            return fail("Bhattacharyya needs a stochastic system; use sdm or nll".into());
        }
        match &self.backend {
            BackendSpec::Oracle {} => {}
            BackendSpec::Ngram { order, alpha } => {
                if !(1..=2).contains(order) || !(*alpha >= 0.0) {
                    return fail(format!("ngram backend needs order 1 or 2 and alpha ≥ 0, got {order}, {alpha}"));
                }
            }
            BackendSpec::Remote { context_limit, .. } => {
                if !cfg!(feature = "remote") {
                    return fail("this build has no remote backend".into());
                }
                if let Some(limit) = context_limit {
                    if self.sequence_len() > *limit {
                        return fail(format!(
                            "series of {} tokens exceeds the server context limit {limit}",
                            self.sequence_len()
                        ));
                    }
                }
            }
        }
        let kinds = self.baseline_kinds();
        if let Some(k) = kinds.iter().find(|k| k.for_discrete() != self.system.is_discrete()) {
            return fail(format!("baseline {} does not apply to {}", k.as_str(), self.system.name()));
        }
        if let Some(&t) = self.baseline_grid().iter().find(|&&t| t == 0 || t > self.steps) {
            return fail(format!("baseline grid point {t} outside 1..={}", self.steps));
        }
        self.baselines.net.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    /// Everything that determines per-seed results; a run directory may
    /// only be resumed under an identical fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.seeds = SeedSpec::default();
        c.out_dir = PathBuf::new();
        c.fit = FitSpec::default();
        c.baselines = BaselineSpec::default();
        serde_json::to_string(&c).expect("config serializes")
    }
}
