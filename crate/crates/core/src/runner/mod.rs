//! Seeded experiment sweeps: simulate → serialize → extract → score, with
//! per-seed resumable artifacts and aggregated outputs.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.json              experiment that owns the directory
//! trajectories/seed-K.json simulated series (simulate stage)
//! pdfs/seed-K.jsonl        one Hierarchy-PDF record per scored state
//! pdfs/seed-K.calls.json   forward-call accounting; marks the PDFs complete
//! seeds/seed-K.csv         per-state losses; marks the seed complete
//! loss.csv                 all completed seeds, ordered by seed
//! summary.json             seed average, power-law fit, plateau onset
//! loss_<system>.svg        log-log plot
//! baselines/<kind>/…       the same layout for reference learners
//! ```

pub mod config;
mod output;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, Ar1Kind, NgramOrder};
use crate::codec::{self, RescaleMap, TokenId, TokenSeq, WINDOW};
use crate::hpdf::{self, ExtractOptions, Extraction, HierarchyPdf, HpdfError};
use crate::metrics::{self, LossCurve, Metric};
use crate::models::{ModelBackend, NgramBackend, OracleBackend};
use crate::par;
use crate::scaling::{self, PowerLawFit};
use crate::systems::{System, Trajectory, TransitionKernel};

pub use config::{
    BackendSpec, BaselineKind, BaselineSpec, ExperimentConfig, FitSpec, RefineSpec, SeedSpec, SystemSpec, REMOTE_URL_ENV,
};
pub use output::{
    common_grid, curves_by_seed, loss_csv_bytes, read_loss_csv, render_svg, write_atomic, write_loss_csv, LossRow,
    PlotSeries,
};

use output::io_err;

/// Window of the digit tiling used to score discrete chains (state `j`
/// occupies `[j, j + 1)`).
const CHAIN_WINDOW: (f64, f64) = (0.0, 10.0);

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data: {0}")]
    Format(String),
}

impl RunnerError {
    /// Process exit code: 2 for configuration errors, 1 otherwise. Backend
    /// and partial failures are per seed; see [`Outcome::exit_code`].
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::Io { .. } | RunnerError::Format(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunnerError>;

/// Why one seed did not complete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    /// The model backend failed (as opposed to simulation or scoring).
    pub backend: bool,
    pub message: String,
}

impl SeedFailure {
    fn other(seed: u64, e: impl std::fmt::Display) -> Self {
        Self { seed, backend: false, message: e.to_string() }
    }

    fn from_hpdf(seed: u64, e: HpdfError) -> Self {
        Self { seed, backend: matches!(e, HpdfError::Model(_)), message: e.to_string() }
    }
}

/// Everything derived from simulating one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub system: System,
    pub trajectory: Trajectory,
    /// `None` for discrete chains, which are serialized as raw states.
    pub rescale: Option<RescaleMap>,
    pub tokens: TokenSeq,
    /// Law of state `s` at index `s - 1`, in the units the tokens encode.
    pub kernels: Vec<TransitionKernel>,
    /// Realized state `s` at index `s - 1`, in the same units.
    pub truths: Vec<f64>,
    pub window: (f64, f64),
}

pub fn simulate_seed(cfg: &ExperimentConfig, seed: u64) -> std::result::Result<SeedData, SeedFailure> {
    let fail = |e: &dyn std::fmt::Display| SeedFailure::other(seed, e);
    let system = cfg.system.instantiate(seed).map_err(|e| fail(&e))?;
    let trajectory = system.simulate(cfg.steps, seed).map_err(|e| fail(&e))?;
    let raw = system.ground_truth(&trajectory).map_err(|e| fail(&e))?;
    if cfg.system.is_discrete() {
        let states = trajectory.states();
        let tokens = codec::serialize_states(&states).map_err(|e| fail(&e))?;
        let truths = states[1..].iter().map(|&s| s as f64 + 0.5).collect();
        return Ok(SeedData { seed, system, trajectory, rescale: None, tokens, kernels: raw, truths, window: CHAIN_WINDOW });
    }
    let map = RescaleMap::fit(&trajectory).map_err(|e| fail(&e))?;
    let tokens = codec::serialize_trajectory(&trajectory, &map, cfg.n_digits).map_err(|e| fail(&e))?;
    let kernels = raw.iter().map(|k| map.kernel(k)).collect();
    let truths = trajectory.values[1..].iter().map(|&x| map.rescale_checked(x)).collect::<std::result::Result<_, _>>();
    let truths = truths.map_err(|e| fail(&e))?;
    Ok(SeedData { seed, system, trajectory, rescale: Some(map), tokens, kernels, truths, window: WINDOW })
}

fn extract_options(cfg: &ExperimentConfig, data: &SeedData) -> ExtractOptions {
    let mut opts = ExtractOptions { temperature: cfg.temperature, ..Default::default() };
    if let System::MarkovChain { matrix } = &data.system {
        opts.allowed = (0..matrix.n() as TokenId).collect();
    }
    opts
}

fn run_backend<B: ModelBackend>(
    backend: &B,
    cfg: &ExperimentConfig,
    data: &SeedData,
) -> std::result::Result<Extraction, SeedFailure> {
    hpdf::extract(backend, &data.tokens, cfg.refine_policy(), &extract_options(cfg, data))
        .map_err(|e| SeedFailure::from_hpdf(data.seed, e))
}

/// Builds the configured backend for this seed and extracts every state's PDF.
pub fn extract_seed(cfg: &ExperimentConfig, data: &SeedData) -> std::result::Result<Extraction, SeedFailure> {
    let backend_fail = |e: &dyn std::fmt::Display| SeedFailure { seed: data.seed, backend: true, message: e.to_string() };
    match &cfg.backend {
        BackendSpec::Oracle {} => {
            let b = if cfg.system.is_discrete() {
                OracleBackend::for_chain(data.kernels.clone())
            } else {
                OracleBackend::for_series(data.kernels.clone(), cfg.n_digits)
            }
            .map_err(|e| backend_fail(&e))?;
            run_backend(&b, cfg, data)
        }
        BackendSpec::Ngram { order, alpha } => {
            let b = match &data.system {
                System::MarkovChain { matrix } => NgramBackend::for_chain(matrix.n(), *order, *alpha),
                _ => NgramBackend::for_tokens(*order, *alpha),
            }
            .map_err(|e| backend_fail(&e))?;
            run_backend(&b, cfg, data)
        }
        #[cfg(feature = "remote")]
        BackendSpec::Remote { vocab, .. } => {
            use crate::models::{RemoteBackend, RemoteOptions, VocabMap};
            let url = cfg.remote_url().ok_or_else(|| backend_fail(&"no server URL configured"))?;
            let vocab = match vocab {
                Some(path) => VocabMap::from_file(path).map_err(|e| backend_fail(&e))?,
                None => VocabMap::identity(),
            };
            let b = RemoteBackend::new(RemoteOptions::new(url, vocab)).map_err(|e| backend_fail(&e))?;
            run_backend(&b, cfg, data)
        }
        #[cfg(not(feature = "remote"))]
        BackendSpec::Remote { .. } => Err(backend_fail(&"this build has no remote backend")),
    }
}

/// Loss of every extracted state against its kernel; context length of
/// state `s` is `s` (the states `0..s` precede it).
pub fn score_seed(
    cfg: &ExperimentConfig,
    data: &SeedData,
    pdfs: &[HierarchyPdf],
    metric: Metric,
) -> std::result::Result<Vec<LossRow>, SeedFailure> {
    let n = cfg.effective_digits();
    pdfs.iter()
        .map(|pdf| {
            let s = pdf.state_index;
            let (kernel, x) = match (data.kernels.get(s - 1), data.truths.get(s - 1)) {
                (Some(k), Some(x)) => (k, *x),
                _ => return Err(SeedFailure::other(data.seed, format!("PDF for unknown state {s}"))),
            };
            let value = metrics::score(metric, kernel, pdf, x, data.window, n).map_err(|e| SeedFailure::other(data.seed, e))?;
            Ok(LossRow { system: cfg.system.name().to_string(), seed: data.seed, context_len: s, metric, value })
        })
        .collect()
}

/// Forward-call accounting stored next to a seed's PDFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub forward_calls: u64,
    pub cache_hits: u64,
}

/// Simulated series as written by the simulate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub system: System,
    pub values: Vec<f64>,
    pub dt: Option<f64>,
    pub rescale: Option<RescaleMap>,
    /// Serialized prompt: digits with `,` separators.
    pub tokens: String,
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir(PathBuf);

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self(root.into())
    }

    pub fn root(&self) -> &Path {
        &self.0
    }

    pub fn trajectory(&self, seed: u64) -> PathBuf {
        self.0.join("trajectories").join(format!("seed-{seed}.json"))
    }

    pub fn pdfs(&self, seed: u64) -> PathBuf {
        self.0.join("pdfs").join(format!("seed-{seed}.jsonl"))
    }

    pub fn calls(&self, seed: u64) -> PathBuf {
        self.0.join("pdfs").join(format!("seed-{seed}.calls.json"))
    }

    pub fn seed_losses(&self, seed: u64) -> PathBuf {
        self.0.join("seeds").join(format!("seed-{seed}.csv"))
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.0.join("loss.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.0.join("summary.json")
    }

    pub fn plot(&self, system: &str) -> PathBuf {
        self.0.join(format!("loss_{system}.svg"))
    }

    pub fn baseline(&self, kind: BaselineKind) -> RunDir {
        RunDir(self.0.join("baselines").join(kind.as_str()))
    }
}

/// Claims `dir` for `cfg`, refusing to mix results of different experiments.
pub fn prepare_run_dir(cfg: &ExperimentConfig, dir: &RunDir) -> Result<()> {
    let path = dir.root().join("config.json");
    match std::fs::read_to_string(&path) {
        Ok(text) => {
            let stored = ExperimentConfig::from_json(&text)
                .map_err(|e| RunnerError::Config(format!("{} holds an unreadable config: {e}", path.display())))?;
            if stored.fingerprint() != cfg.fingerprint() {
                return Err(RunnerError::Config(format!(
                    "{} belongs to a different experiment; choose another --out",
                    dir.root().display()
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomic(&path, cfg.to_json().as_bytes()),
        Err(e) => Err(RunnerError::Io { path, source: e }),
    }
}

fn read_pdfs(path: &Path) -> Result<Vec<HierarchyPdf>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(|l| HierarchyPdf::from_json_line(l).map_err(|e| RunnerError::Format(format!("{}: {e}", path.display()))))
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Format(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Per-seed result of a stage.
type SeedResult<T> = std::result::Result<T, SeedFailure>;

fn io_failure(seed: u64, e: RunnerError) -> SeedFailure {
    SeedFailure::other(seed, e)
}

/// Simulate stage for one seed (always recomputed; it is cheap and pure).
pub fn write_trajectory(cfg: &ExperimentConfig, dir: &RunDir, seed: u64) -> SeedResult<SeedData> {
    let data = simulate_seed(cfg, seed)?;
    let rec = TrajectoryRecord {
        seed,
        system: data.system.clone(),
        values: data.trajectory.values.clone(),
        dt: data.trajectory.dt,
        rescale: data.rescale,
        tokens: data.tokens.to_string(),
    };
    write_json(&dir.trajectory(seed), &rec).map_err(|e| io_failure(seed, e))?;
    Ok(data)
}

/// Extract stage: reuses completed PDFs on disk.
pub fn extract_stage(cfg: &ExperimentConfig, dir: &RunDir, data: &SeedData) -> SeedResult<(Vec<HierarchyPdf>, CallRecord)> {
    let seed = data.seed;
    let (pdf_path, calls_path) = (dir.pdfs(seed), dir.calls(seed));
    if calls_path.exists() {
        let calls = read_json(&calls_path).map_err(|e| io_failure(seed, e))?;
        let pdfs = read_pdfs(&pdf_path).map_err(|e| io_failure(seed, e))?;
        return Ok((pdfs, calls));
    }
    let ex = extract_seed(cfg, data)?;
    let mut body = String::new();
    for pdf in &ex.pdfs {
        body.push_str(&pdf.to_json_line());
        body.push('\n');
    }
    write_atomic(&pdf_path, body.as_bytes()).map_err(|e| io_failure(seed, e))?;
    let calls = CallRecord { forward_calls: ex.forward_calls, cache_hits: ex.cache_hits };
    write_json(&calls_path, &calls).map_err(|e| io_failure(seed, e))?;
    Ok((ex.pdfs, calls))
}

/// Evaluate stage: reuses completed seed losses on disk.
pub fn evaluate_stage(cfg: &ExperimentConfig, dir: &RunDir, seed: u64, metric: Metric) -> SeedResult<Vec<LossRow>> {
    let path = dir.seed_losses(seed);
    if path.exists() {
        return read_loss_csv(&path).map_err(|e| io_failure(seed, e));
    }
    let data = simulate_seed(cfg, seed)?;
    let (pdfs, _) = extract_stage(cfg, dir, &data)?;
    let rows = score_seed(cfg, &data, &pdfs, metric)?;
    write_loss_csv(&path, &rows).map_err(|e| io_failure(seed, e))?;
    Ok(rows)
}

/// Seed average and scaling diagnostics of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub system: String,
    pub model: String,
    pub metric: Metric,
    pub n_digits: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<SeedFailure>,
    /// Forward calls over completed seeds (absent for baselines).
    pub forward_calls: Option<u64>,
    pub cache_hits: Option<u64>,
    pub curve: LossCurve,
    pub fit: Option<PowerLawFit>,
    pub fit_error: Option<String>,
    pub plateau_onset: Option<usize>,
}

/// Result of a sweep: `summary` is `None` when no seed completed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Option<Summary>,
    pub failures: Vec<SeedFailure>,
}

impl Outcome {
    /// 0 success, 3 nothing completed because of the backend, 4 partial.
    pub fn exit_code(&self) -> i32 {
        match (&self.summary, self.failures.is_empty()) {
            (Some(_), true) => 0,
            (Some(_), false) => 4,
            (None, _) if self.failures.iter().any(|f| f.backend) => 3,
            (None, _) => 4,
        }
    }
}

/// Fit and plateau diagnostics of an averaged curve.
pub fn analyze(curve: &LossCurve, fit: &FitSpec) -> (Option<PowerLawFit>, Option<String>, Option<usize>) {
    let (fit_result, fit_error) = match scaling::fit_power_law(curve, fit.window()) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    (fit_result, fit_error, scaling::detect_plateau(curve, fit.plateau_threshold))
}

struct Aggregate<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a RunDir,
    model: String,
    metric: Metric,
}

impl Aggregate<'_> {
    /// Writes loss CSV, summary and plot from the completed seeds.
    fn finish(
        &self,
        results: Vec<(u64, SeedResult<Vec<LossRow>>)>,
        calls: Option<CallRecord>,
    ) -> Result<Outcome> {
        let mut rows = Vec::new();
        let mut curves = Vec::new();
        let mut seeds = Vec::new();
        let mut failures = Vec::new();
        for (seed, r) in results {
            match r {
                Ok(seed_rows) => {
                    let pts: Vec<_> = seed_rows.iter().map(|r| (r.context_len, r.value)).collect();
                    curves.push(LossCurve {
                        metric: self.metric,
                        context_lens: pts.iter().map(|p| p.0).collect(),
                        values: pts.iter().map(|p| p.1).collect(),
                        std_err: None,
                    });
                    rows.extend(seed_rows);
                    seeds.push(seed);
                }
                Err(f) => failures.push(f),
            }
        }
        if seeds.is_empty() {
            return Ok(Outcome { summary: None, failures });
        }
        write_loss_csv(&self.dir.loss_csv(), &rows)?;
        let curve = scaling::average_curves(&common_grid(&curves)).map_err(|e| RunnerError::Format(e.to_string()))?;
        let (fit, fit_error, plateau_onset) = analyze(&curve, &self.cfg.fit);
        let system = self.cfg.system.name().to_string();
        let summary = Summary {
            system: system.clone(),
            model: self.model.clone(),
            metric: self.metric,
            n_digits: self.cfg.effective_digits(),
            steps: self.cfg.steps,
            seeds,
            failed_seeds: failures.clone(),
            forward_calls: calls.map(|c| c.forward_calls),
            cache_hits: calls.map(|c| c.cache_hits),
            curve,
            fit,
            fit_error,
            plateau_onset,
        };
        write_json(&self.dir.summary(), &summary)?;
        let series = [PlotSeries { label: self.model.clone(), curve: &summary.curve, fit: summary.fit.as_ref() }];
        let title = format!("{system}: {} in-context loss", self.model);
        write_atomic(&self.dir.plot(&system), render_svg(&title, self.metric, &series).as_bytes())?;
        Ok(Outcome { summary: Some(summary), failures })
    }
}

pub fn backend_name(spec: &BackendSpec) -> String {
    match spec {
        BackendSpec::Oracle {} => "oracle".into(),
        BackendSpec::Ngram { order: 1, .. } => "unigram".into(),
        BackendSpec::Ngram { .. } => "bigram".into(),
        BackendSpec::Remote { .. } => "remote".into(),
    }
}

/// Full sweep over the configured seeds (parallel across seeds).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = RunDir::new(&cfg.out_dir);
    prepare_run_dir(cfg, &dir)?;
    let metric = cfg.metric()?;
    let seeds: Vec<u64> = cfg.seeds.range().collect();
    let results = par::map(seeds, |seed| (seed, evaluate_stage(cfg, &dir, seed, metric)));
    let mut calls = CallRecord { forward_calls: 0, cache_hits: 0 };
    for (seed, r) in &results {
        if r.is_ok() {
            let c: CallRecord = read_json(&dir.calls(*seed))?;
            calls.forward_calls += c.forward_calls;
            calls.cache_hits += c.cache_hits;
        }
    }
    Aggregate { cfg, dir: &dir, model: backend_name(&cfg.backend), metric }.finish(results, Some(calls))
}

/// Simulate stage over all seeds.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Vec<SeedFailure>> {
    let dir = RunDir::new(&cfg.out_dir);
    prepare_run_dir(cfg, &dir)?;
    let seeds: Vec<u64> = cfg.seeds.range().collect();
    Ok(par::map(seeds, |seed| write_trajectory(cfg, &dir, seed).err()).into_iter().flatten().collect())
}

/// Extract stage over all seeds; returns per-seed call records.
pub fn run_extract(cfg: &ExperimentConfig) -> Result<Vec<(u64, SeedResult<CallRecord>)>> {
    let dir = RunDir::new(&cfg.out_dir);
    prepare_run_dir(cfg, &dir)?;
    let seeds: Vec<u64> = cfg.seeds.range().collect();
    Ok(par::map(seeds, |seed| {
        let r = simulate_seed(cfg, seed).and_then(|d| extract_stage(cfg, &dir, &d)).map(|(_, c)| c);
        (seed, r)
    }))
}

fn baseline_rows(cfg: &ExperimentConfig, kind: BaselineKind, seed: u64) -> SeedResult<Vec<LossRow>> {
    let data = simulate_seed(cfg, seed)?;
    let system = cfg.system.name().to_string();
    let to_rows = |curve: &LossCurve| -> Vec<LossRow> {
        curve
            .points()
            .map(|p| LossRow { system: system.clone(), seed, context_len: p.context_len, metric: p.metric, value: p.value })
            .collect()
    };
    let fail = |e: &dyn std::fmt::Display| SeedFailure::other(seed, e);
    match kind {
        BaselineKind::Unigram | BaselineKind::Bigram => {
            let System::MarkovChain { matrix } = &data.system else {
                return Err(fail(&"n-gram baselines need a Markov chain"));
            };
            let order = if kind == BaselineKind::Unigram { NgramOrder::Unigram } else { NgramOrder::Bigram };
            let metric = cfg.metric.unwrap_or(Metric::Bhattacharyya);
            let states = data.trajectory.states();
            let curve = baselines::ngram_loss_curve(&states, matrix, order, cfg.baselines.alpha, metric).map_err(|e| fail(&e))?;
            Ok(to_rows(&curve))
        }
        BaselineKind::Ar1Linear | BaselineKind::Ar1Net => {
            let ar1 = if kind == BaselineKind::Ar1Linear { Ar1Kind::Linear } else { Ar1Kind::Net };
            let map = data.rescale.expect("continuous series are rescaled");
            let values: Vec<f64> = data.trajectory.values.iter().map(|&x| map.apply(x)).collect();
            let grid = cfg.baseline_grid();
            let out = baselines::ar1_loss_curve(&values, &data.kernels, ar1, &cfg.baselines.net, &grid, seed)
                .map_err(|e| fail(&e))?;
            if out.curve.is_empty() {
                return Err(fail(&format!("every grid point failed: {:?}", out.failures)));
            }
            Ok(to_rows(&out.curve))
        }
    }
}

/// Reference learners over the configured seeds, one sub-directory each.
pub fn run_baselines(cfg: &ExperimentConfig) -> Result<Vec<(BaselineKind, Outcome)>> {
    let root = RunDir::new(&cfg.out_dir);
    prepare_run_dir(cfg, &root)?;
    let mut outcomes = Vec::new();
    for kind in cfg.baseline_kinds() {
        let dir = root.baseline(kind);
        let seeds: Vec<u64> = cfg.seeds.range().collect();
        let results = par::map(seeds, |seed| {
            let path = dir.seed_losses(seed);
            if path.exists() {
                return (seed, read_loss_csv(&path).map_err(|e| io_failure(seed, e)));
            }
            let r = baseline_rows(cfg, kind, seed)
                .and_then(|rows| write_loss_csv(&path, &rows).map(|_| rows).map_err(|e| io_failure(seed, e)));
            (seed, r)
        });
        let metric = results
            .iter()
            .find_map(|(_, r)| r.as_ref().ok().and_then(|rows| rows.first().map(|r| r.metric)))
            .unwrap_or(Metric::Bhattacharyya);
        let agg = Aggregate { cfg, dir: &dir, model: kind.as_str().to_string(), metric };
        outcomes.push((kind, agg.finish(results, None)?));
    }
    Ok(outcomes)
}

/// Seed-averaged fit of one `(system, metric)` group of a loss CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub system: String,
    pub metric: Metric,
    pub seeds: Vec<u64>,
    pub curve: LossCurve,
    pub fit: Option<PowerLawFit>,
    pub fit_error: Option<String>,
    pub plateau_onset: Option<usize>,
}

/// Averages and fits every group in a loss CSV.
pub fn fit_loss_csv(path: &Path, fit: &FitSpec) -> Result<Vec<GroupFit>> {
    let rows = read_loss_csv(path)?;
    let mut out = Vec::new();
    for ((system, metric), by_seed) in curves_by_seed(&rows) {
        let curves: Vec<LossCurve> = by_seed.values().cloned().collect();
        let curve = scaling::average_curves(&common_grid(&curves)).map_err(|e| RunnerError::Format(e.to_string()))?;
        let (f, fit_error, plateau_onset) = analyze(&curve, fit);
        out.push(GroupFit { system, metric, seeds: by_seed.keys().copied().collect(), curve, fit: f, fit_error, plateau_onset });
    }
    Ok(out)
}

/// Redraws a run directory: one plot per system overlaying the model and
/// every baseline found on disk; also writes `fits.json`.
pub fn report(dir: &Path, fit: &FitSpec) -> Result<Vec<PathBuf>> {
    let run = RunDir::new(dir);
    let mut sources: Vec<(String, PathBuf)> = Vec::new();
    if run.loss_csv().exists() {
        let model = std::fs::read_to_string(run.summary())
            .ok()
            .and_then(|t| serde_json::from_str::<Summary>(&t).ok())
            .map_or_else(|| "model".to_string(), |s| s.model);
        sources.push((model, run.loss_csv()));
    }
    for kind in [BaselineKind::Unigram, BaselineKind::Bigram, BaselineKind::Ar1Linear, BaselineKind::Ar1Net] {
        let p = run.baseline(kind).loss_csv();
        if p.exists() {
            sources.push((kind.as_str().to_string(), p));
        }
    }
    if sources.is_empty() {
        return Err(RunnerError::Config(format!("{} holds no loss.csv", dir.display())));
    }
    let mut groups: Vec<(String, GroupFit)> = Vec::new();
    for (label, path) in &sources {
        groups.extend(fit_loss_csv(path, fit)?.into_iter().map(|g| (label.clone(), g)));
    }
    let fits_path = dir.join("fits.json");
    let fits: Vec<serde_json::Value> = groups
        .iter()
        .map(|(label, g)| serde_json::json!({ "model": label, "group": g }))
        .collect();
    write_json(&fits_path, &fits)?;
    let mut written = vec![fits_path];
    let mut keys: Vec<(String, Metric)> = groups.iter().map(|(_, g)| (g.system.clone(), g.metric)).collect();
    keys.dedup();
    keys.sort();
    keys.dedup();
    for (system, metric) in keys {
        let series: Vec<PlotSeries> = groups
            .iter()
            .filter(|(_, g)| g.system == system && g.metric == metric)
            .map(|(label, g)| PlotSeries { label: label.clone(), curve: &g.curve, fit: g.fit.as_ref() })
            .collect();
        let path = dir.join(format!("report_{system}_{metric}.svg"));
        write_atomic(&path, render_svg(&format!("{system}: in-context loss"), metric, &series).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
