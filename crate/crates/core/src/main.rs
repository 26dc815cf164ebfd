use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use icl_core::runner::{
    self, BackendSpec, ExperimentConfig, FitSpec, Outcome, RunnerError, SeedFailure, SeedSpec,
};

/// In-context learning harness: simulate dynamical systems, extract
/// Hierarchy-PDFs from a next-token model and score them against the true
/// transition rules.
#[derive(Debug, Parser)]
#[command(name = "icl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds to run, half-open: `0..10`.
    #[arg(long, global = true, value_name = "A..B")]
    seed_range: Option<String>,
    /// Overrides the config's model backend. `remote` reads the server URL
    /// from ICL_REMOTE_URL (or the config).
    #[arg(long, global = true)]
    backend: Option<Backend>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate and serialize every seed's trajectory.
    Simulate,
    /// Extract Hierarchy-PDFs for every state of every seed.
    Extract,
    /// Full sweep: extract, score, average, fit and plot.
    Evaluate,
    /// Loss curves of the reference learners.
    Baseline,
    /// Seed-average a loss CSV and fit the in-context power law.
    FitScaling {
        /// Loss CSV (defaults to `<out>/loss.csv`).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = icl_core::scaling::DEFAULT_FIT_MIN)]
        fit_min: usize,
        #[arg(long)]
        fit_max: Option<usize>,
        #[arg(long, default_value_t = icl_core::scaling::DEFAULT_PLATEAU_THRESHOLD)]
        plateau_threshold: f64,
    },
    /// Redraw plots and fits of a run directory, overlaying baselines.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Oracle,
    Ngram,
    Remote,
}

const PARTIAL: u8 = 4;

fn load(cli: &Cli) -> Result<ExperimentConfig, RunnerError> {
    let path = cli.config.as_ref().ok_or_else(|| RunnerError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(range) = &cli.seed_range {
        cfg.seeds = SeedSpec::parse(range)?;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    match (cli.backend, &cfg.backend) {
        (None, _) | (Some(Backend::Ngram), BackendSpec::Ngram { .. }) | (Some(Backend::Remote), BackendSpec::Remote { .. }) => {}
        (Some(Backend::Oracle), _) => cfg.backend = BackendSpec::Oracle {},
        (Some(Backend::Ngram), _) => cfg.backend = BackendSpec::Ngram { order: 2, alpha: icl_core::models::ngram::DEFAULT_ALPHA },
        (Some(Backend::Remote), _) => cfg.backend = BackendSpec::Remote { url: None, vocab: None, context_limit: None },
    }
    cfg.validate()?;
    if matches!(cfg.backend, BackendSpec::Remote { .. }) && cfg.remote_url().is_none() {
        return Err(RunnerError::Config(format!("remote backend needs a URL: set {} or backend.url", runner::REMOTE_URL_ENV)));
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, RunnerError> {
    if let Some(out) = &cli.out {
        return Ok(out.clone());
    }
    match &cli.config {
        Some(_) => Ok(load(cli)?.out_dir),
        None => Err(RunnerError::Config("--out or --config is required".into())),
    }
}

fn report_failures(failures: &[SeedFailure]) {
    for f in failures {
        eprintln!("seed {} failed{}: {}", f.seed, if f.backend { " (backend)" } else { "" }, f.message);
    }
}

fn report_outcome(label: &str, out: &Outcome) -> u8 {
    report_failures(&out.failures);
    match &out.summary {
        Some(s) => {
            let fit = s.fit.as_ref().map_or_else(
                || format!("no fit ({})", s.fit_error.as_deref().unwrap_or("-")),
                |f| format!("alpha = {:.4}, r2 = {:.3}", f.alpha, f.r_squared),
            );
            let plateau = s.plateau_onset.map_or("none".to_string(), |t| t.to_string());
            println!("{label}: {} seeds, {} {fit}, plateau onset {plateau}", s.seeds.len(), s.metric);
        }
        None => eprintln!("{label}: no seed completed"),
    }
    out.exit_code() as u8
}

fn run(cli: &Cli) -> Result<u8, RunnerError> {
    match &cli.command {
        Command::Simulate => {
            let cfg = load(cli)?;
            let failures = runner::run_simulate(&cfg)?;
            report_failures(&failures);
            println!("wrote {} trajectories to {}", cfg.seeds.count as usize - failures.len(), cfg.out_dir.display());
            Ok(if failures.is_empty() { 0 } else { PARTIAL })
        }
        Command::Extract => {
            let cfg = load(cli)?;
            let results = runner::run_extract(&cfg)?;
            let (mut ok, mut failures) = (0, Vec::new());
            for (seed, r) in results {
                match r {
                    Ok(c) => {
                        ok += 1;
                        println!("seed {seed}: {} forward calls, {} cache hits", c.forward_calls, c.cache_hits);
                    }
                    Err(f) => failures.push(f),
                }
            }
            report_failures(&failures);
            Ok(match (ok, failures.is_empty()) {
                (_, true) => 0,
                (0, false) if failures.iter().any(|f| f.backend) => 3,
                _ => PARTIAL,
            })
        }
        Command::Evaluate => {
            let cfg = load(cli)?;
            let out = runner::run_experiment(&cfg)?;
            Ok(report_outcome(cfg.system.name(), &out))
        }
        Command::Baseline => {
            let cfg = load(cli)?;
            let mut code = 0;
            for (kind, out) in runner::run_baselines(&cfg)? {
                code = code.max(report_outcome(kind.as_str(), &out));
            }
            Ok(code)
        }
        Command::FitScaling { input, fit_min, fit_max, plateau_threshold } => {
            let fit = FitSpec { min_context: *fit_min, max_context: *fit_max, plateau_threshold: *plateau_threshold };
            let (input, dest) = match input {
                Some(p) => (p.clone(), cli.out.clone()),
                None => {
                    let dir = out_dir(cli)?;
                    (dir.join("loss.csv"), Some(dir))
                }
            };
            let groups = runner::fit_loss_csv(&input, &fit)?;
            let text = serde_json::to_string_pretty(&groups).expect("fits serialize");
            match dest {
                Some(dir) => {
                    let path = dir.join("fits.json");
                    runner::write_atomic(&path, format!("{text}\n").as_bytes())?;
                    println!("wrote {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(0)
        }
        Command::Report => {
            let dir = out_dir(cli)?;
            let fit = match &cli.config {
                Some(_) => load(cli)?.fit,
                None => FitSpec::default(),
            };
            for p in runner::report(&dir, &fit)? {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
