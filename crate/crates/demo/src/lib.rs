//! Browser front end for the harness: extract a Hierarchy-PDF from an oracle
//! model, simulate any of the built-in systems, and watch a bigram learner's
//! in-context loss decay. Every export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use icl_core::baselines::bigram_loss_curve;
use icl_core::codec::{serialize_values, RescaleMap, WINDOW};
use icl_core::hpdf::{extract, ExtractOptions, HierarchyPdf, RefinePolicy};
use icl_core::metrics::{self, Metric};
use icl_core::models::{ModelBackend, OracleBackend};
use icl_core::runner::{render_svg, PlotSeries, SystemSpec};
use icl_core::scaling::{average_curves, detect_plateau, fit_power_law, FitWindow, DEFAULT_PLATEAU_THRESHOLD};
use icl_core::systems::{System, TransitionKernel};

const MAX_STEPS: usize = 5000;
const MAX_SEEDS: u64 = 20;

#[derive(Serialize)]
struct PdfView {
    bins: Vec<[f64; 4]>,
    forward_calls: u64,
    bhattacharyya: f64,
    kl: f64,
    mean: f64,
    kurtosis: Option<f64>,
}

/// Oracle extraction of one state whose kernel is a Gaussian (`spread` is
/// the std) or a uniform (`spread` is the half-width), centred at `center`
/// in the `[1.5, 8.5]` window. `top_k == 0` refines every bin.
pub fn extract_json(kind: &str, center: f64, spread: f64, depth: usize, top_k: usize) -> Result<String, String> {
    let kernel = match kind {
        "gaussian" => TransitionKernel::Gaussian { mean: center, std: spread },
        "uniform" => TransitionKernel::Uniform { lo: center - spread, hi: center + spread },
        other => return Err(format!("unknown kernel {other:?}")),
    };
    if !(spread > 0.0) || !(WINDOW.0..=WINDOW.1).contains(&center) {
        return Err(format!("need spread > 0 and center in [{}, {}]", WINDOW.0, WINDOW.1));
    }
    let policy = if top_k == 0 { RefinePolicy::full(depth) } else { RefinePolicy::top_k(depth, top_k) };
    let seq = serialize_values(&[5.0, center], &RescaleMap::identity(), 3).map_err(|e| e.to_string())?;
    let oracle = OracleBackend::for_series(vec![kernel.clone()], 3).map_err(|e| e.to_string())?;
    let pdf: HierarchyPdf = extract(&oracle, &seq, policy, &ExtractOptions::default())
        .map_err(|e| e.to_string())?
        .pdfs
        .remove(0);
    let view = PdfView {
        bins: pdf.bins.iter().map(|b| [b.lo(), b.hi(), b.mass, b.depth as f64]).collect(),
        forward_calls: oracle.call_count(),
        bhattacharyya: metrics::bhattacharyya(&kernel, &pdf, WINDOW).map_err(|e| e.to_string())?,
        kl: metrics::kl_divergence(&kernel, &pdf, WINDOW),
        mean: pdf.mean(),
        kurtosis: pdf.moments().ok().map(|m| m.kurtosis),
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Serialize)]
struct TrajectoryView {
    system: String,
    values: Vec<f64>,
}

/// Simulates `steps` transitions of a system given as a JSON spec, e.g.
/// `{"kind": "lorenz"}` or `{"kind": "logistic", "noise_sigma": 0.01}`.
pub fn simulate_json(spec: &str, steps: usize, seed: u64) -> Result<String, String> {
    let spec: SystemSpec = serde_json::from_str(spec).map_err(|e| format!("system spec: {e}"))?;
    let steps = steps.clamp(1, MAX_STEPS);
    let system = spec.instantiate(seed).map_err(|e| e.to_string())?;
    let traj = system.simulate(steps, seed).map_err(|e| e.to_string())?;
    let view = TrajectoryView { system: traj.system.as_str().to_string(), values: traj.values };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Serialize)]
struct CurveView {
    context_lens: Vec<usize>,
    mean: Vec<f64>,
    stderr: Vec<f64>,
    alpha: Option<f64>,
    r_squared: Option<f64>,
    plateau_onset: Option<usize>,
    svg: String,
}

/// Seed-averaged Bhattacharyya loss of a smoothed bigram learner on random
/// `n_states` chains, with its power-law fit and a log-log plot.
pub fn bigram_curve_json(n_states: usize, steps: usize, seeds: u64, alpha: f64) -> Result<String, String> {
    let steps = steps.clamp(2, MAX_STEPS);
    let seeds = seeds.clamp(1, MAX_SEEDS);
    let spec = SystemSpec::MarkovChain { n_states, matrix: None, matrix_seed: None };
    let mut curves = Vec::new();
    for seed in 0..seeds {
        let System::MarkovChain { matrix } = spec.instantiate(seed).map_err(|e| e.to_string())? else {
            unreachable!("chain spec instantiates a chain")
        };
        let states = System::MarkovChain { matrix: matrix.clone() }.simulate(steps, seed).map_err(|e| e.to_string())?.states();
        curves.push(bigram_loss_curve(&states, &matrix, alpha, Metric::Bhattacharyya).map_err(|e| e.to_string())?);
    }
    let avg = average_curves(&curves).map_err(|e| e.to_string())?;
    let fit = fit_power_law(&avg, FitWindow::default()).ok();
    let series = [PlotSeries { label: "bigram".into(), curve: &avg, fit: fit.as_ref() }];
    let view = CurveView {
        context_lens: avg.context_lens.clone(),
        mean: avg.values.clone(),
        stderr: avg.std_err.clone().unwrap_or_default(),
        alpha: fit.as_ref().map(|f| f.alpha),
        r_squared: fit.as_ref().map(|f| f.r_squared),
        plateau_onset: detect_plateau(&avg, DEFAULT_PLATEAU_THRESHOLD),
        svg: render_svg(&format!("bigram on {n_states}-state chains, {seeds} seeds"), Metric::Bhattacharyya, &series),
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

// Seeds cross the boundary as u32: a u64 would surface in JS as a BigInt.

#[wasm_bindgen]
pub fn extract_pdf(kind: &str, center: f64, spread: f64, depth: usize, top_k: usize) -> Result<String, JsValue> {
    extract_json(kind, center, spread, depth, top_k).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(spec: &str, steps: usize, seed: u32) -> Result<String, JsValue> {
    simulate_json(spec, steps, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bigram_curve(n_states: usize, steps: usize, seeds: u32, alpha: f64) -> Result<String, JsValue> {
    bigram_curve_json(n_states, steps, seeds as u64, alpha).map_err(|e| JsValue::from_str(&e))
}
