//! End-to-end acceptance run. Every criterion is executed in isolation and
//! reported on one line as PASS or FAIL; the test then checks the set of
//! failures against the known list below.

mod support;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use icl_core::baselines::{train_ar1_net, Ar1NetConfig, Mlp};
use icl_core::codec::{serialize_values, RescaleMap, TokenId, WINDOW};
use icl_core::hpdf::{extract, ExtractOptions, HierarchyPdf, RefinePolicy};
use icl_core::metrics::{self, Metric};
use icl_core::models::{CacheHandle, ModelBackend, OracleBackend, TokenDistribution};
use icl_core::runner::{self, ExperimentConfig};
use icl_core::scaling::{detect_plateau, fit_power_law, FitWindow};
use icl_core::metrics::LossCurve;
use icl_core::systems::{seeded_rng, stationary_distribution, MapParams, StochasticMatrix, TransitionKernel};

type Outcome = Result<String, String>;

/// Criteria that cannot hold as stated. Each one still runs its literal
/// check and prints FAIL; see the detail line for the reason.
const KNOWN_FAILURES: [u32; 1] = [3];

fn config(json: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(json).expect("valid config");
    c.out_dir = out.to_path_buf();
    c
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn oracle_round_trip() -> Outcome {
    let systems = [
        ("markov_chain", r#"{"kind": "markov_chain", "n_states": 4}"#),
        ("noisy_logistic", r#"{"kind": "logistic", "r": 3.9, "noise_sigma": 0.01}"#),
        ("brownian", r#"{"kind": "brownian"}"#),
        ("gbm", r#"{"kind": "gbm"}"#),
        ("lorenz", r#"{"kind": "lorenz"}"#),
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    for (name, system) in systems {
        let cfg = config(&format!(r#"{{"system": {system}, "steps": 1000, "seeds": {{"start": 0, "count": 1}}}}"#), dir.path());
        let start = Instant::now();
        let data = runner::simulate_seed(&cfg, 0).map_err(|f| f.message)?;
        let out = runner::extract_seed(&cfg, &data).map_err(|f| f.message)?;
        let elapsed = start.elapsed();
        ensure(out.pdfs.len() == 1000, || format!("{name}: {} PDFs", out.pdfs.len()))?;
        let depth = cfg.effective_digits();
        let (mut mass_err, mut loss_err) = (0.0f64, 0.0f64);
        for pdf in &out.pdfs {
            let s = pdf.state_index;
            let kernel = &data.kernels[s - 1];
            let truth = pdf.kernel_masses(kernel, data.window);
            for (b, t) in pdf.bins.iter().zip(&truth) {
                mass_err = mass_err.max((b.mass - t).abs());
            }
            // Coarser depths: aggregate both sides onto each prefix.
            for d in 1..depth {
                let shift = 10u64.pow((depth - d) as u32);
                let mut agg = std::collections::BTreeMap::<u64, (f64, f64)>::new();
                for (b, t) in pdf.bins.iter().zip(&truth) {
                    let e = agg.entry(b.code / shift).or_default();
                    e.0 += b.mass;
                    e.1 += t;
                }
                for (m, t) in agg.values() {
                    mass_err = mass_err.max((m - t).abs());
                }
            }
            let floor_pdf = HierarchyPdf::discretize(kernel, data.window, depth, s).map_err(|e| e.to_string())?;
            let x = data.truths[s - 1];
            let (loss, floor) = if kernel.is_stochastic() {
                (
                    metrics::bhattacharyya(kernel, pdf, data.window).map_err(|e| e.to_string())?,
                    metrics::bhattacharyya(kernel, &floor_pdf, data.window).map_err(|e| e.to_string())?,
                )
            } else {
                (
                    metrics::bhattacharyya_dirac(x, pdf, depth).map_err(|e| e.to_string())?,
                    metrics::bhattacharyya_dirac(x, &floor_pdf, depth).map_err(|e| e.to_string())?,
                )
            };
            loss_err = loss_err.max((loss - floor).abs());
        }
        ensure(mass_err <= 1e-12, || format!("{name}: max bin mass error {mass_err:e}"))?;
        ensure(loss_err <= 1e-9, || format!("{name}: loss differs from the floor by {loss_err:e}"))?;
        ensure(elapsed < Duration::from_secs(60), || format!("{name}: {elapsed:?} for 1000 states"))?;
        details.push(format!("{name} {:.2}s", elapsed.as_secs_f64()));
    }
    Ok(format!("masses ≤ 1e-12, loss = floor ± 1e-9; {}", details.join(", ")))
}

// ---------------------------------------------------------------- 2

/// Wraps a backend and records every (prefix, token) it is asked to process.
struct Auditing<B> {
    inner: B,
    seen: Mutex<HashSet<(usize, u64)>>,
    repeats: Mutex<u64>,
}

fn extend(hash: u64, token: TokenId) -> u64 {
    let mut h = DefaultHasher::new();
    (hash, token).hash(&mut h);
    h.finish()
}

impl<B: ModelBackend> ModelBackend for Auditing<B> {
    type State = (B::State, u64);

    fn root(&self) -> icl_core::models::Result<CacheHandle<Self::State>> {
        let r = self.inner.root()?;
        Ok(CacheHandle { prefix_len: r.prefix_len, state: (r.state, 0) })
    }

    fn next_distribution(
        &self,
        cache: CacheHandle<Self::State>,
        token: TokenId,
    ) -> icl_core::models::Result<(TokenDistribution, CacheHandle<Self::State>)> {
        let (inner, hash) = cache.state;
        let key = (cache.prefix_len + 1, extend(hash, token));
        if !self.seen.lock().unwrap().insert(key) {
            *self.repeats.lock().unwrap() += 1;
        }
        let (dist, next) = self.inner.next_distribution(CacheHandle { prefix_len: cache.prefix_len, state: inner }, token)?;
        Ok((dist, CacheHandle { prefix_len: next.prefix_len, state: (next.state, key.1) }))
    }

    fn fork(&self, cache: &CacheHandle<Self::State>) -> icl_core::models::Result<CacheHandle<Self::State>> {
        let inner = self.inner.fork(&CacheHandle { prefix_len: cache.prefix_len, state: cache.state.0.clone() })?;
        Ok(CacheHandle { prefix_len: inner.prefix_len, state: (inner.state, cache.state.1) })
    }

    fn call_count(&self) -> u64 {
        self.inner.call_count()
    }
}

fn call_accounting() -> Outcome {
    let single = {
        let k = TransitionKernel::Gaussian { mean: 5.0, std: 0.4 };
        let seq = serialize_values(&[4.0, 5.07], &RescaleMap::identity(), 3).map_err(|e| e.to_string())?;
        let b = OracleBackend::for_series(vec![k], 3).map_err(|e| e.to_string())?;
        extract(&b, &seq, RefinePolicy::full(3), &ExtractOptions::default()).map_err(|e| e.to_string())?.forward_calls
            - seq.len() as u64
    };
    ensure(single == 108, || format!("one n=3 state: {single} extra calls"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config(r#"{"system": {"kind": "brownian"}, "steps": 1000, "seeds": {"start": 0, "count": 1}}"#, dir.path());
    let data = runner::simulate_seed(&cfg, 0).map_err(|f| f.message)?;
    let oracle = OracleBackend::for_series(data.kernels.clone(), 3).map_err(|e| e.to_string())?;
    let audit = Auditing { inner: oracle, seen: Mutex::new(HashSet::new()), repeats: Mutex::new(0) };
    let out = extract(&audit, &data.tokens, RefinePolicy::full(3), &ExtractOptions::default()).map_err(|e| e.to_string())?;
    let expected = 1000 * 108 + cfg.sequence_len() as u64;
    ensure(cfg.sequence_len() == data.tokens.len(), || "sequence length mismatch".into())?;
    ensure(out.forward_calls == expected, || format!("sweep: {} calls, expected {expected}", out.forward_calls))?;
    ensure(audit.call_count() == expected, || format!("backend counted {} calls", audit.call_count()))?;
    let repeats = *audit.repeats.lock().unwrap();
    ensure(repeats == 0, || format!("{repeats} cached prefixes reprocessed"))?;
    Ok(format!("108 per state; sweep {} = 1000·108 + {}; 0 prefixes reprocessed", out.forward_calls, data.tokens.len()))
}

// ---------------------------------------------------------------- 3

fn closed_form_metrics() -> Outcome {
    // N(0,1) and N(1,1) mapped by y = 5 + x/2 into the codec window; both
    // distances are invariant under the map.
    let p = TransitionKernel::Gaussian { mean: 0.0, std: 1.0 }.affine(0.5, 5.0);
    let q = TransitionKernel::Gaussian { mean: 1.0, std: 1.0 }.affine(0.5, 5.0);
    let q_pdf = HierarchyPdf::discretize(&q, WINDOW, 3, 0).map_err(|e| e.to_string())?;
    let db = metrics::bhattacharyya(&p, &q_pdf, WINDOW).map_err(|e| e.to_string())?;
    let kl = metrics::kl_divergence(&p, &q_pdf, WINDOW);
    ensure((db - 0.125).abs() <= 1e-3, || format!("D_B = {db}"))?;
    ensure((kl - 0.5).abs() <= 5e-3, || format!("KL = {kl}"))?;

    let n = 3;
    let mut rng = seeded_rng(2024, 0);
    let (mut literal, mut corrected) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let mean = rng.random_range(3.0..7.0);
        let std = rng.random_range(0.2..1.5);
        let kernel = if i % 2 == 0 {
            TransitionKernel::Gaussian { mean, std }
        } else {
            TransitionKernel::Uniform { lo: mean - 1.5 * std, hi: mean + 1.5 * std }
        };
        let pdf = HierarchyPdf::discretize(&kernel, WINDOW, 1 + i % 3, i).map_err(|e| e.to_string())?;
        let x = mean + rng.random_range(-std..std);
        let db = metrics::bhattacharyya_dirac(x, &pdf, n).map_err(|e| e.to_string())?;
        let nll = metrics::nll(x, &pdf, n).map_err(|e| e.to_string())?;
        literal = literal.max((db - (0.5 * nll.value + nll.digit_constant)).abs());
        corrected = corrected.max((db - (0.5 * nll.value + metrics::dirac_nll_constant(n))).abs());
    }
    let head = format!("D_B = {db:.5}, KL = {kl:.5}");
    ensure(corrected <= 1e-9, || format!("{head}; ½·nll + ((n−1)/2)·ln10 off by {corrected:e}"))?;
    ensure(literal <= 1e-9, || {
        format!(
            "{head}; D_B = ½·nll + n·ln10 off by {literal:.4} on every sample (the constant is ((n−1)/2)·ln10 = {:.4}, \
             which holds to {corrected:.1e})",
            metrics::dirac_nll_constant(n)
        )
    })?;
    Ok(format!("{head}; D_B→NLL identity to {literal:.1e}"))
}

// ---------------------------------------------------------------- 4

fn kurtosis_targets() -> Outcome {
    let start = Instant::now();
    let cases: Vec<(TransitionKernel, f64, f64)> = vec![
        (TransitionKernel::Gaussian { mean: 5.0, std: 0.5 }, 3.0, 0.1),
        (TransitionKernel::Gaussian { mean: 4.3, std: 0.8 }, 3.0, 0.1),
        (TransitionKernel::Gaussian { mean: 6.1, std: 0.3 }, 3.0, 0.1),
        (TransitionKernel::Uniform { lo: 2.0, hi: 8.0 }, 1.8, 0.02),
        (TransitionKernel::Uniform { lo: 3.15, hi: 6.72 }, 1.8, 0.02),
        (TransitionKernel::Uniform { lo: 1.5, hi: 8.5 }, 1.8, 0.02),
    ];
    let values: Vec<f64> = std::iter::once(5.0).chain(cases.iter().map(|(k, _, _)| k.mean())).collect();
    let kernels = cases.iter().map(|(k, _, _)| k.clone()).collect();
    let b = OracleBackend::for_series(kernels, 3).map_err(|e| e.to_string())?;
    let seq = serialize_values(&values, &RescaleMap::identity(), 3).map_err(|e| e.to_string())?;
    let out = extract(&b, &seq, RefinePolicy::full(3), &ExtractOptions::default()).map_err(|e| e.to_string())?;
    let mut shown = Vec::new();
    for ((_, target, tol), pdf) in cases.iter().zip(&out.pdfs) {
        let k = pdf.moments().map_err(|e| e.to_string())?.kurtosis;
        ensure((k - target).abs() <= *tol, || format!("kurtosis {k:.4}, target {target} ± {tol}"))?;
        shown.push(format!("{k:.3}"));
    }
    ensure(start.elapsed() < Duration::from_secs(10), || format!("took {:?}", start.elapsed()))?;
    Ok(format!("kurtosis {}", shown.join(", ")))
}

// ---------------------------------------------------------------- 5

fn bigram_consistency() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = config(
        r#"{"system": {"kind": "markov_chain", "n_states": 4}, "backend": {"kind": "ngram", "order": 2},
            "steps": 1000, "seeds": {"start": 0, "count": 10}}"#,
        dir.path(),
    );
    let out = runner::run_experiment(&cfg).map_err(|e| e.to_string())?;
    let s = out.summary.ok_or("no summary")?;
    ensure(s.seeds.len() == 10, || format!("{} seeds completed", s.seeds.len()))?;
    ensure(s.metric == Metric::Bhattacharyya, || format!("metric {}", s.metric))?;
    let (l10, l1000) = (s.curve.value_at(10).ok_or("no t=10")?, s.curve.value_at(1000).ok_or("no t=1000")?);
    ensure(l1000 * 10.0 <= l10, || format!("L(10) = {l10:.4}, L(1000) = {l1000:.5}: ratio {:.1}", l10 / l1000))?;
    let fit = fit_power_law(&s.curve, FitWindow { min: 10, max: None }).map_err(|e| e.to_string())?;
    ensure(fit.alpha < 0.0 && fit.r_squared >= 0.8, || format!("α = {:.3}, r² = {:.3}", fit.alpha, fit.r_squared))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "L(10)/L(1000) = {:.1}, α = {:.3}, r² = {:.3}, {:.1}s",
        l10 / l1000,
        fit.alpha,
        fit.r_squared,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 6

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn nn_variance_recovery() -> Outcome {
    let start = Instant::now();
    // Gradient check first: it is cheap and everything else relies on it.
    let mut rng = seeded_rng(11, 0);
    let x = Array2::from_shape_fn((9, 1), |_| rng.sample::<f64, _>(StandardNormal));
    let y = Array1::from_shape_fn(9, |_| rng.sample::<f64, _>(StandardNormal));
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let mut mlp = Mlp::init(&[1, 8, 6, 4, 2], seed);
        let (_, grads) = mlp.nll_and_grad(&x, &y, 1e-3);
        let analytic = grads.flatten();
        let base = mlp.flatten();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            mlp.set_flat(&p);
            let up = mlp.nll(&x, &y, 1e-3);
            p[i] -= 2.0 * h;
            mlp.set_flat(&p);
            let down = mlp.nll(&x, &y, 1e-3);
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic[i].abs().max(numeric.abs());
            if scale > 1e-7 {
                worst = worst.max((analytic[i] - numeric).abs() / scale);
            }
        }
        mlp.set_flat(&base);
    }
    ensure(worst <= 1e-5, || format!("gradient relative error {worst:e}"))?;

    let params = MapParams { r: 3.9, noise_sigma: 0.01, x0: 0.3 };
    let values = icl_core::systems::simulate_map(&params, 1000, 0).map_err(|e| e.to_string())?.values;
    let (pred, report) = train_ar1_net(&values, &Ar1NetConfig::default(), 0).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..=90).map(|i| 0.05 + 0.01 * i as f64).collect();
    let learned: Vec<f64> = grid.iter().map(|&x| pred.predict(x).1).collect();
    let truth: Vec<f64> = grid.iter().map(|&x| (params.noise_sigma * params.df(x)).abs()).collect();
    let r = pearson(&learned, &truth);
    ensure(r >= 0.8, || format!("corr(σθ, |σf'|) = {r:.3} after {} epochs", report.epochs))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("gradient rel. error {worst:.1e}; corr = {r:.3} ({} epochs, {:.1}s)", report.epochs, elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 7

fn log_grid(points: usize, decades: f64) -> Vec<usize> {
    let mut t: Vec<usize> =
        (0..points).map(|i| 10f64.powf(decades * i as f64 / (points - 1) as f64).round() as usize).collect();
    t.dedup();
    t
}

fn power_law_fitter() -> Outcome {
    let t = log_grid(30, 3.0);
    let clean: Vec<f64> = t.iter().map(|&t| 2.0 * (t as f64).powf(-0.5)).collect();
    let fit = fit_power_law(&LossCurve::new(Metric::Bhattacharyya, t.clone(), clean).map_err(|e| e.to_string())?, FitWindow::all())
        .map_err(|e| e.to_string())?;
    ensure((fit.alpha + 0.5).abs() <= 1e-10, || format!("clean α = {}", fit.alpha))?;

    let t30: Vec<usize> = (1..=30).map(|i| i * 10).collect();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut rng = seeded_rng(seed, 0);
        let noisy: Vec<f64> = t30
            .iter()
            .map(|&t| (t as f64).powf(-0.5) * (1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let f = fit_power_law(&LossCurve::new(Metric::Bhattacharyya, t30.clone(), noisy).map_err(|e| e.to_string())?, FitWindow::all())
            .map_err(|e| e.to_string())?;
        worst = worst.max((f.alpha + 0.5).abs());
    }
    ensure(worst <= 0.05, || format!("noisy α off by {worst:.4}"))?;

    let grid = log_grid(41, 4.0);
    let knee: Vec<f64> = grid.iter().map(|&t| (1.0 / t as f64).max(0.01)).collect();
    let onset = detect_plateau(&LossCurve::new(Metric::Bhattacharyya, grid.clone(), knee).map_err(|e| e.to_string())?, 0.05);
    let lo = 10f64.powf(1.5).floor() as usize;
    let hi = 10f64.powf(2.5).ceil() as usize;
    ensure(onset.is_some_and(|t| (lo..=hi).contains(&t)), || format!("plateau onset {onset:?}, expected {lo}..={hi}"))?;
    let pure: Vec<f64> = grid.iter().map(|&t| (t as f64).powf(-0.7)).collect();
    let none = detect_plateau(&LossCurve::new(Metric::Bhattacharyya, grid, pure).map_err(|e| e.to_string())?, 0.05);
    ensure(none.is_none(), || format!("pure power law flagged at {none:?}"))?;
    Ok(format!("clean α exact, noisy |Δα| ≤ {worst:.4} over 20 draws, plateau at t = {}", onset.unwrap_or(0)))
}

// ---------------------------------------------------------------- 8

fn stationary_distribution_checks() -> Outcome {
    let two = StochasticMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).map_err(|e| e.to_string())?;
    let pi = stationary_distribution(&two).map_err(|e| e.to_string())?;
    ensure((pi[0] - 2.0 / 3.0).abs() <= 1e-10 && (pi[1] - 1.0 / 3.0).abs() <= 1e-10, || format!("π = {pi:?}"))?;
    let u = stationary_distribution(&StochasticMatrix::uniform(5).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(u.iter().all(|p| (p - 0.2).abs() <= 1e-12), || format!("uniform π = {u:?}"))?;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let m = StochasticMatrix::sample(2 + (seed as usize % 9), seed).map_err(|e| e.to_string())?;
        let pi = stationary_distribution(&m).map_err(|e| e.to_string())?;
        let residual = m.step(&pi).iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(residual);
    }
    ensure(worst <= 1e-10, || format!("invariance residual {worst:e}"))?;
    Ok(format!("π = ({:.12}, {:.12}); max residual {worst:.1e} on 100 matrices", pi[0], pi[1]))
}

// ---------------------------------------------------------------- 9

fn reproducibility() -> Outcome {
    let experiments = [
        r#"{"system": {"kind": "markov_chain", "n_states": 4}, "backend": {"kind": "ngram"}, "steps": 300, "seeds": {"start": 0, "count": 3}}"#,
        r#"{"system": {"kind": "logistic", "noise_sigma": 0.01}, "steps": 80, "seeds": {"start": 5, "count": 2}}"#,
        r#"{"system": {"kind": "gbm"}, "steps": 80, "seeds": {"start": 0, "count": 2}, "refine": {"target_depth": 3, "top_k": 2}}"#,
    ];
    let mut compared = 0;
    for json in experiments {
        let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
        for d in [&a, &b] {
            let out = runner::run_experiment(&config(json, d.path())).map_err(|e| e.to_string())?;
            ensure(out.exit_code() == 0, || format!("exit code {}", out.exit_code()))?;
        }
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"));
        let mut files = vec!["loss.csv".to_string()];
        for entry in std::fs::read_dir(a.path().join("seeds")).map_err(|e| e.to_string())? {
            files.push(format!("seeds/{}", entry.map_err(|e| e.to_string())?.file_name().to_string_lossy()));
        }
        for f in &files {
            let (x, y) = (read(a.path(), f)?, read(b.path(), f)?);
            ensure(!x.is_empty() && x == y, || format!("{f} differs between runs"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} CSV files byte-identical across repeated runs"))
}

// ---------------------------------------------------------------- 10

#[cfg(feature = "remote")]
fn remote_conformance() -> Outcome {
    let mut done = Vec::new();
    for (name, check) in support::conformance::CHECKS {
        check().map_err(|e| format!("{name}: {e}"))?;
        done.push(name);
    }
    Ok(format!("stub server passes: {}", done.join(", ")))
}

#[cfg(not(feature = "remote"))]
fn remote_conformance() -> Outcome {
    Err("built without the `remote` feature".into())
}

// ----------------------------------------------------------------

fn run(criterion: fn() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(criterion)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

#[test]
fn acceptance() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "oracle round trip", oracle_round_trip),
        (2, "call accounting", call_accounting),
        (3, "closed-form metrics", closed_form_metrics),
        (4, "kurtosis targets", kurtosis_targets),
        (5, "bigram consistency", bigram_consistency),
        (6, "NN-AR1 variance recovery", nn_variance_recovery),
        (7, "power-law fitter", power_law_fitter),
        (8, "stationary distribution", stationary_distribution_checks),
        (9, "reproducibility", reproducibility),
        (10, "remote protocol conformance", remote_conformance),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        let start = Instant::now();
        let result = run(f);
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id} ({name}): PASS — {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {id} ({name}): FAIL — {detail} [{secs:.1}s]");
                failed.push(id);
            }
        }
    }
    assert_eq!(failed, KNOWN_FAILURES, "unexpected set of failing criteria");
}
