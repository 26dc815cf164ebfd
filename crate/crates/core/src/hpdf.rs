//! Hierarchy-PDF: multi-resolution densities read off a next-token model.
//!
//! Every digit prefix names a bin; the model's conditional distribution of
//! the next digit splits that bin into ten children. One forward sweep over
//! the serialized series (the *main pass*) yields, for every state, the chain
//! of bins along its realized digits. Refinement then branches off that
//! chain, forking cached prefixes so that no context token is processed
//! twice.
//!
//! Bins tile `[0, 10)` at depth 1: the digit-0 and digit-9 bins lie outside
//! the rescaled range `[1.5, 8.5]` and carry zero mass for in-range kernels,
//! but are kept so every PDF has the same shape.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{bin_bounds, TokenId, TokenSeq, MAX_DIGITS};
use crate::models::{CacheHandle, ModelBackend, ModelError, TokenDistribution};
use crate::par;
use crate::systems::TransitionKernel;

/// Tolerance on total mass and on child/parent mass conservation.
pub const MASS_TOLERANCE: f64 = 1e-9;
/// Variance below which kurtosis is undefined.
pub const MIN_VARIANCE: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpdfError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("{0} is outside the tiled range [0, 10)")]
    Domain(f64),
    #[error("variance {variance:e} too small for kurtosis (mean {mean})")]
    DegenerateVariance { mean: f64, variance: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("malformed record: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, HpdfError>;

/// Bin `[code, code + 1) · 10^(1 - depth)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub code: u64,
    pub depth: u8,
    pub mass: f64,
}

impl Bin {
    pub fn bounds(&self) -> (f64, f64) {
        bin_bounds(self.code, self.depth as usize)
    }

    pub fn lo(&self) -> f64 {
        self.bounds().0
    }

    pub fn hi(&self) -> f64 {
        self.bounds().1
    }

    pub fn width(&self) -> f64 {
        10f64.powi(1 - self.depth as i32)
    }

    pub fn center(&self) -> f64 {
        let (lo, hi) = self.bounds();
        0.5 * (lo + hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.bounds();
        lo <= x && x < hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub fourth: f64,
    pub kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyPdf {
    pub state_index: usize,
    /// Sorted by interval; disjoint; tile `[0, 10)`.
    pub bins: Vec<Bin>,
}

impl HierarchyPdf {
    /// Checks tiling and normalization.
    pub fn new(state_index: usize, bins: Vec<Bin>) -> Result<Self> {
        let pdf = Self { state_index, bins };
        pdf.validate()?;
        Ok(pdf)
    }

    pub fn validate(&self) -> Result<()> {
        let max_depth = self.max_depth();
        if max_depth == 0 || max_depth > MAX_DIGITS {
            return Err(HpdfError::Consistency(format!("depth {max_depth} out of range")));
        }
        // Integer positions in units of the finest bin.
        let unit = |depth: u8| 10u64.pow((max_depth - depth as usize) as u32);
        let mut cursor = 0u64;
        for b in &self.bins {
            if b.depth == 0 || !(b.mass >= 0.0 && b.mass.is_finite()) {
                return Err(HpdfError::Consistency(format!("invalid bin {b:?}")));
            }
            if b.code * unit(b.depth) != cursor {
                return Err(HpdfError::Consistency(format!("bin {b:?} does not continue the tiling at {cursor}")));
            }
            cursor = (b.code + 1) * unit(b.depth);
        }
        if cursor != 10 * unit(1) {
            return Err(HpdfError::Consistency("bins do not reach 10".into()));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(HpdfError::Consistency(format!("total mass {total}")));
        }
        Ok(())
    }

    /// All bins at one depth with masses from `kernel` (rescaled units,
    /// conditioned on `window`) via CDF differences.
    pub fn discretize(kernel: &TransitionKernel, window: (f64, f64), depth: usize, state_index: usize) -> Result<Self> {
        if !(1..=MAX_DIGITS).contains(&depth) {
            return Err(HpdfError::Parameter(format!("depth {depth} out of range")));
        }
        let bins = (0..10u64.pow(depth as u32))
            .map(|code| {
                let (lo, hi) = bin_bounds(code, depth);
                Bin { code, depth: depth as u8, mass: kernel.mass_within(lo, hi, window) }
            })
            .collect();
        Ok(Self { state_index, bins })
    }

    /// Same partition as `self`, masses from `kernel`.
    pub fn kernel_masses(&self, kernel: &TransitionKernel, window: (f64, f64)) -> Vec<f64> {
        self.bins
            .iter()
            .map(|b| {
                let (lo, hi) = b.bounds();
                kernel.mass_within(lo, hi, window)
            })
            .collect()
    }

    pub fn max_depth(&self) -> usize {
        self.bins.iter().map(|b| b.depth as usize).max().unwrap_or(0)
    }

    pub fn total_mass(&self) -> f64 {
        self.bins.iter().map(|b| b.mass).sum()
    }

    pub fn bin_containing(&self, x: f64) -> Result<&Bin> {
        if !(0.0..10.0).contains(&x) {
            return Err(HpdfError::Domain(x));
        }
        let i = self.bins.partition_point(|b| b.hi() <= x);
        self.bins.get(i).filter(|b| b.contains(x)).ok_or(HpdfError::Domain(x))
    }

    /// `mass / width` of the bin containing `x`.
    pub fn density_at(&self, x: f64) -> Result<f64> {
        let b = self.bin_containing(x)?;
        Ok(b.mass / b.width())
    }

    pub fn mean(&self) -> f64 {
        self.bins.iter().map(|b| b.mass * b.center()).sum()
    }

    /// Moments with bin centers as representative points.
    pub fn moments(&self) -> Result<Moments> {
        let mean = self.mean();
        let (variance, fourth) = self.bins.iter().fold((0.0, 0.0), |(v, f), b| {
            let d = b.center() - mean;
            let d2 = d * d;
            (v + b.mass * d2, f + b.mass * d2 * d2)
        });
        if variance < MIN_VARIANCE {
            return Err(HpdfError::DegenerateVariance { mean, variance });
        }
        Ok(Moments { mean, variance, fourth, kurtosis: fourth / (variance * variance) })
    }

    /// `(depth, code)` of every bin that was split into children.
    pub fn refined_codes(&self) -> std::collections::BTreeSet<(u8, u64)> {
        let mut out = std::collections::BTreeSet::new();
        for b in &self.bins {
            let mut code = b.code;
            for depth in (1..b.depth).rev() {
                code /= 10;
                out.insert((depth, code));
            }
        }
        out
    }

    pub fn to_record(&self) -> PdfRecord {
        PdfRecord {
            state: self.state_index,
            bins: self
                .bins
                .iter()
                .map(|b| {
                    let (lo, hi) = b.bounds();
                    (lo, hi, b.mass, b.depth)
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &PdfRecord) -> Result<Self> {
        let bins = rec
            .bins
            .iter()
            .map(|&(lo, _, mass, depth)| {
                if depth == 0 || depth as usize > MAX_DIGITS {
                    return Err(HpdfError::Parse(format!("depth {depth}")));
                }
                let code = (lo * 10f64.powi(depth as i32 - 1)).round();
                if !(code >= 0.0) {
                    return Err(HpdfError::Parse(format!("bin edge {lo}")));
                }
                Ok(Bin { code: code as u64, depth, mass })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rec.state, bins)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("records serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let rec: PdfRecord = serde_json::from_str(line).map_err(|e| HpdfError::Parse(e.to_string()))?;
        Self::from_record(&rec)
    }
}

/// JSONL form: `{"state": s, "bins": [[lo, hi, mass, depth], …]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfRecord {
    pub state: usize,
    pub bins: Vec<(f64, f64, f64, u8)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    Full,
    /// Refine the `k` heaviest children of each refined bin (ties to the
    /// lower digit) plus the realized one.
    TopK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinePolicy {
    pub target_depth: usize,
    pub mode: RefineMode,
}

impl RefinePolicy {
    pub fn full(target_depth: usize) -> Self {
        Self { target_depth, mode: RefineMode::Full }
    }

    pub fn top_k(target_depth: usize, k: usize) -> Self {
        Self { target_depth, mode: RefineMode::TopK(k) }
    }

    pub fn validate(&self, n_digits: usize) -> Result<()> {
        if self.target_depth == 0 || self.target_depth > n_digits {
            return Err(HpdfError::Parameter(format!("target depth {} outside 1..={n_digits}", self.target_depth)));
        }
        if self.mode == RefineMode::TopK(0) {
            return Err(HpdfError::Parameter("top_k requires k ≥ 1".into()));
        }
        Ok(())
    }
}

/// Post-processing of raw model distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub temperature: f64,
    /// Digits kept before renormalizing; everything else is discarded.
    pub allowed: Vec<TokenId>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { temperature: 1.0, allowed: (0..10).collect() }
    }
}

impl ExtractOptions {
    fn digit_probs(&self, dist: &TokenDistribution) -> Result<[f64; 10]> {
        let d = dist.restrict_and_renormalize(&self.allowed)?.apply_temperature(self.temperature)?;
        let probs = d.digit_probs();
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(HpdfError::Consistency(format!(
                "digit probabilities at position {} sum to {total}",
                dist.context_position
            )));
        }
        Ok(probs)
    }
}

/// Forward calls issued by extraction and main-pass distributions reused.
#[derive(Debug, Default)]
pub struct CallLedger {
    forward_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl CallLedger {
    pub fn forward_calls(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    fn call(&self) {
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
    }

    fn hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::Relaxed);
    }
}

/// Main-pass record for one state.
#[derive(Debug, Clone)]
pub struct StatePass<S> {
    pub state_index: usize,
    /// Realized digits of the state.
    pub digits: Vec<u8>,
    /// `main_dists[k]`: digit probabilities after the first `k` realized digits.
    pub main_dists: Vec<[f64; 10]>,
    /// `handles[k]`: context plus the first `k` realized digits.
    pub handles: Vec<CacheHandle<S>>,
}

impl<S> StatePass<S> {
    /// PDF refined only along the realized digits.
    pub fn coarse_pdf(&self) -> Result<HierarchyPdf> {
        let mut bins = Vec::with_capacity(10 * self.digits.len());
        let mut prefix = 0u64;
        let mut mass = 1.0;
        for (k, probs) in self.main_dists.iter().enumerate() {
            let depth = k as u8 + 1;
            let realized = self.digits[k];
            for (d, &p) in probs.iter().enumerate() {
                if d as u8 != realized || k + 1 == self.digits.len() {
                    bins.push(Bin { code: prefix * 10 + d as u64, depth, mass: mass * p });
                }
            }
            mass *= probs[realized as usize];
            prefix = prefix * 10 + realized as u64;
        }
        // Depth-first order: siblings after the realized digit follow its subtree.
        bins.sort_by(|a, b| a.lo().total_cmp(&b.lo()));
        HierarchyPdf::new(self.state_index, bins)
    }
}

/// One sweep over `seq`: exactly `seq.len()` forward calls. Returns the
/// main-branch record of every state after the first.
pub fn initial_pass<B: ModelBackend>(
    model: &B,
    seq: &TokenSeq,
    opts: &ExtractOptions,
    ledger: &CallLedger,
) -> Result<Vec<StatePass<B::State>>> {
    let n = seq.n_digits();
    let stride = seq.stride();
    let num_states = seq.num_states();
    let mut passes: Vec<StatePass<B::State>> = (1..num_states)
        .map(|s| StatePass {
            state_index: s,
            digits: seq.state_digits(s).to_vec(),
            main_dists: Vec::with_capacity(n),
            handles: Vec::with_capacity(n),
        })
        .collect();
    let locate = |p: usize| -> Option<(usize, usize)> {
        let (s, j) = (p / stride, p % stride);
        (s >= 1 && s < num_states && j < n).then_some((s, j))
    };
    let mut handle = model.root()?;
    for (p, &token) in seq.tokens().iter().enumerate() {
        if let Some((s, _)) = locate(p) {
            passes[s - 1].handles.push(model.fork(&handle)?);
        }
        let (dist, next) = model.next_distribution(handle, token)?;
        ledger.call();
        handle = next;
        if let Some((s, _)) = locate(p + 1) {
            passes[s - 1].main_dists.push(opts.digit_probs(&dist)?);
        }
    }
    model.release(handle);
    Ok(passes)
}

struct Node {
    code: u64,
    depth: u8,
    mass: f64,
    children: Option<[usize; 10]>,
}

/// Child digits to refine under `policy`, ascending.
fn select_children(probs: &[f64; 10], mode: RefineMode, realized: Option<u8>) -> Vec<u8> {
    match mode {
        RefineMode::Full => (0..10).collect(),
        RefineMode::TopK(k) => {
            let mut order: Vec<u8> = (0..10).collect();
            // Stable sort keeps lower digits first among ties.
            order.sort_by(|&a, &b| probs[b as usize].total_cmp(&probs[a as usize]));
            let mut chosen: Vec<u8> = order.into_iter().take(k.min(10)).collect();
            if let Some(r) = realized {
                if !chosen.contains(&r) {
                    chosen.push(r);
                }
            }
            chosen.sort_unstable();
            chosen
        }
    }
}

/// Refines one state's PDF. Realized-branch distributions come from the main
/// pass; every other refined bin costs one forward call on a fork of its
/// parent's handle. `policy.target_depth == 1` reproduces the coarse PDF.
pub fn recursive_refiner<B: ModelBackend>(
    model: &B,
    pass: StatePass<B::State>,
    policy: RefinePolicy,
    opts: &ExtractOptions,
    ledger: &CallLedger,
) -> Result<HierarchyPdf> {
    let n = pass.digits.len();
    policy.validate(n)?;
    if pass.main_dists.len() != n || pass.handles.len() != n {
        return Err(HpdfError::Consistency(format!("state {} has an incomplete main pass", pass.state_index)));
    }
    let mut nodes = vec![Node { code: 0, depth: 0, mass: 1.0, children: None }];
    let mut main_handles: Vec<Option<CacheHandle<B::State>>> = pass.handles.into_iter().map(Some).collect();

    // (node, its handle if off the realized branch, its children's digit probabilities)
    let mut stack: Vec<(usize, Option<CacheHandle<B::State>>, [f64; 10])> = vec![(0, None, pass.main_dists[0])];
    ledger.hit();
    while let Some((idx, handle, probs)) = stack.pop() {
        let (code, depth, mass) = (nodes[idx].code, nodes[idx].depth, nodes[idx].mass);
        let on_main = (depth as usize) < n && (0..depth as usize).all(|k| digit_at(code, depth, k) == pass.digits[k]);
        let mut kids = [0usize; 10];
        for (d, kid) in kids.iter_mut().enumerate() {
            *kid = nodes.len();
            nodes.push(Node { code: code * 10 + d as u64, depth: depth + 1, mass: mass * probs[d], children: None });
        }
        let child_sum: f64 = kids.iter().map(|&k| nodes[k].mass).sum();
        if (child_sum - mass).abs() > MASS_TOLERANCE {
            return Err(HpdfError::Consistency(format!("children sum to {child_sum}, parent mass {mass}")));
        }
        nodes[idx].children = Some(kids);

        let child_depth = depth as usize + 1;
        let realized = on_main.then(|| pass.digits[depth as usize]);
        let mut chosen = if child_depth < policy.target_depth { select_children(&probs, policy.mode, realized) } else { Vec::new() };
        // The realized chain always extends to full depth: it is free.
        if let Some(r) = realized {
            if child_depth < n && !chosen.contains(&r) {
                chosen.push(r);
            }
        }
        // Reverse so the stack pops children in ascending digit order.
        for &d in chosen.iter().rev() {
            let kid = kids[d as usize];
            if realized == Some(d) {
                let h = main_handles[child_depth].take();
                ledger.hit();
                stack.push((kid, h, pass.main_dists[child_depth]));
            } else {
                let parent = match &handle {
                    Some(h) => model.fork(h)?,
                    None => model.fork(main_handles[depth as usize].as_ref().ok_or_else(|| {
                        HpdfError::Consistency(format!("missing main handle at depth {depth}"))
                    })?)?,
                };
                let (dist, h) = model.next_distribution(parent, d)?;
                ledger.call();
                stack.push((kid, Some(h), opts.digit_probs(&dist)?));
            }
        }
        if let Some(h) = handle {
            model.release(h);
        }
    }
    for h in main_handles.into_iter().flatten() {
        model.release(h);
    }

    let mut bins = Vec::new();
    collect_leaves(&nodes, 0, &mut bins);
    HierarchyPdf::new(pass.state_index, bins)
}

fn digit_at(code: u64, depth: u8, k: usize) -> u8 {
    ((code / 10u64.pow((depth as usize - 1 - k) as u32)) % 10) as u8
}

fn collect_leaves(nodes: &[Node], idx: usize, out: &mut Vec<Bin>) {
    match nodes[idx].children {
        Some(kids) => kids.iter().for_each(|&k| collect_leaves(nodes, k, out)),
        None => out.push(Bin { code: nodes[idx].code, depth: nodes[idx].depth, mass: nodes[idx].mass }),
    }
}

/// Extraction output for one series.
#[derive(Debug)]
pub struct Extraction {
    pub pdfs: Vec<HierarchyPdf>,
    pub forward_calls: u64,
    pub cache_hits: u64,
}

/// Main pass plus refinement of every state (states in parallel).
pub fn extract<B: ModelBackend>(model: &B, seq: &TokenSeq, policy: RefinePolicy, opts: &ExtractOptions) -> Result<Extraction> {
    policy.validate(seq.n_digits())?;
    let ledger = CallLedger::default();
    let passes = initial_pass(model, seq, opts, &ledger)?;
    let pdfs = par::map(passes, |p| recursive_refiner(model, p, policy, opts, &ledger))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Extraction { pdfs, forward_calls: ledger.forward_calls(), cache_hits: ledger.cache_hits() })
}
