//! Artifact plumbing: loss CSVs, atomic file writes and log-log SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{LossCurve, Metric};
use crate::scaling::PowerLawFit;

use super::RunnerError;

/// One row of a loss CSV: `system,seed,context_len,metric,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub system: String,
    pub seed: u64,
    pub context_len: usize,
    pub metric: Metric,
    pub value: f64,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

/// Writes through a sibling temporary file and a rename, so readers (and
/// resumed runs) never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn loss_csv_bytes(rows: &[LossRow]) -> Result<Vec<u8>, RunnerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| RunnerError::Format(format!("loss row: {e}")))?;
    }
    w.into_inner().map_err(|e| RunnerError::Format(format!("loss csv: {e}")))
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<(), RunnerError> {
    write_atomic(path, &loss_csv_bytes(rows)?)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>, RunnerError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => RunnerError::Io { path: path.to_path_buf(), source },
        other => RunnerError::Format(format!("{}: {other:?}", path.display())),
    })?;
    let headers = r.headers().map_err(|e| RunnerError::Format(format!("{}: {e}", path.display())))?;
    if headers != vec!["system", "seed", "context_len", "metric", "value"] {
        return Err(RunnerError::Format(format!("{}: unexpected header {headers:?}", path.display())));
    }
    r.deserialize()
        .collect::<Result<Vec<LossRow>, _>>()
        .map_err(|e| RunnerError::Format(format!("{}: {e}", path.display())))
}

/// Rows grouped into per-seed curves, keyed by `(system, metric)`.
pub fn curves_by_seed(rows: &[LossRow]) -> BTreeMap<(String, Metric), BTreeMap<u64, LossCurve>> {
    let mut out: BTreeMap<(String, Metric), BTreeMap<u64, LossCurve>> = BTreeMap::new();
    for r in rows {
        let curve = out
            .entry((r.system.clone(), r.metric))
            .or_default()
            .entry(r.seed)
            .or_insert_with(|| LossCurve { metric: r.metric, context_lens: vec![], values: vec![], std_err: None });
        curve.context_lens.push(r.context_len);
        curve.values.push(r.value);
    }
    out
}

/// Restricts every curve to the context lengths they all share.
pub fn common_grid(curves: &[LossCurve]) -> Vec<LossCurve> {
    let Some(first) = curves.first() else { return vec![] };
    let shared: Vec<usize> =
        first.context_lens.iter().copied().filter(|t| curves.iter().all(|c| c.context_lens.contains(t))).collect();
    curves
        .iter()
        .map(|c| LossCurve {
            metric: c.metric,
            values: shared.iter().map(|&t| c.value_at(t).expect("shared point")).collect(),
            context_lens: shared.clone(),
            std_err: None,
        })
        .collect()
}

/// One line on a loss plot.
#[derive(Debug, Clone)]
pub struct PlotSeries<'a> {
    pub label: String,
    pub curve: &'a LossCurve,
    pub fit: Option<&'a PowerLawFit>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 720.0;
const H: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, t: f64) -> f64 {
        LEFT + (t.log10() - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v.log10() - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn positive_points(c: &LossCurve) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
    let err = c.std_err.as_deref();
    c.points()
        .enumerate()
        .filter(|(_, p)| p.context_len > 0 && p.value > 0.0 && p.value.is_finite())
        .map(move |(i, p)| (p.context_len, p.value, err.map_or(0.0, |e| e[i])))
}

/// Log-log plot of mean loss against context length, with a ± standard
/// error band and a dashed power-law overlay for series with a fit.
/// Nonpositive values cannot be drawn on a log axis and are skipped.
pub fn render_svg(title: &str, metric: Metric, series: &[PlotSeries<'_>]) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (t, v, e) in positive_points(s.curve) {
            xs.push((t as f64).log10());
            ys.push(v.log10());
            if v - e > 0.0 {
                ys.push((v - e).log10());
            }
            ys.push((v + e).log10());
        }
    }
    let span = |v: &[f64]| -> (f64, f64) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        let (lo, hi) = (lo.floor(), hi.ceil());
        if hi > lo {
            (lo, hi)
        } else {
            (lo, lo + 1.0)
        }
    };
    let axes = Axes { x: span(&xs), y: span(&ys) };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, (W - RIGHT + LEFT) / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(svg, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
    for d in axes.x.0 as i32..=axes.x.1 as i32 {
        let x = axes.px(10f64.powi(d));
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{y0}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"#, y0 + 18.0);
    }
    for d in axes.y.0 as i32..=axes.y.1 as i32 {
        let y = axes.py(10f64.powi(d));
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">context length (log)</text>"#, (x0 + x1) / 2.0, H - 15.0);
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1} loss (log)</text>"#,
        (y0 + y1) / 2.0,
        metric
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(usize, f64, f64)> = positive_points(s.curve).collect();
        if pts.iter().any(|p| p.2 > 0.0) {
            let upper = pts.iter().map(|&(t, v, e)| format!("{:.2},{:.2}", axes.px(t as f64), axes.py(v + e)));
            let lower = pts
                .iter()
                .rev()
                .map(|&(t, v, e)| format!("{:.2},{:.2}", axes.px(t as f64), axes.py((v - e).max(v * 1e-3))));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, poly.join(" "));
        }
        let line: Vec<String> = pts.iter().map(|&(t, v, _)| format!("{:.2},{:.2}", axes.px(t as f64), axes.py(v))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#, line.join(" "));
        let mut label = s.label.clone();
        if let Some(fit) = s.fit {
            let (a, b) = (fit.window.0 as f64, fit.window.1 as f64);
            let (la, lb) = (fit.log_intercept() + fit.alpha * a.ln(), fit.log_intercept() + fit.alpha * b.ln());
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="6 4" stroke-width="1.2"/>"#,
                axes.px(a),
                axes.py(la.exp()),
                axes.px(b),
                axes.py(lb.exp())
            );
            let _ = write!(label, " (α = {:.3})", fit.alpha);
        }
        let ly = TOP + 14.0 + 20.0 * i as f64;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, x1 + 12.0, x1 + 32.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x1 + 38.0, ly + 4.0, escape(&label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
