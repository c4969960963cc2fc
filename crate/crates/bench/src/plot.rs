//! Log-scale learning curves as standalone SVG.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use fosi::fosi::DIVERGENCE_FACTOR;
use fosi::RunTrace;

use crate::BenchError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_Y: f64 = 40.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// One curve: `(iteration, f)` points before any divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub diverged: bool,
}

impl Series {
    /// Cut the trace at its first non-finite value or at the first value
    /// beyond the divergence guard.
    pub fn from_trace(label: String, trace: &RunTrace) -> Self {
        let f0 = trace.rows.first().map_or(f64::NAN, |r| r.f_value);
        let mut points = Vec::new();
        let mut diverged = false;
        for r in &trace.rows {
            if !r.f_value.is_finite() || (f0 != 0.0 && r.f_value > DIVERGENCE_FACTOR * f0.abs()) {
                diverged = true;
                break;
            }
            points.push((r.iteration as f64, r.f_value));
        }
        Self { label, points, diverged }
    }
}

pub fn load_series(paths: &[PathBuf]) -> Result<Vec<Series>, BenchError> {
    if paths.is_empty() {
        return Err(BenchError::Plot("no traces given".into()));
    }
    paths
        .iter()
        .map(|p| {
            let file = File::open(p).map_err(|e| BenchError::io(p, e))?;
            let trace = RunTrace::read_csv(file).map_err(|e| BenchError::Plot(format!("{}: {e}", p.display())))?;
            let label = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok(Series::from_trace(label, &trace))
        })
        .collect()
}

/// Read traces and write their learning curves to `out`.
pub fn emit_plot(paths: &[PathBuf], out: &Path) -> Result<(), BenchError> {
    let series = load_series(paths)?;
    std::fs::write(out, render_svg(&series)).map_err(|e| BenchError::io(out, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(series: &[Series]) -> String {
    let positive = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1 > 0.0);
    let x_max = series.iter().flat_map(|s| s.points.iter()).map(|p| p.0).fold(1.0, f64::max);
    let lo = positive().map(|p| p.1.log10()).fold(f64::INFINITY, f64::min);
    let hi = positive().map(|p| p.1.log10()).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = if lo.is_finite() { (lo.floor(), hi.ceil().max(lo.floor() + 1.0)) } else { (0.0, 1.0) };

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let sx = |x: f64| MARGIN_LEFT + plot_w * x / x_max;
    // Nonpositive values sit on the bottom axis.
    let sy = |f: f64| {
        let l = if f > 0.0 { f.log10() } else { y_lo };
        MARGIN_Y + plot_h * (y_hi - l) / (y_hi - y_lo)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_Y}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let decades = (y_hi - y_lo) as i64;
    let step = (decades / 10 + 1) as usize;
    for d in (0..=decades).step_by(step) {
        let e = y_lo as i64 + d;
        let y = sy(10f64.powi(e as i32));
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 6.0,
            y + 4.0
        );
    }
    for i in 0..=4 {
        let x = x_max * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            HEIGHT - MARGIN_Y + 16.0,
            x.round()
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text><text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">f (log scale)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 6.0,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, f)| format!("{:.2},{:.2}", sx(x), sy(f))).collect();
        if !pts.is_empty() {
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        if s.diverged {
            let (x, f) = s.points.last().copied().unwrap_or((0.0, 10f64.powf(y_hi)));
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" fill="{color}">&#215; diverged</text>"#,
                sx(x) + 3.0,
                sy(f) - 4.0
            );
        }
        let ly = MARGIN_Y + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let suffix = if s.diverged { " (diverged)" } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}{suffix}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
