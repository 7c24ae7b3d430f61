//! Hand-written SVG learning-curve figures: one line per series with a
//! shaded mean +/- SEM band, axes with ticks, and a legend. No plotting
//! dependency; the output is a single self-contained XML document.

use std::fmt::Write as _;

use crate::aggregate::AggregateSeries;
use crate::error::{Error, Result};

pub const CANVAS_W: f64 = 800.0;
pub const CANVAS_H: f64 = 500.0;
const MARGIN_LEFT: f64 = 76.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 58.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Affine map from data coordinates to pixel coordinates (y flipped).
#[derive(Clone, Copy, Debug)]
pub struct Scale {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl Scale {
    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x_min) / (self.x_max - self.x_min) * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        self.top + (self.y_max - y) / (self.y_max - self.y_min) * self.height
    }
}

fn check(series: &[(String, AggregateSeries)]) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Plot { reason: "no series given".into() });
    }
    for (label, s) in series {
        if s.is_empty() {
            return Err(Error::Plot { reason: format!("series {label:?} has no points") });
        }
        if s.mean.len() != s.x.len() || s.sem.len() != s.x.len() {
            return Err(Error::Plot { reason: format!("series {label:?} has ragged arrays") });
        }
        if s.x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Plot { reason: format!("series {label:?} x not increasing") });
        }
        let finite = s.x.iter().chain(&s.mean).chain(&s.sem).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Plot { reason: format!("series {label:?} has non-finite values") });
        }
    }
    Ok(())
}

/// Pad a degenerate range so the scale never divides by zero.
fn widen(min: f64, max: f64) -> (f64, f64) {
    if min < max {
        (min, max)
    } else {
        let pad = if min == 0.0 { 1.0 } else { min.abs() * 0.1 };
        (min - pad, max + pad)
    }
}

/// Data ranges (x exact, y over mean +/- sem with 5% headroom) mapped onto
/// the fixed canvas. Exposed so tests can invert plotted coordinates.
pub fn compute_scale(series: &[(String, AggregateSeries)]) -> Result<Scale> {
    check(series)?;
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, s) in series {
        for i in 0..s.len() {
            x_min = x_min.min(s.x[i]);
            x_max = x_max.max(s.x[i]);
            y_min = y_min.min(s.mean[i] - s.sem[i]);
            y_max = y_max.max(s.mean[i] + s.sem[i]);
        }
    }
    let (x_min, x_max) = widen(x_min, x_max);
    let (y_min, y_max) = widen(y_min, y_max);
    let y_pad = (y_max - y_min) * 0.05;
    Ok(Scale {
        x_min,
        x_max,
        y_min: y_min - y_pad,
        y_max: y_max + y_pad,
        left: MARGIN_LEFT,
        top: MARGIN_TOP,
        width: CANVAS_W - MARGIN_LEFT - MARGIN_RIGHT,
        height: CANVAS_H - MARGIN_TOP - MARGIN_BOTTOM,
    })
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick step to 1/2/5 times a power of ten, aiming for ~5 intervals.
fn tick_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(min: f64, max: f64) -> Vec<f64> {
    let step = tick_step(max - min);
    let first = (min / step).ceil();
    let last = (max / step).floor();
    let mut out = Vec::new();
    let mut k = first;
    while k <= last {
        // Snap to the grid to avoid 0.30000000000000004-style labels.
        out.push(k * step);
        k += 1.0;
    }
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e6 {
        let m = v / 1e6;
        if (m - m.round()).abs() < 1e-9 {
            return format!("{}M", m.round());
        }
        return format!("{m:.1}M");
    }
    if a >= 1e4 {
        let k = v / 1e3;
        if (k - k.round()).abs() < 1e-9 {
            return format!("{}k", k.round());
        }
        return format!("{k:.1}k");
    }
    if (v - v.round()).abs() < 1e-9 * a.max(1.0) {
        return format!("{}", v.round());
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn c(v: f64) -> String {
    format!("{v:.2}")
}

/// Render the figure. One `<polygon>` band plus one `<polyline>` line per
/// series, drawn with [`compute_scale`], so coordinates are testable.
pub fn render_svg(
    series: &[(String, AggregateSeries)],
    x_label: &str,
    y_label: &str,
) -> Result<String> {
    let scale = compute_scale(series)?;
    let right = scale.left + scale.width;
    let bottom = scale.top + scale.height;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" viewBox=\"0 0 {CANVAS_W} {CANVAS_H}\">"
    );
    let _ = writeln!(svg, "  <rect width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" fill=\"white\"/>");

    // Gridlines and tick labels.
    let font = "font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\"";
    for tx in ticks(scale.x_min, scale.x_max) {
        let px = scale.px(tx);
        let _ = writeln!(
            svg,
            "  <line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#ddd\"/>",
            c(px),
            c(scale.top),
            c(bottom)
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" {font}>{}</text>",
            c(px),
            c(bottom + 18.0),
            escape(&format_tick(tx))
        );
    }
    for ty in ticks(scale.y_min, scale.y_max) {
        let py = scale.py(ty);
        let _ = writeln!(
            svg,
            "  <line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#ddd\"/>",
            c(scale.left),
            c(py),
            c(right)
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\" {font}>{}</text>",
            c(scale.left - 8.0),
            c(py + 4.0),
            escape(&format_tick(ty))
        );
    }

    // SEM bands under the mean lines.
    for (i, (_, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for k in 0..s.len() {
            let _ = write!(points, "{},{} ", c(scale.px(s.x[k])), c(scale.py(s.mean[k] + s.sem[k])));
        }
        for k in (0..s.len()).rev() {
            let _ = write!(points, "{},{} ", c(scale.px(s.x[k])), c(scale.py(s.mean[k] - s.sem[k])));
        }
        let _ = writeln!(
            svg,
            "  <polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
            points.trim_end()
        );
    }
    for (i, (_, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for k in 0..s.len() {
            let _ = write!(points, "{},{} ", c(scale.px(s.x[k])), c(scale.py(s.mean[k])));
        }
        let _ = writeln!(
            svg,
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            points.trim_end()
        );
    }

    // Axes over the grid, under the legend.
    let _ = writeln!(
        svg,
        "  <line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>",
        c(scale.left),
        c(scale.top),
        c(bottom)
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>",
        c(scale.left),
        c(bottom),
        c(right)
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" {font}>{}</text>",
        c(scale.left + scale.width / 2.0),
        c(CANVAS_H - 14.0),
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        "  <text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\" {font}>{}</text>",
        c(scale.top + scale.height / 2.0),
        c(scale.top + scale.height / 2.0),
        escape(y_label)
    );

    // Legend, top-right inside the plot area.
    let lx = right - 170.0;
    let mut ly = scale.top + 14.0;
    for (i, (label, _)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            c(lx),
            c(ly),
            c(lx + 24.0),
            c(ly)
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" {font}>{}</text>",
            c(lx + 30.0),
            c(ly + 4.0),
            escape(label)
        );
        ly += 18.0;
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
