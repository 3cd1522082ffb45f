//! SVG 1.1 figures: waterfall, summary (beeswarm), ROC and reliability diagram.
//!
//! Output is plain text built with `write!`; every number goes through a
//! fixed-precision formatter so identical inputs give byte-identical files.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{CalibrationCurve, RocCurve};
use crate::explain::{waterfall, Attribution, GlobalImportance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    Waterfall,
    Summary,
    Roc,
    Calibration,
}

impl FigureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Waterfall => "waterfall",
            Self::Summary => "summary",
            Self::Roc => "roc",
            Self::Calibration => "calibration",
        }
    }

    /// `<run-id>_<kind>.svg`
    pub fn file_name(self, run_id: &str) -> String {
        format!("{run_id}_{}.svg", self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl FigureSpec {
    pub fn new(kind: FigureKind) -> Self {
        let (title, x, y) = match kind {
            FigureKind::Waterfall => (
                "Local explanation",
                "Predicted risk (probability)",
                "",
            ),
            FigureKind::Summary => (
                "Global feature importance",
                "SHAP value (impact on predicted probability)",
                "",
            ),
            FigureKind::Roc => ("ROC curve", "False positive rate", "True positive rate"),
            FigureKind::Calibration => (
                "Reliability diagram",
                "Mean predicted probability",
                "Observed frequency",
            ),
        };
        Self {
            kind,
            width: 900,
            height: 600,
            title: title.into(),
            x_label: x.into(),
            y_label: y.into(),
        }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width.max(1);
        self.height = height.max(1);
        self
    }
}

/// Two-decimal label text. Rust's float formatting rounds exact ties to even.
pub fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const POSITIVE: &str = "#d7301f";
const NEGATIVE: &str = "#2b8cbe";
const AXIS: &str = "#333333";
const MARGIN_LEFT: f64 = 150.0;
const MARGIN_RIGHT: f64 = 40.0;
const MARGIN_TOP: f64 = 60.0;
const MARGIN_BOTTOM: f64 = 70.0;

/// Linear map from a data interval onto a pixel interval.
#[derive(Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn new((d0, d1): (f64, f64), (p0, p1): (f64, f64)) -> Self {
        let (d0, d1) = if d1 - d0 > 0.0 { (d0, d1) } else { (d0 - 0.5, d0 + 0.5) };
        Self { d0, d1, p0, p1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }
}

struct Svg {
    buf: String,
    spec: FigureSpec,
}

impl Svg {
    fn new(spec: &FigureSpec) -> Self {
        let (w, h) = (spec.width, spec.height);
        let mut buf = String::new();
        let _ = writeln!(buf, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" data-kind="{}">"#,
            spec.kind.as_str()
        );
        let _ = writeln!(buf, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
        let mut svg = Self {
            buf,
            spec: spec.clone(),
        };
        svg.text(w as f64 / 2.0, 30.0, "middle", 18, &spec.title, "title");
        svg
    }

    fn plot_box(&self) -> (f64, f64, f64, f64) {
        let w = f64::from(self.spec.width);
        let h = f64::from(self.spec.height);
        (
            MARGIN_LEFT.min(w / 3.0),
            MARGIN_TOP.min(h / 4.0),
            (w - MARGIN_RIGHT).max(w * 2.0 / 3.0),
            (h - MARGIN_BOTTOM).max(h * 3.0 / 4.0),
        )
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, text: &str, class: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text class="{class}" x="{}" y="{}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            fmt2(x),
            fmt2(y),
            escape(text)
        );
    }

    fn line(&mut self, (x1, y1): (f64, f64), (x2, y2): (f64, f64), stroke: &str, extra: &str) {
        let _ = writeln!(
            self.buf,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}"{extra}/>"#,
            fmt2(x1),
            fmt2(y1),
            fmt2(x2),
            fmt2(y2)
        );
    }

    fn axes_labels(&mut self) {
        let (x0, y0, x1, y1) = self.plot_box();
        let xl = self.spec.x_label.clone();
        let yl = self.spec.y_label.clone();
        self.text((x0 + x1) / 2.0, y1 + 45.0, "middle", 14, &xl, "x-label");
        if !yl.is_empty() {
            let _ = writeln!(
                self.buf,
                r#"<text class="y-label" x="{}" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 {} {})">{}</text>"#,
                fmt2(x0 - 50.0),
                fmt2((y0 + y1) / 2.0),
                fmt2(x0 - 50.0),
                fmt2((y0 + y1) / 2.0),
                escape(&yl)
            );
        }
    }

    /// Axes and ticks for a unit square plot.
    fn unit_axes(&mut self, sx: Scale, sy: Scale) {
        let (x0, y0, x1, y1) = self.plot_box();
        let _ = writeln!(
            self.buf,
            r#"<rect class="frame" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{AXIS}"/>"#,
            fmt2(x0),
            fmt2(y0),
            fmt2(x1 - x0),
            fmt2(y1 - y0)
        );
        for i in 0..=5 {
            let v = f64::from(i) / 5.0;
            let (px, py) = (sx.map(v), sy.map(v));
            self.line((px, y1), (px, y1 + 5.0), AXIS, "");
            self.text(px, y1 + 20.0, "middle", 12, &fmt2(v), "tick");
            self.line((x0 - 5.0, py), (x0, py), AXIS, "");
            self.text(x0 - 8.0, py + 4.0, "end", 12, &fmt2(v), "tick");
        }
        self.axes_labels();
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

/// Horizontal bars from the base value to the prediction, largest |phi| on top.
pub fn render_waterfall(attribution: &Attribution, spec: &FigureSpec) -> String {
    let wf = waterfall(attribution);
    let mut svg = Svg::new(spec);
    let (x0, y0, x1, y1) = svg.plot_box();

    let mut lo = wf.base_value.min(wf.prediction);
    let mut hi = wf.base_value.max(wf.prediction);
    for s in &wf.steps {
        lo = lo.min(s.start.min(s.end));
        hi = hi.max(s.start.max(s.end));
    }
    let pad = ((hi - lo) * 0.1).max(0.01);
    let sx = Scale::new((lo - pad, hi + pad), (x0, x1));

    let n = wf.steps.len().max(1) as f64;
    let row_h = (y1 - y0) / n;
    for (i, s) in wf.steps.iter().enumerate() {
        let top = y0 + row_h * i as f64 + row_h * 0.2;
        let (a, b) = (sx.map(s.start.min(s.end)), sx.map(s.start.max(s.end)));
        let (class, color) = if s.phi >= 0.0 { ("bar positive", POSITIVE) } else { ("bar negative", NEGATIVE) };
        let _ = writeln!(
            svg.buf,
            r#"<rect class="{class}" data-feature="{}" data-phi="{}" x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
            escape(&s.feature),
            s.phi,
            fmt2(a),
            fmt2(top),
            fmt2(b - a),
            fmt2(row_h * 0.6)
        );
        let label = format!("{} = {}", s.feature, display_value(s.value));
        svg.text(x0 - 8.0, top + row_h * 0.3 + 4.0, "end", 12, &label, "feature");
        let sign = if s.phi >= 0.0 { "+" } else { "" };
        svg.text(b + 4.0, top + row_h * 0.3 + 4.0, "start", 11, &format!("{sign}{}", fmt2(s.phi)), "phi");
    }

    for (class, value, name, dy) in [
        ("marker base", wf.base_value, "E[f(X)]", y1 + 18.0),
        ("marker final", wf.prediction, "f(x)", y0 - 8.0),
    ] {
        let px = sx.map(value);
        let _ = writeln!(
            svg.buf,
            r#"<line class="{class}" data-value="{value}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{AXIS}" stroke-dasharray="4 3"/>"#,
            fmt2(px),
            fmt2(y0),
            fmt2(px),
            fmt2(y1)
        );
        svg.text(px, dy, "middle", 12, &format!("{name} = {}", fmt2(value)), class);
    }
    svg.line((x0, y1), (x1, y1), AXIS, r#" class="axis""#);
    svg.axes_labels();
    svg.finish()
}

fn display_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        fmt2(v)
    }
}

/// Blue (low) to red (high).
fn value_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r0, g0, b0) = (0x1f as f64, 0x77 as f64, 0xb4 as f64);
    let (r1, g1, b1) = (0xd6 as f64, 0x27 as f64, 0x28 as f64);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(r0, r1), mix(g0, g1), mix(b0, b1))
}

/// Seed for the vertical jitter of summary-plot dots.
pub const SUMMARY_JITTER_SEED: u64 = 0x5eed;

/// One row per feature by descending mean |phi|; each instance is a dot at
/// its phi, coloured by its feature value within the feature's range.
pub fn render_summary(importance: &GlobalImportance, spec: &FigureSpec) -> String {
    let mut svg = Svg::new(spec);
    let (x0, y0, x1, y1) = svg.plot_box();
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for (_, phi, _) in importance.pairs() {
        lo = lo.min(phi);
        hi = hi.max(phi);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let sx = Scale::new((lo - pad, hi + pad), (x0, x1));
    let order = importance.ranking();
    let row_h = (y1 - y0) / order.len().max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(SUMMARY_JITTER_SEED);

    let zero = sx.map(0.0);
    svg.line((zero, y0), (zero, y1), "#999999", r#" class="zero""#);
    for (row, &k) in order.iter().enumerate() {
        let centre = y0 + row_h * (row as f64 + 0.5);
        let name = &importance.feature_names[k];
        svg.text(x0 - 8.0, centre + 4.0, "end", 12, name, "feature");
        let (vmin, vmax) = importance
            .values
            .iter()
            .map(|v| v[k])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let _ = writeln!(svg.buf, r#"<g class="feature-row" data-feature="{}" data-mean-abs-phi="{}">"#, escape(name), importance.mean_abs_phi[k]);
        for (phi, values) in importance.phi.iter().zip(&importance.values) {
            let t = if vmax > vmin { (values[k] - vmin) / (vmax - vmin) } else { 0.5 };
            let jitter: f64 = rng.random_range(-0.35..0.35);
            let _ = writeln!(
                svg.buf,
                r#"<circle class="dot" cx="{}" cy="{}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
                fmt2(sx.map(phi[k])),
                fmt2(centre + jitter * row_h),
                value_color(t)
            );
        }
        svg.buf.push_str("</g>\n");
    }
    svg.line((x0, y1), (x1, y1), AXIS, r#" class="axis""#);
    for v in [lo, 0.0, hi] {
        svg.text(sx.map(v), y1 + 20.0, "middle", 12, &fmt2(v), "tick");
    }
    svg.text(x1, y0 - 8.0, "end", 11, "feature value: low (blue) to high (red)", "legend");
    svg.axes_labels();
    svg.finish()
}

pub fn render_roc(roc: &RocCurve, spec: &FigureSpec) -> String {
    let mut svg = Svg::new(spec);
    let (x0, y0, x1, y1) = svg.plot_box();
    let sx = Scale::new((0.0, 1.0), (x0, x1));
    let sy = Scale::new((0.0, 1.0), (y1, y0));
    svg.unit_axes(sx, sy);
    svg.line((sx.map(0.0), sy.map(0.0)), (sx.map(1.0), sy.map(1.0)), "#999999", r#" class="chance" stroke-dasharray="6 4""#);
    let pts: Vec<String> = roc
        .points
        .iter()
        .map(|p| format!("{},{}", fmt2(sx.map(p.fpr)), fmt2(sy.map(p.tpr))))
        .collect();
    let _ = writeln!(
        svg.buf,
        r#"<polyline class="roc" fill="none" stroke="{POSITIVE}" stroke-width="2" points="{}"/>"#,
        pts.join(" ")
    );
    svg.text(sx.map(0.95), sy.map(0.05), "end", 16, &format!("AUC = {}", fmt2(roc.auc)), "auc");
    svg.finish()
}

pub fn render_calibration(curve: &CalibrationCurve, spec: &FigureSpec) -> String {
    let mut svg = Svg::new(spec);
    let (x0, y0, x1, y1) = svg.plot_box();
    let sx = Scale::new((0.0, 1.0), (x0, x1));
    let sy = Scale::new((0.0, 1.0), (y1, y0));
    svg.unit_axes(sx, sy);
    svg.line((sx.map(0.0), sy.map(0.0)), (sx.map(1.0), sy.map(1.0)), "#999999", r#" class="diagonal" stroke-dasharray="6 4""#);
    let pts: Vec<String> = curve
        .bins
        .iter()
        .map(|b| format!("{},{}", fmt2(sx.map(b.mean_predicted)), fmt2(sy.map(b.observed_frequency))))
        .collect();
    if pts.len() > 1 {
        let _ = writeln!(
            svg.buf,
            r#"<polyline class="calibration" fill="none" stroke="{NEGATIVE}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    for b in &curve.bins {
        let (px, py) = (sx.map(b.mean_predicted), sy.map(b.observed_frequency));
        let _ = writeln!(
            svg.buf,
            r#"<circle class="bin" data-count="{}" cx="{}" cy="{}" r="4" fill="{NEGATIVE}"/>"#,
            b.count,
            fmt2(px),
            fmt2(py)
        );
        svg.text(px + 6.0, py - 6.0, "start", 10, &format!("n={}", b.count), "count");
    }
    svg.finish()
}
