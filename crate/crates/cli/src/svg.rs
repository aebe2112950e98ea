//! Static SVG plots: reliability diagram and risk-coverage curve.
//!
//! Output is plain SVG 1.1 text with fixed-precision coordinates, so a
//! rerun with the same data is byte-identical. No scripts, no timestamps.

use uqcal_core::metrics::ReliabilityBins;
use uqcal_core::selective::{RiskCoverageCurve, SelectivePolicy};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

fn px(v: f64) -> String {
    format!("{v:.2}")
}

struct Frame {
    x0: f64,
    y0: f64,
    xmax: f64,
    ymax: f64,
}

impl Frame {
    fn new(xmax: f64, ymax: f64) -> Self {
        Self { x0: 0.0, y0: 0.0, xmax, ymax }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x0) / (self.xmax - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_B - (v - self.y0) / (self.ymax - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn open_svg(out: &mut String, title: &str) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"13\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        px(WIDTH / 2.0)
    ));
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str, x_ticks: &[f64], y_ticks: &[f64]) {
    let bottom = HEIGHT - MARGIN_B;
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        px(MARGIN_L),
        px(MARGIN_T),
        px(MARGIN_L),
        px(bottom)
    ));
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        px(MARGIN_L),
        px(bottom),
        px(WIDTH - MARGIN_R),
        px(bottom)
    ));
    for &t in x_ticks {
        let x = frame.x(t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            px(x),
            px(bottom),
            px(x),
            px(bottom + 5.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{t}</text>\n",
            px(x),
            px(bottom + 20.0)
        ));
    }
    for &t in y_ticks {
        let y = frame.y(t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            px(MARGIN_L - 5.0),
            px(y),
            px(MARGIN_L),
            px(y)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" dominant-baseline=\"middle\">{t}</text>\n",
            px(MARGIN_L - 9.0),
            px(y)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        px((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        px(HEIGHT - 14.0)
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>\n",
        px((MARGIN_T + bottom) / 2.0),
        px((MARGIN_T + bottom) / 2.0)
    ));
}

/// Reliability diagram: one accuracy bar per non-empty confidence bin plus
/// the dashed identity diagonal.
pub fn reliability_svg(bins: &ReliabilityBins<f64>, ece: f64) -> String {
    let frame = Frame::new(1.0, 1.0);
    let mut out = String::new();
    open_svg(&mut out, "Reliability diagram");
    let ticks = [0.0, 0.25, 0.5, 0.75, 1.0];
    axes(&mut out, &frame, "confidence", "accuracy", &ticks, &ticks);
    for (b, count) in bins.count.iter().enumerate() {
        if *count == 0 {
            continue;
        }
        let acc = bins.accuracy[b].expect("non-empty bin has accuracy");
        let lo = bins.edges[b];
        let hi = bins.edges[b + 1];
        let x = frame.x(lo);
        let w = frame.x(hi) - x;
        let y = frame.y(acc);
        let h = frame.y(0.0) - y;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" \
             fill=\"#4878a8\" fill-opacity=\"0.8\" stroke=\"#2a4a6a\"/>\n",
            px(x + 1.0),
            px(y),
            px((w - 2.0).max(0.5)),
            px(h)
        ));
    }
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#777\" stroke-dasharray=\"6 4\"/>\n",
        px(frame.x(0.0)),
        px(frame.y(0.0)),
        px(frame.x(1.0)),
        px(frame.y(1.0))
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">ECE = {:.4}</text>\n",
        px(MARGIN_L + 10.0),
        px(MARGIN_T + 16.0),
        ece
    ));
    out.push_str("</svg>\n");
    out
}

/// Risk-coverage polyline; the selected operating point, when a policy
/// accepted anything, is marked with a circle.
pub fn risk_coverage_svg(curve: &RiskCoverageCurve<f64>, policy: Option<&SelectivePolicy<f64>>) -> String {
    let max_risk = curve
        .points
        .iter()
        .map(|p| p.risk)
        .fold(0.0f64, f64::max);
    // Round the y range up to the next 0.1 so small risks stay visible.
    let ymax = ((max_risk * 10.0).floor() / 10.0 + 0.1).clamp(0.1, 1.0);
    let frame = Frame::new(1.0, ymax);
    let mut out = String::new();
    open_svg(&mut out, "Risk-coverage curve");
    let x_ticks = [0.0, 0.25, 0.5, 0.75, 1.0];
    let y_ticks: Vec<f64> = (0..=4).map(|i| (ymax * f64::from(i) / 4.0 * 1000.0).round() / 1000.0).collect();
    axes(&mut out, &frame, "coverage", "risk", &x_ticks, &y_ticks);
    let mut path = String::new();
    for p in &curve.points {
        if !path.is_empty() {
            path.push(' ');
        }
        path.push_str(&format!("{},{}", px(frame.x(p.coverage)), px(frame.y(p.risk.min(ymax)))));
    }
    out.push_str(&format!(
        "<polyline points=\"{path}\" fill=\"none\" stroke=\"#a84848\" stroke-width=\"1.5\"/>\n"
    ));
    if let Some(policy) = policy {
        if let Some(risk) = policy.achieved_risk {
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"none\" stroke=\"#2a4a6a\" stroke-width=\"2\"/>\n",
                px(frame.x(policy.coverage)),
                px(frame.y(risk.min(ymax)))
            ));
        }
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">AURC = {:.4}</text>\n",
        px(MARGIN_L + 10.0),
        px(MARGIN_T + 16.0),
        curve.aurc
    ));
    out.push_str("</svg>\n");
    out
}
