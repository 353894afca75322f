use super::matching::GtEventInterval;
use super::peaks::Peak;
use super::ConfidenceSignal;
use crate::svg::Svg;

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 260.0;
const MARGIN: f64 = 30.0;

/// Raw and smoothed detection scores with peaks and shaded ground truth.
/// Receives intervals are shaded green, Gives orange.
pub fn trace_svg(signal: &ConfidenceSignal, smoothed: &[f64], peaks: &[Peak], intervals: &[GtEventInterval], title: &str) -> String {
    let n = signal.len().max(2);
    let x = |i: f64| MARGIN + (WIDTH - 2.0 * MARGIN) * i / (n - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * v.clamp(0.0, 1.0);
    let mut svg = Svg::new(WIDTH, HEIGHT);
    for iv in intervals {
        let fill = match iv.direction.direction_index() {
            Some(0) => "#c8ecc8",
            _ => "#fcdcb4",
        };
        let x0 = x(iv.first as f64 - 0.5).max(MARGIN);
        let x1 = x(iv.last as f64 + 0.5).min(WIDTH - MARGIN);
        svg.rect(x0, MARGIN, x1 - x0, HEIGHT - 2.0 * MARGIN, fill);
    }
    svg.polyline(&[(MARGIN, y(0.0)), (WIDTH - MARGIN, y(0.0))], "#888888", 1.0);
    let raw: Vec<(f64, f64)> = signal.det_scores.iter().enumerate().map(|(i, v)| (x(i as f64), y(*v))).collect();
    svg.polyline(&raw, "#9db4d6", 1.0);
    let sm: Vec<(f64, f64)> = smoothed.iter().enumerate().map(|(i, v)| (x(i as f64), y(*v))).collect();
    svg.polyline(&sm, "#1f3f8f", 2.0);
    for p in peaks {
        svg.circle(x(p.index as f64), y(p.height), 4.0, "#d62728");
    }
    svg.text(MARGIN, 18.0, 13.0, title);
    svg.finish()
}
