//! Event-level evaluation.
//!
//! Per-window detection probabilities form a confidence signal. The signal
//! is smoothed, its prominent peaks are matched to ground-truth intervals
//! within a tolerance, and direction is scored per ground-truth interval
//! from a Gaussian-weighted mean of the window direction scores.

mod matching;
mod metrics;
mod peaks;
mod plot;
mod smoothing;

pub use matching::{match_events, validate_intervals, EventMatchResult, GtEventInterval};
pub use metrics::{
    aggregate_direction, detection_metrics, direction_metrics, sigma_dir, DetectionCounts, DetectionMetrics,
    DirectionAggregate, DirectionResult,
};
pub use peaks::{find_peaks, local_maxima, prominence, Peak};
pub use plot::trace_svg;
pub use smoothing::{gaussian_kernel, padding_for, reflect_index, smooth};

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{forward, ModelParams, Mode};
use crate::synth::PlantedEvent;
use crate::windowing::{shuffle_window_frames, FrameLabel, LabeledFrameStream, WindowSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-window scores of one stream, in window order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSignal {
    /// Start frame of each window; ascending with constant spacing.
    pub window_starts: Vec<usize>,
    pub det_scores: Vec<f64>,
    /// p(Gives) per window.
    pub dir_scores: Vec<f64>,
    /// Window positions where a new segment begins; the first is always 0.
    /// Smoothing and peak thresholds are applied per segment.
    pub segment_starts: Vec<usize>,
}

impl ConfidenceSignal {
    pub fn new(window_starts: Vec<usize>, det_scores: Vec<f64>, dir_scores: Vec<f64>) -> Result<Self> {
        let s = ConfidenceSignal {
            window_starts,
            det_scores,
            dir_scores,
            segment_starts: vec![0],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_segments(mut self, segment_starts: Vec<usize>) -> Result<Self> {
        self.segment_starts = segment_starts;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.det_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.det_scores.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.window_starts.len();
        if self.det_scores.len() != n || self.dir_scores.len() != n {
            return Err(Error::Shape(format!(
                "signal arrays differ in length: {n} starts, {} det, {} dir",
                self.det_scores.len(),
                self.dir_scores.len()
            )));
        }
        if let Some(bad) = self
            .det_scores
            .iter()
            .chain(&self.dir_scores)
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!("score {bad} outside [0, 1]")));
        }
        if let [first, second, ..] = self.window_starts[..] {
            let step = second.checked_sub(first).filter(|s| *s > 0);
            let Some(step) = step else {
                return Err(Error::InvalidArgument("window starts must ascend".into()));
            };
            if self.window_starts.windows(2).any(|w| w[1] != w[0] + step) {
                return Err(Error::InvalidArgument("window starts must be evenly spaced".into()));
            }
        }
        if self.segment_starts.first() != Some(&0)
            || self.segment_starts.windows(2).any(|w| w[1] <= w[0])
            || self.segment_starts.last().is_some_and(|&s| s > 0 && s >= n)
        {
            return Err(Error::InvalidArgument("segment starts must ascend from 0 inside the signal".into()));
        }
        Ok(())
    }

    fn segments(&self) -> Vec<std::ops::Range<usize>> {
        let n = self.len();
        let mut bounds = self.segment_starts.clone();
        bounds.push(n);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }
}

/// Runs the model in eval mode over every window of `stream`.
pub fn confidence_signal(params: &ModelParams, stream: &LabeledFrameStream, spec: &WindowSpec) -> Result<ConfidenceSignal> {
    scores_over_windows(params, stream, spec, None)
}

/// As [`confidence_signal`], with the frames of every window permuted by
/// a generator seeded from `seed` (temporal-order ablation).
pub fn confidence_signal_shuffled(params: &ModelParams, stream: &LabeledFrameStream, spec: &WindowSpec, seed: u64) -> Result<ConfidenceSignal> {
    scores_over_windows(params, stream, spec, Some(seed))
}

fn scores_over_windows(params: &ModelParams, stream: &LabeledFrameStream, spec: &WindowSpec, shuffle: Option<u64>) -> Result<ConfidenceSignal> {
    let mut rng = shuffle.map(ChaCha8Rng::seed_from_u64);
    if stream.feature_dim() != params.dims.feature_dim {
        return Err(Error::Shape(format!(
            "stream has {} features per frame, model expects {}",
            stream.feature_dim(),
            params.dims.feature_dim
        )));
    }
    let windows = stream.windows(spec);
    let mut starts = Vec::with_capacity(windows.len());
    let mut det = Vec::with_capacity(windows.len());
    let mut dir = Vec::with_capacity(windows.len());
    for w in &windows {
        let mut features = stream.window_features(w);
        if let Some(rng) = rng.as_mut() {
            shuffle_window_frames(&mut features, params.dims.feature_dim, rng);
        }
        let out = forward(&features, params, Mode::Eval)?.output;
        if !out.p_det.is_finite() || !out.p_dir[1].is_finite() {
            return Err(Error::NumericOverflow(format!("non-finite score at window {}", w.start)));
        }
        starts.push(w.start);
        det.push(out.p_det);
        dir.push(out.p_dir[1]);
    }
    ConfidenceSignal::new(starts, det, dir)
}

/// Ground-truth intervals: for each event, the windows whose extent
/// intersects its frames. Events no window touches are dropped.
pub fn gt_intervals(window_starts: &[usize], spec: &WindowSpec, events: &[PlantedEvent]) -> Vec<GtEventInterval> {
    let extent = spec.extent();
    let mut out = Vec::new();
    for e in events {
        let hits: Vec<usize> = window_starts
            .iter()
            .enumerate()
            .filter(|(_, &t)| t <= e.end && t + extent > e.start)
            .map(|(k, _)| k)
            .collect();
        if let (Some(&first), Some(&last)) = (hits.first(), hits.last()) {
            out.push(GtEventInterval {
                first,
                last,
                direction: e.direction,
            });
        }
    }
    out.sort_by_key(|iv| iv.first);
    out
}

/// Parameters of the evaluation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub sigma: f64,
    pub kernel_size: usize,
    pub min_height: f64,
    pub prominence_frac: f64,
    /// Matching tolerance in windows.
    pub tolerance: usize,
    /// `σ_dir = max(sigma_dir_min, len / sigma_dir_divisor)`.
    pub sigma_dir_divisor: f64,
    pub sigma_dir_min: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            sigma: 3.0,
            kernel_size: 15,
            min_height: 0.1,
            prominence_frac: 0.01,
            tolerance: 2,
            sigma_dir_divisor: 4.0,
            sigma_dir_min: 1.0,
        }
    }
}

impl EvalParams {
    pub fn sigma_dir(&self, len: usize) -> f64 {
        (len as f64 / self.sigma_dir_divisor).max(self.sigma_dir_min)
    }

    pub fn validate(&self) -> Result<()> {
        gaussian_kernel(self.sigma, self.kernel_size)?;
        if !(self.sigma_dir_divisor > 0.0) || !(self.sigma_dir_min > 0.0) {
            return Err(Error::InvalidArgument("sigma_dir rule needs positive divisor and minimum".into()));
        }
        if !self.min_height.is_finite() || !(self.prominence_frac >= 0.0) {
            return Err(Error::InvalidArgument("peak thresholds must be finite, prominence >= 0".into()));
        }
        Ok(())
    }
}

/// Pipeline output for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvaluation {
    pub smoothed: Vec<f64>,
    pub peaks: Vec<Peak>,
    pub matches: EventMatchResult,
    pub directions: Vec<DirectionAggregate>,
}

/// Smoothing and peak picking per segment, peak indices in signal positions.
pub fn detect_peaks(signal: &ConfidenceSignal, params: &EvalParams) -> Result<(Vec<f64>, Vec<Peak>)> {
    let mut smoothed = Vec::with_capacity(signal.len());
    let mut peaks = Vec::new();
    for seg in signal.segments() {
        let offset = seg.start;
        let s = smooth(&signal.det_scores[seg], params.sigma, params.kernel_size)?;
        for mut p in find_peaks(&s, params.min_height, params.prominence_frac) {
            p.index += offset;
            peaks.push(p);
        }
        smoothed.extend(s);
    }
    Ok((smoothed, peaks))
}

pub fn evaluate_stream(signal: &ConfidenceSignal, intervals: &[GtEventInterval], params: &EvalParams) -> Result<StreamEvaluation> {
    signal.validate()?;
    params.validate()?;
    let (smoothed, peaks) = detect_peaks(signal, params)?;
    let indices: Vec<usize> = peaks.iter().map(|p| p.index).collect();
    let matches = match_events(&indices, intervals, params.tolerance)?;
    let directions = intervals
        .iter()
        .map(|iv| aggregate_direction(&signal.dir_scores, iv, params.sigma_dir(iv.len())))
        .collect::<Result<Vec<_>>>()?;
    Ok(StreamEvaluation {
        smoothed,
        peaks,
        matches,
        directions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub name: String,
    pub num_windows: usize,
    pub num_events: usize,
    pub num_peaks: usize,
    pub detection: DetectionCounts,
}

/// Metrics over a set of streams; serialized as the metrics JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub num_streams: usize,
    pub num_events: usize,
    pub counts: DetectionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_receives: f64,
    pub f1_gives: f64,
    pub mean_f1: f64,
    /// Rows true `[Receives, Gives]`, columns predicted.
    pub confusion: [[usize; 2]; 2],
    pub normalized_confusion: [[f64; 2]; 2],
    pub streams: Vec<StreamSummary>,
}

/// Evaluates each `(name, signal, intervals)` and pools the counts and the
/// per-event direction predictions in input order.
pub fn evaluate(inputs: &[(String, ConfidenceSignal, Vec<GtEventInterval>)], params: &EvalParams) -> Result<(EvaluationReport, Vec<StreamEvaluation>)> {
    let mut counts = DetectionCounts::default();
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut streams = Vec::new();
    let mut evals = Vec::new();
    for (name, signal, intervals) in inputs {
        let ev = evaluate_stream(signal, intervals, params)?;
        let c = DetectionCounts::from(&ev.matches);
        counts.add(c);
        predicted.extend(ev.directions.iter().map(|d| d.predicted));
        truth.extend(intervals.iter().map(|iv| iv.direction));
        streams.push(StreamSummary {
            name: name.clone(),
            num_windows: signal.len(),
            num_events: intervals.len(),
            num_peaks: ev.peaks.len(),
            detection: c,
        });
        evals.push(ev);
    }
    let det = detection_metrics(counts);
    let dir = direction_metrics(&predicted, &truth)?;
    let report = EvaluationReport {
        num_streams: inputs.len(),
        num_events: truth.len(),
        counts,
        precision: det.precision,
        recall: det.recall,
        f1: det.f1,
        f1_receives: dir.f1_receives,
        f1_gives: dir.f1_gives,
        mean_f1: dir.mean_f1,
        confusion: dir.confusion,
        normalized_confusion: dir.normalized_confusion,
        streams,
    };
    Ok((report, evals))
}

/// Ground-truth sidecar of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub num_frames: usize,
    pub events: Vec<PlantedEvent>,
}

impl GroundTruth {
    /// Recovers events as maximal runs of equal handover labels.
    pub fn from_labels(labels: &[FrameLabel]) -> Self {
        let mut events = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            if labels[i].is_handover() {
                let start = i;
                while i + 1 < labels.len() && labels[i + 1] == labels[start] {
                    i += 1;
                }
                events.push(PlantedEvent {
                    start,
                    end: i,
                    direction: labels[start],
                });
            }
            i += 1;
        }
        GroundTruth {
            num_frames: labels.len(),
            events,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Writes `window_start,det_score,dir_score_gives` rows.
pub fn write_predictions_csv<W: Write>(signal: &ConfidenceSignal, out: W) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "window_start,det_score,dir_score_gives")?;
    for i in 0..signal.len() {
        writeln!(out, "{},{},{}", signal.window_starts[i], signal.det_scores[i], signal.dir_scores[i])?;
    }
    out.flush()
}

pub fn save_predictions_csv(signal: &ConfidenceSignal, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions_csv(signal, f).map_err(|e| Error::io(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<ConfidenceSignal> {
    #[derive(Deserialize)]
    struct Row {
        window_start: usize,
        det_score: f64,
        dir_score_gives: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let (mut starts, mut det, mut dir) = (Vec::new(), Vec::new(), Vec::new());
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        starts.push(row.window_start);
        det.push(row.det_score);
        dir.push(row.dir_score_gives);
    }
    ConfidenceSignal::new(starts, det, dir)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        _ => Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
    }
}
