use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AttributionMethod, RunConfig};
use crate::attribution::{grad_x_input, heat_strip_svg, integrated_gradients_zero, save_attribution_csv, window_embeddings, AttributionMap};
use crate::error::{Error, Result};
use crate::events::{
    confidence_signal, confidence_signal_shuffled, detect_peaks, evaluate, gt_intervals, read_predictions_csv,
    save_predictions_csv, trace_svg, ConfidenceSignal, EvaluationReport, GroundTruth, GtEventInterval, Peak,
};
use crate::net::{load_checkpoint, save_checkpoint, ModelDims, ModelParams};
use crate::synth::generate_dataset;
use crate::train::{save_history_csv, train};
use crate::windowing::{read_stream, write_stream_csv, write_stream_jsonl, FrameLabel, LabeledFrameStream, StreamFormat};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "model.ckpt";
pub const HISTORY: &str = "history.csv";
pub const TRAIN_SUMMARY: &str = "train.json";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub name: String,
    pub file: String,
    pub events: String,
    pub num_frames: usize,
    pub num_events: usize,
    pub receives: usize,
    pub gives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub pattern_seed: u64,
    pub feature_dim: usize,
    pub format: StreamFormat,
    pub num_streams: usize,
    pub total_events: usize,
    pub streams: Vec<StreamEntry>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates the synthetic dataset into `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    create_dir(out)?;
    let synth = cfg.synth_config();
    let data = generate_dataset(&synth)?;
    let mut streams = Vec::with_capacity(data.len());
    for (i, (stream, events)) in data.iter().enumerate() {
        let name = format!("stream_{i:03}");
        let file = format!("{name}.{}", cfg.stream_format.extension());
        let events_file = format!("{name}.events.json");
        match cfg.stream_format {
            StreamFormat::Jsonl => write_stream_jsonl(stream, &out.join(&file))?,
            StreamFormat::Csv => write_stream_csv(stream, &out.join(&file))?,
        }
        GroundTruth {
            num_frames: stream.num_frames(),
            events: events.clone(),
        }
        .write(&out.join(&events_file))?;
        let count = |l: FrameLabel| events.iter().filter(|e| e.direction == l).count();
        streams.push(StreamEntry {
            name,
            file,
            events: events_file,
            num_frames: stream.num_frames(),
            num_events: events.len(),
            receives: count(FrameLabel::Receives),
            gives: count(FrameLabel::Gives),
        });
    }
    let manifest = Manifest {
        seed: synth.seed,
        pattern_seed: synth.pattern_seed,
        feature_dim: synth.feature_dim,
        format: cfg.stream_format,
        num_streams: streams.len(),
        total_events: streams.iter().map(|s| s.num_events).sum(),
        streams,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// A dataset directory loaded through its manifest.
pub struct Dataset {
    pub manifest: Manifest,
    pub streams: Vec<LabeledFrameStream>,
    pub truths: Vec<GroundTruth>,
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut streams = Vec::new();
    let mut truths = Vec::new();
    for entry in &manifest.streams {
        let stream = read_stream(&dir.join(&entry.file))?;
        let truth = GroundTruth::read(&dir.join(&entry.events))?;
        if truth.num_frames != stream.num_frames() {
            return Err(Error::InvalidArgument(format!(
                "{}: {} frames, sidecar says {}",
                entry.file,
                stream.num_frames(),
                truth.num_frames
            )));
        }
        streams.push(stream);
        truths.push(truth);
    }
    Ok(Dataset {
        manifest,
        streams,
        truths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub num_streams: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub dir_class_weights: [f64; 2],
    pub final_train_total: Option<f64>,
    pub best_val_total: Option<f64>,
}

/// Trains on every stream of `data` and writes checkpoint, history and summary to `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainSummary> {
    let dataset = load_dataset(data)?;
    create_dir(out)?;
    let feature_dim = dataset.streams.first().map_or(cfg.synth.feature_dim, |s| s.feature_dim());
    let dims = ModelDims::new(feature_dim, cfg.embedding_dim, cfg.hidden_dim)?;
    let tc = cfg.train_config();
    let outcome = train(&dataset.streams, &cfg.window, dims, &tc)?;
    let params = outcome.params.with_gate_layout(cfg.gate_layout);
    save_checkpoint(&out.join(CHECKPOINT), &params, tc.seed)?;
    save_history_csv(&out.join(HISTORY), &outcome.history)?;
    let summary = TrainSummary {
        seed: tc.seed,
        num_streams: dataset.streams.len(),
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        dir_class_weights: outcome.dir_class_weights,
        final_train_total: outcome.history.last().map(|r| r.train_total),
        best_val_total: outcome
            .best_epoch
            .and_then(|e| outcome.history.iter().find(|r| r.epoch == e))
            .map(|r| r.val_total),
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

fn load_model(checkpoint: &Path, feature_dim: usize) -> Result<ModelParams> {
    let (params, _) = load_checkpoint(checkpoint)?;
    if params.dims.feature_dim != feature_dim {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features per frame, data has {feature_dim}",
            params.dims.feature_dim
        )));
    }
    Ok(params)
}

/// Signal, intervals and name of every stream in `dataset`.
pub fn score_dataset(cfg: &RunConfig, params: &ModelParams, dataset: &Dataset) -> Result<Vec<(String, ConfidenceSignal, Vec<GtEventInterval>)>> {
    let mut inputs = Vec::with_capacity(dataset.streams.len());
    for (i, (stream, truth)) in dataset.streams.iter().zip(&dataset.truths).enumerate() {
        let signal = if cfg.eval_shuffle_frames {
            confidence_signal_shuffled(params, stream, &cfg.window, cfg.seed.wrapping_add(i as u64))?
        } else {
            confidence_signal(params, stream, &cfg.window)?
        };
        let intervals = gt_intervals(&signal.window_starts, &cfg.window, &truth.events);
        inputs.push((dataset.manifest.streams[i].name.clone(), signal, intervals));
    }
    Ok(inputs)
}

/// Scores every stream, runs the event pipeline and writes metrics,
/// per-stream predictions and, with `plot`, per-stream SVG traces.
pub fn cmd_eval(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path, plot: bool) -> Result<EvaluationReport> {
    let dataset = load_dataset(data)?;
    let params = load_model(checkpoint, dataset.manifest.feature_dim)?;
    let inputs = score_dataset(cfg, &params, &dataset)?;
    let (report, evals) = evaluate(&inputs, &cfg.eval)?;
    let pred_dir = out.join("predictions");
    create_dir(&pred_dir)?;
    for (name, signal, _) in &inputs {
        save_predictions_csv(signal, &pred_dir.join(format!("{name}.csv")))?;
    }
    if plot {
        let plot_dir = out.join("plots");
        create_dir(&plot_dir)?;
        for ((name, signal, intervals), ev) in inputs.iter().zip(&evals) {
            let path = plot_dir.join(format!("{name}.svg"));
            let svg = trace_svg(signal, &ev.smoothed, &ev.peaks, intervals, name);
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        }
    }
    write_json(&out.join(METRICS), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub index: usize,
    pub window_start: usize,
    pub height: f64,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOutput {
    pub detections: Vec<Detection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvaluationReport>,
}

fn intervals_for(cfg: &RunConfig, signal: &ConfidenceSignal, events: Option<&Path>) -> Result<Option<Vec<GtEventInterval>>> {
    events
        .map(|p| Ok(gt_intervals(&signal.window_starts, &cfg.window, &GroundTruth::read(p)?.events)))
        .transpose()
}

/// Peaks of a predictions CSV; with a ground-truth sidecar, also metrics.
pub fn cmd_detect(cfg: &RunConfig, predictions: &Path, events: Option<&Path>, out: &Path) -> Result<DetectOutput> {
    let signal = read_predictions_csv(predictions)?;
    let (_, peaks) = detect_peaks(&signal, &cfg.eval)?;
    let detections = peaks
        .iter()
        .map(|p: &Peak| Detection {
            index: p.index,
            window_start: signal.window_starts[p.index],
            height: p.height,
            prominence: p.prominence,
        })
        .collect();
    let metrics = match intervals_for(cfg, &signal, events)? {
        Some(intervals) => {
            let name = predictions.file_stem().map_or("stream".into(), |s| s.to_string_lossy().into_owned());
            Some(evaluate(&[(name, signal, intervals)], &cfg.eval)?.0)
        }
        None => None,
    };
    let output = DetectOutput { detections, metrics };
    write_json(out, &output)?;
    Ok(output)
}

/// SVG trace of a predictions CSV, shading ground truth when given.
pub fn cmd_plot(cfg: &RunConfig, predictions: &Path, events: Option<&Path>, out: &Path) -> Result<()> {
    let signal = read_predictions_csv(predictions)?;
    let intervals = intervals_for(cfg, &signal, events)?.unwrap_or_default();
    let (smoothed, peaks) = detect_peaks(&signal, &cfg.eval)?;
    let title = predictions.file_name().map_or(String::new(), |s| s.to_string_lossy().into_owned());
    let svg = trace_svg(&signal, &smoothed, &peaks, &intervals, &title);
    fs::write(out, svg).map_err(|e| Error::io(out, e))
}

/// `<stream>:<window>` where stream is a manifest name or index and window
/// is the window's position in that stream.
pub fn parse_window_id(id: &str, manifest: &Manifest) -> Result<(usize, usize)> {
    let (s, w) = id
        .rsplit_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("window id {id:?} is not <stream>:<window>")))?;
    let stream = manifest
        .streams
        .iter()
        .position(|e| e.name == s)
        .or_else(|| s.parse::<usize>().ok().filter(|i| *i < manifest.streams.len()))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown stream {s:?}")))?;
    let window = w
        .parse::<usize>()
        .map_err(|_| Error::InvalidArgument(format!("bad window index {w:?}")))?;
    Ok((stream, window))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeOutput {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub window_start: usize,
    pub completeness_error: f64,
}

/// Attribution map of one window, written as CSV and SVG heat strip.
pub fn cmd_attribute(cfg: &RunConfig, data: &Path, checkpoint: &Path, window_id: &str, out: &Path) -> Result<(AttributionMap, AttributeOutput)> {
    let dataset = load_dataset(data)?;
    let params = load_model(checkpoint, dataset.manifest.feature_dim)?;
    let (s, k) = parse_window_id(window_id, &dataset.manifest)?;
    let stream = &dataset.streams[s];
    let windows = stream.windows(&cfg.window);
    let window = windows.get(k).ok_or_else(|| {
        Error::InvalidArgument(format!("stream {s} has {} windows, no window {k}", windows.len()))
    })?;
    let embeddings = window_embeddings(&params, &stream.window_features(window))?;
    let map = match cfg.attribution_method {
        AttributionMethod::Ig => integrated_gradients_zero(&params, &embeddings, cfg.attribution_steps, cfg.attribution_target)?,
        AttributionMethod::Gxi => grad_x_input(&params, &embeddings, cfg.attribution_target)?,
    };
    create_dir(out)?;
    let stem = format!("{}_w{k:05}", dataset.manifest.streams[s].name);
    let csv = out.join(format!("{stem}.attribution.csv"));
    let svg = out.join(format!("{stem}.attribution.svg"));
    save_attribution_csv(&map, &csv)?;
    let title = format!("{} window {k} (start {})", dataset.manifest.streams[s].name, window.start);
    fs::write(&svg, heat_strip_svg(&map, &title)).map_err(|e| Error::io(&svg, e))?;
    let info = AttributeOutput {
        csv,
        svg,
        window_start: window.start,
        completeness_error: map.completeness_error(),
    };
    Ok((map, info))
}
