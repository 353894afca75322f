//! Temporal windows over a labeled frame stream.
//!
//! A window starting at frame `t` samples `T` frames at stride `s_f`:
//! `t, t + s_f, ..., t + (T - 1) s_f`. Consecutive windows start `s_s`
//! frames apart. Each window carries two labels:
//!
//! * a training label, the majority class over the five central sampled
//!   frames (positions `2..=6` for `T = 8`);
//! * an evaluation label, positive when any raw frame of the window's
//!   temporal extent is a handover frame.

mod io;

pub use io::{read_stream, read_stream_csv, read_stream_jsonl, write_stream_csv, write_stream_jsonl, StreamFormat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame class. The discriminants match the on-disk label encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FrameLabel {
    /// Assistant receives an instrument.
    Receives = 0,
    /// Assistant gives an instrument.
    Gives = 1,
    /// No handover.
    Idle = 2,
}

impl FrameLabel {
    pub const ALL: [FrameLabel; 3] = [FrameLabel::Receives, FrameLabel::Gives, FrameLabel::Idle];

    pub fn is_handover(self) -> bool {
        !matches!(self, FrameLabel::Idle)
    }

    /// Index into the two-way direction head, `None` for `Idle`.
    pub fn direction_index(self) -> Option<usize> {
        match self {
            FrameLabel::Receives => Some(0),
            FrameLabel::Gives => Some(1),
            FrameLabel::Idle => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for FrameLabel {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            0 => Ok(FrameLabel::Receives),
            1 => Ok(FrameLabel::Gives),
            2 => Ok(FrameLabel::Idle),
            other => Err(Error::InvalidArgument(format!("label {other} not in {{0,1,2}}"))),
        }
    }
}

impl From<FrameLabel> for u8 {
    fn from(label: FrameLabel) -> u8 {
        label as u8
    }
}

impl std::fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FrameLabel::Receives => "receives",
            FrameLabel::Gives => "gives",
            FrameLabel::Idle => "idle",
        };
        f.write_str(name)
    }
}

/// Window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub frames_per_window: usize,
    pub frame_stride: usize,
    pub sequence_stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            frames_per_window: 8,
            frame_stride: 4,
            sequence_stride: 2,
        }
    }
}

impl WindowSpec {
    pub fn new(frames_per_window: usize, frame_stride: usize, sequence_stride: usize) -> Result<Self> {
        let spec = WindowSpec {
            frames_per_window,
            frame_stride,
            sequence_stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_window < 2 {
            return Err(Error::InvalidArgument("frames_per_window must be >= 2".into()));
        }
        if self.frame_stride < 1 || self.sequence_stride < 1 {
            return Err(Error::InvalidArgument("strides must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of raw frames covered by one window, `(T - 1) s_f + 1`.
    pub fn extent(&self) -> usize {
        (self.frames_per_window - 1) * self.frame_stride + 1
    }

    pub fn sampled_indices(&self, start: usize) -> Vec<usize> {
        (0..self.frames_per_window).map(|k| start + k * self.frame_stride).collect()
    }

    /// Sampled positions that take part in the training-label vote.
    pub fn vote_positions(&self) -> std::ops::Range<usize> {
        let t = self.frames_per_window;
        if t <= 5 {
            0..t
        } else {
            let lo = (t - 4) / 2;
            lo..lo + 5
        }
    }
}

/// One model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub sampled_indices: Vec<usize>,
    pub train_label: FrameLabel,
    pub det_label: bool,
    pub eval_positive: bool,
}

impl Window {
    /// Builds the window starting at `start`, deriving both labels from `labels`.
    pub fn build(labels: &[FrameLabel], start: usize, spec: &WindowSpec) -> Result<Self> {
        let sampled_indices = spec.sampled_indices(start);
        if start + spec.extent() > labels.len() {
            return Err(Error::InvalidArgument(format!(
                "window at {start} needs {} frames, stream has {}",
                spec.extent(),
                labels.len()
            )));
        }
        let mut window = Window {
            start,
            sampled_indices,
            train_label: FrameLabel::Idle,
            det_label: false,
            eval_positive: false,
        };
        window.train_label = window_train_label(labels, &window, spec);
        window.det_label = derive_detection_label(window.train_label);
        window.eval_positive = window_eval_positive(labels, &window, spec);
        Ok(window)
    }
}

/// A video segment reduced to labels and per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrameStream {
    labels: Vec<FrameLabel>,
    features: Vec<f64>,
    feature_dim: usize,
    /// Source frame height and width, carried as metadata only.
    pub frame_dims: Option<(u32, u32)>,
}

impl LabeledFrameStream {
    /// `features` is row-major, `labels.len()` rows of `feature_dim` values.
    pub fn new(labels: Vec<FrameLabel>, features: Vec<f64>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Shape("feature_dim must be > 0".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::Shape(format!(
                "{} labels x {feature_dim} dims needs {} feature values, got {}",
                labels.len(),
                labels.len() * feature_dim,
                features.len()
            )));
        }
        Ok(LabeledFrameStream {
            labels,
            features,
            feature_dim,
            frame_dims: None,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> &[FrameLabel] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub(crate) fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn frame_features(&self, frame: usize) -> &[f64] {
        &self.features[frame * self.feature_dim..(frame + 1) * self.feature_dim]
    }

    /// Stacks the sampled frames of `window` into a `T x F` row-major matrix.
    pub fn window_features(&self, window: &Window) -> Vec<f64> {
        let mut out = Vec::with_capacity(window.sampled_indices.len() * self.feature_dim);
        for &frame in &window.sampled_indices {
            out.extend_from_slice(self.frame_features(frame));
        }
        out
    }

    /// All windows of the stream, labels derived.
    pub fn windows(&self, spec: &WindowSpec) -> Vec<Window> {
        enumerate_windows(self.num_frames(), spec)
            .into_iter()
            .map(|start| Window::build(&self.labels, start, spec).expect("enumerated start fits"))
            .collect()
    }
}

/// Start indices `0, s_s, 2 s_s, ...` of every window that fits in `num_frames`.
/// Permutes the rows (frames) of a `T x F` window matrix in place.
pub fn shuffle_window_frames<R: rand::Rng>(features: &mut [f64], feature_dim: usize, rng: &mut R) {
    use rand::seq::SliceRandom;
    let steps = features.len() / feature_dim;
    let mut order: Vec<usize> = (0..steps).collect();
    order.shuffle(rng);
    let original = features.to_vec();
    for (t, &src) in order.iter().enumerate() {
        features[t * feature_dim..(t + 1) * feature_dim].copy_from_slice(&original[src * feature_dim..(src + 1) * feature_dim]);
    }
}

pub fn enumerate_windows(num_frames: usize, spec: &WindowSpec) -> Vec<usize> {
    let extent = spec.extent();
    if num_frames < extent {
        return Vec::new();
    }
    (0..=num_frames - extent).step_by(spec.sequence_stride).collect()
}

/// Majority vote over the central sampled frames.
///
/// Ties: a handover class beats `Idle`; between `Receives` and `Gives` the
/// class that occurs first among the voted frames wins.
pub fn window_train_label(labels: &[FrameLabel], window: &Window, spec: &WindowSpec) -> FrameLabel {
    let voted: Vec<FrameLabel> = spec
        .vote_positions()
        .map(|k| labels[window.sampled_indices[k]])
        .collect();
    majority_label(&voted)
}

pub(crate) fn majority_label(voted: &[FrameLabel]) -> FrameLabel {
    let mut counts = [0usize; 3];
    for label in voted {
        counts[label.index()] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    let receives = counts[0] == best && best > 0;
    let gives = counts[1] == best && best > 0;
    match (receives, gives) {
        (true, false) => FrameLabel::Receives,
        (false, true) => FrameLabel::Gives,
        (false, false) => FrameLabel::Idle,
        (true, true) => voted
            .iter()
            .copied()
            .find(|l| l.is_handover())
            .unwrap_or(FrameLabel::Idle),
    }
}

/// Binary detection target: 1 for `Receives` and `Gives`.
pub fn derive_detection_label(label: FrameLabel) -> bool {
    label.is_handover()
}

/// Positive when any raw frame in the window's full temporal extent is a handover frame.
pub fn window_eval_positive(labels: &[FrameLabel], window: &Window, spec: &WindowSpec) -> bool {
    let end = (window.start + spec.extent()).min(labels.len());
    labels[window.start..end].iter().any(|l| l.is_handover())
}
