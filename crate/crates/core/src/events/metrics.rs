use serde::{Deserialize, Serialize};

use super::matching::{EventMatchResult, GtEventInterval};
use crate::error::{Error, Result};
use crate::windowing::FrameLabel;

/// Detection counts, summable across streams.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl DetectionCounts {
    pub fn add(&mut self, other: DetectionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

impl From<&EventMatchResult> for DetectionCounts {
    fn from(r: &EventMatchResult) -> Self {
        DetectionCounts {
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1; every `0/0` is taken as 0.
pub fn detection_metrics(counts: DetectionCounts) -> DetectionMetrics {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_);
    DetectionMetrics { precision, recall, f1 }
}

/// Aggregated direction for one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionAggregate {
    pub p_gives: f64,
    pub predicted: FrameLabel,
}

/// Width of the aggregation Gaussian for an interval of `len` windows.
pub fn sigma_dir(len: usize) -> f64 {
    (len as f64 / 4.0).max(1.0)
}

/// Gaussian-weighted mean of `dir_scores` (p(Gives) per window) over the
/// interval, centred at its midpoint. Predicts `Gives` iff the mean is >= 0.5.
pub fn aggregate_direction(dir_scores: &[f64], interval: &GtEventInterval, sigma: f64) -> Result<DirectionAggregate> {
    if interval.first > interval.last || interval.last >= dir_scores.len() {
        return Err(Error::InvalidArgument(format!(
            "interval [{}, {}] holds no windows of a {}-window signal",
            interval.first,
            interval.last,
            dir_scores.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_dir {sigma} must be > 0")));
    }
    let centre = (interval.first + interval.last) as f64 / 2.0;
    let mut weight_sum = 0.0;
    let mut acc = 0.0;
    for (i, score) in dir_scores.iter().enumerate().take(interval.last + 1).skip(interval.first) {
        let d = i as f64 - centre;
        let w = (-d * d / (2.0 * sigma * sigma)).exp();
        weight_sum += w;
        acc += w * score;
    }
    let p_gives = acc / weight_sum;
    let predicted = if p_gives >= 0.5 { FrameLabel::Gives } else { FrameLabel::Receives };
    Ok(DirectionAggregate { p_gives, predicted })
}

/// Direction metrics. Rows of the confusion matrix are true classes,
/// columns predicted, both ordered `[Receives, Gives]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub predictions: Vec<FrameLabel>,
    pub confusion: [[usize; 2]; 2],
    pub normalized_confusion: [[f64; 2]; 2],
    pub f1_receives: f64,
    pub f1_gives: f64,
    pub mean_f1: f64,
}

pub fn direction_metrics(predictions: &[FrameLabel], truths: &[FrameLabel]) -> Result<DirectionResult> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (p, t) in predictions.iter().zip(truths) {
        let (Some(pi), Some(ti)) = (p.direction_index(), t.direction_index()) else {
            return Err(Error::InvalidArgument("direction labels must be Receives or Gives".into()));
        };
        confusion[ti][pi] += 1;
    }
    let mut normalized_confusion = [[0.0; 2]; 2];
    for r in 0..2 {
        let total = confusion[r][0] + confusion[r][1];
        for c in 0..2 {
            normalized_confusion[r][c] = ratio(confusion[r][c], total);
        }
    }
    let f1 = |c: usize| {
        let o = 1 - c;
        ratio(2 * confusion[c][c], 2 * confusion[c][c] + confusion[o][c] + confusion[c][o])
    };
    let f1_receives = f1(0);
    let f1_gives = f1(1);
    Ok(DirectionResult {
        predictions: predictions.to_vec(),
        confusion,
        normalized_confusion,
        f1_receives,
        f1_gives,
        mean_f1: (f1_receives + f1_gives) / 2.0,
    })
}
