//! Multi-task objective.
//!
//! `L = lambda_det * mean_all(WBCE) + lambda_dir * mean_pos(WCE)`, where the
//! direction term averages over samples whose detection label is positive
//! and is zero when a batch has none.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{HeadGrad, HeadOutput};
use crate::windowing::FrameLabel;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_pos: f64,
    /// Weights of `[Receives, Gives]` in the direction cross-entropy.
    pub dir_class_weights: [f64; 2],
    pub lambda_det: f64,
    pub lambda_dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_pos: 1.5,
            dir_class_weights: [1.0, 1.0],
            lambda_det: 2.5,
            lambda_dir: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_pos,
            self.dir_class_weights[0],
            self.dir_class_weights[1],
            self.lambda_det,
            self.lambda_dir,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Weighted binary cross-entropy and its derivative w.r.t. `p`.
pub fn wbce(p: f64, y: bool, w_pos: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    if y {
        (-w_pos * p.ln(), -w_pos / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}

/// Weighted cross-entropy of the direction head and its gradient w.r.t. the
/// two direction logits. `class` is 0 for `Receives`, 1 for `Gives`.
pub fn wce_dir(p_dir: [f64; 2], class: usize, weights: [f64; 2]) -> (f64, [f64; 2]) {
    let w = weights[class];
    let loss = -w * clamp_prob(p_dir[class]).ln();
    let mut grad = [w * p_dir[0], w * p_dir[1]];
    grad[class] -= w;
    (loss, grad)
}

/// Per-head batch losses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean WBCE over the batch (before `lambda_det`).
    pub det: f64,
    /// Mean WCE over positive samples (before `lambda_dir`), 0 without positives.
    pub dir: f64,
    pub num_samples: usize,
    pub num_positive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub breakdown: LossBreakdown,
    /// Gradient of the total loss w.r.t. each sample's head logits.
    pub head_grads: Vec<HeadGrad>,
}

/// Total loss over a batch of head outputs with their window training labels.
pub fn total_loss(outputs: &[HeadOutput], labels: &[FrameLabel], weights: &LossWeights) -> Result<BatchLoss> {
    if outputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if outputs.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", outputs.len(), labels.len())));
    }
    let n = outputs.len() as f64;
    let num_positive = labels.iter().filter(|l| l.is_handover()).count();
    let mut det_sum = 0.0;
    let mut dir_sum = 0.0;
    let mut head_grads = Vec::with_capacity(outputs.len());
    for (out, &label) in outputs.iter().zip(labels) {
        let (l_det, g_p) = wbce(out.p_det, label.is_handover(), weights.w_pos);
        det_sum += l_det;
        let p = out.p_det;
        let mut grad = HeadGrad {
            det_logit: weights.lambda_det / n * g_p * p * (1.0 - p),
            dir_logits: [0.0, 0.0],
        };
        if let Some(class) = label.direction_index() {
            let (l_dir, g_dir) = wce_dir(out.p_dir, class, weights.dir_class_weights);
            dir_sum += l_dir;
            let scale = weights.lambda_dir / num_positive as f64;
            grad.dir_logits = [scale * g_dir[0], scale * g_dir[1]];
        }
        head_grads.push(grad);
    }
    let det = det_sum / n;
    let dir = if num_positive > 0 { dir_sum / num_positive as f64 } else { 0.0 };
    Ok(BatchLoss {
        breakdown: LossBreakdown {
            total: weights.lambda_det * det + weights.lambda_dir * dir,
            det,
            dir,
            num_samples: outputs.len(),
            num_positive,
        },
        head_grads,
    })
}

/// Inverse class frequency over the handover labels, `n_pos / (2 n_c)`.
/// A class that never occurs gets weight 1.
pub fn inverse_frequency_weights(labels: impl IntoIterator<Item = FrameLabel>) -> [f64; 2] {
    let mut counts = [0usize; 2];
    for label in labels {
        if let Some(c) = label.direction_index() {
            counts[c] += 1;
        }
    }
    let total = (counts[0] + counts[1]) as f64;
    counts.map(|c| if c == 0 { 1.0 } else { total / (2.0 * c as f64) })
}
