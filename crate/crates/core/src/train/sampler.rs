//! Class-weighted window sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::FrameLabel;

/// Probability of drawing each training class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerProbs {
    pub idle: f64,
    pub receives: f64,
    pub gives: f64,
}

impl Default for SamplerProbs {
    fn default() -> Self {
        SamplerProbs {
            idle: 0.6,
            receives: 0.2,
            gives: 0.2,
        }
    }
}

impl SamplerProbs {
    pub fn of(&self, label: FrameLabel) -> f64 {
        match label {
            FrameLabel::Idle => self.idle,
            FrameLabel::Receives => self.receives,
            FrameLabel::Gives => self.gives,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.idle, self.receives, self.gives];
        if all.iter().any(|p| !(*p >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("sampler probabilities must be >= 0 and sum to 1: {self:?}")));
        }
        Ok(())
    }
}

/// Window indices grouped by training label, indexed by `FrameLabel::index()`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassPools {
    pub pools: [Vec<usize>; 3],
}

impl ClassPools {
    pub fn from_labels(labels: impl IntoIterator<Item = FrameLabel>) -> Self {
        let mut pools: [Vec<usize>; 3] = Default::default();
        for (i, label) in labels.into_iter().enumerate() {
            pools[label.index()].push(i);
        }
        ClassPools { pools }
    }

    pub fn len(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `batch_size` window indices: each slot picks a class from `probs`,
/// then a window uniformly within that class, with replacement.
pub fn sample_batch<R: Rng>(pools: &ClassPools, probs: &SamplerProbs, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    probs.validate()?;
    for label in FrameLabel::ALL {
        if probs.of(label) > 0.0 && pools.pools[label.index()].is_empty() {
            return Err(Error::InvalidArgument(format!(
                "class {label} has sampling probability {} but no windows",
                probs.of(label)
            )));
        }
    }
    // Idle, Receives, Gives
    let order = [FrameLabel::Idle, FrameLabel::Receives, FrameLabel::Gives];
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for label in order {
            acc += probs.of(label);
            if u < acc && probs.of(label) > 0.0 {
                chosen = Some(label);
                break;
            }
        }
        // rounding in the cumulative sum: fall back to the last positive class
        let label = chosen.unwrap_or_else(|| *order.iter().rev().find(|l| probs.of(**l) > 0.0).expect("probs sum to 1"));
        let pool = &pools.pools[label.index()];
        batch.push(pool[rng.random_range(0..pool.len())]);
    }
    Ok(batch)
}
