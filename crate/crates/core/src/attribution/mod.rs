//! Attribution of a window's head logits to its embedding sequence.
//!
//! Integrated gradients integrate the input gradient of one head logit
//! along the straight path from a baseline embedding sequence (zeros by
//! default) to the window's embeddings, using the midpoint rule.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{backward, forward_embeddings, project, HeadGrad, ModelParams};
use crate::svg::{diverging, Svg};
use crate::windowing::FrameLabel;

/// Logit being explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// Pre-sigmoid detection logit.
    Detection,
    /// Direction logit of `Receives` or `Gives`.
    Direction(FrameLabel),
}

impl Target {
    fn head_grad(self) -> Result<HeadGrad> {
        match self {
            Target::Detection => Ok(HeadGrad {
                det_logit: 1.0,
                dir_logits: [0.0; 2],
            }),
            Target::Direction(label) => {
                let k = label
                    .direction_index()
                    .ok_or_else(|| Error::InvalidArgument("direction target must be Receives or Gives".into()))?;
                let mut dir_logits = [0.0; 2];
                dir_logits[k] = 1.0;
                Ok(HeadGrad {
                    det_logit: 0.0,
                    dir_logits,
                })
            }
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Detection => f.write_str("det"),
            Target::Direction(FrameLabel::Gives) => f.write_str("dir:gives"),
            Target::Direction(_) => f.write_str("dir:receives"),
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    /// `det`, `dir:receives` or `dir:gives`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" => Ok(Target::Detection),
            "dir:receives" | "dir:0" => Ok(Target::Direction(FrameLabel::Receives)),
            "dir:gives" | "dir:1" => Ok(Target::Direction(FrameLabel::Gives)),
            other => Err(Error::Config(format!("unknown attribution target {other:?}"))),
        }
    }
}

/// Relevance of every embedding value of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub steps_in_window: usize,
    pub embedding_dim: usize,
    /// `T x D`, signed.
    pub relevance: Vec<f64>,
    /// Per-frame sum of `relevance`.
    pub frame: Vec<f64>,
    pub target: Target,
    pub baseline: String,
    /// Integration steps; 0 for gradient times input.
    pub steps: usize,
    /// Target logit at the input and at the baseline.
    pub logit_input: f64,
    pub logit_baseline: f64,
}

impl AttributionMap {
    fn build(relevance: Vec<f64>, d: usize, target: Target, baseline: &str, steps: usize, fx: f64, fb: f64) -> Self {
        let t = relevance.len() / d;
        let frame = (0..t).map(|k| relevance[k * d..(k + 1) * d].iter().sum()).collect();
        AttributionMap {
            steps_in_window: t,
            embedding_dim: d,
            relevance,
            frame,
            target,
            baseline: baseline.to_string(),
            steps,
            logit_input: fx,
            logit_baseline: fb,
        }
    }

    pub fn total(&self) -> f64 {
        self.relevance.iter().sum()
    }

    /// `Σ relevance − (F(E) − F(B))`
    pub fn completeness_error(&self) -> f64 {
        self.total() - (self.logit_input - self.logit_baseline)
    }
}

/// Target logit and its gradient w.r.t. the embedding sequence (`T x D`).
pub fn target_gradient(params: &ModelParams, embeddings: &[f64], target: Target) -> Result<(f64, Vec<f64>)> {
    let cache = forward_embeddings(embeddings, params, None)?;
    let value = match target {
        Target::Detection => cache.output.det_logit,
        Target::Direction(label) => {
            let k = label
                .direction_index()
                .ok_or_else(|| Error::InvalidArgument("direction target must be Receives or Gives".into()))?;
            cache.output.dir_logits[k]
        }
    };
    let grads = backward(&cache, params, target.head_grad()?)?;
    Ok((value, grads.embeddings))
}

pub fn target_logit(params: &ModelParams, embeddings: &[f64], target: Target) -> Result<f64> {
    Ok(target_gradient(params, embeddings, target)?.0)
}

fn check_embeddings(params: &ModelParams, e: &[f64]) -> Result<()> {
    let d = params.dims.embedding_dim;
    if e.is_empty() || e.len() % d != 0 {
        return Err(Error::Shape(format!("{} embedding values is not a T x {d} matrix", e.len())));
    }
    Ok(())
}

/// Embeddings of a window of features (`T x F`), no dropout.
pub fn window_embeddings(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    project(features, params, None)
}

/// Integrated gradients with `steps` midpoint samples along `B + α(E − B)`.
pub fn integrated_gradients(params: &ModelParams, embeddings: &[f64], baseline: &[f64], steps: usize, target: Target) -> Result<AttributionMap> {
    check_embeddings(params, embeddings)?;
    if baseline.len() != embeddings.len() {
        return Err(Error::Shape(format!(
            "baseline has {} values, embeddings {}",
            baseline.len(),
            embeddings.len()
        )));
    }
    if steps < 8 {
        return Err(Error::InvalidArgument(format!("integration needs >= 8 steps, got {steps}")));
    }
    let delta: Vec<f64> = embeddings.iter().zip(baseline).map(|(e, b)| e - b).collect();
    let mut acc = vec![0.0; embeddings.len()];
    let mut point = vec![0.0; embeddings.len()];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        for ((p, b), dv) in point.iter_mut().zip(baseline).zip(&delta) {
            *p = b + alpha * dv;
        }
        let (_, g) = target_gradient(params, &point, target)?;
        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv);
    }
    let relevance = acc.iter().zip(&delta).map(|(a, dv)| dv * a / steps as f64).collect();
    let fx = target_logit(params, embeddings, target)?;
    let fb = target_logit(params, baseline, target)?;
    let label = if baseline.iter().all(|v| *v == 0.0) { "zeros" } else { "custom" };
    Ok(AttributionMap::build(relevance, params.dims.embedding_dim, target, label, steps, fx, fb))
}

/// IG against the all-zero embedding sequence.
pub fn integrated_gradients_zero(params: &ModelParams, embeddings: &[f64], steps: usize, target: Target) -> Result<AttributionMap> {
    integrated_gradients(params, embeddings, &vec![0.0; embeddings.len()], steps, target)
}

/// `E ⊙ ∂F/∂E`
pub fn grad_x_input(params: &ModelParams, embeddings: &[f64], target: Target) -> Result<AttributionMap> {
    check_embeddings(params, embeddings)?;
    let (fx, g) = target_gradient(params, embeddings, target)?;
    let fb = target_logit(params, &vec![0.0; embeddings.len()], target)?;
    let relevance = embeddings.iter().zip(&g).map(|(e, gv)| e * gv).collect();
    Ok(AttributionMap::build(relevance, params.dims.embedding_dim, target, "zeros", 0, fx, fb))
}

/// Per-frame relevance summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRelevance {
    pub signed: Vec<f64>,
    pub absolute: Vec<f64>,
}

pub fn frame_relevance(map: &AttributionMap) -> FrameRelevance {
    let d = map.embedding_dim;
    let rows = map.relevance.chunks(d);
    FrameRelevance {
        signed: rows.clone().map(|r| r.iter().sum()).collect(),
        absolute: rows.map(|r| r.iter().map(|v| v.abs()).sum()).collect(),
    }
}

/// `frame,dim,relevance` rows followed by `#` comment lines with the target,
/// the relevance total and the completeness check.
pub fn write_attribution_csv<W: Write>(map: &AttributionMap, out: W) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "frame,dim,relevance")?;
    for (i, v) in map.relevance.iter().enumerate() {
        writeln!(out, "{},{},{}", i / map.embedding_dim, i % map.embedding_dim, v)?;
    }
    writeln!(out, "# target={} baseline={} steps={}", map.target, map.baseline, map.steps)?;
    writeln!(out, "# sum_relevance={}", map.total())?;
    writeln!(out, "# logit_input={} logit_baseline={}", map.logit_input, map.logit_baseline)?;
    writeln!(out, "# completeness_error={}", map.completeness_error())?;
    out.flush()
}

pub fn save_attribution_csv(map: &AttributionMap, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_attribution_csv(map, f).map_err(|e| Error::io(path, e))
}

/// Frames left to right, dimensions top to bottom, then a row of frame sums.
/// Colours are scaled by the largest magnitude in each block.
pub fn heat_strip_svg(map: &AttributionMap, title: &str) -> String {
    let (t, d) = (map.steps_in_window, map.embedding_dim);
    let cell = 24.0;
    let (left, top) = (40.0, 30.0);
    let mut svg = Svg::new(left + cell * t as f64 + 20.0, top + cell * (d as f64 + 1.5) + 20.0);
    let scale = |vals: &[f64]| vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let s_map = scale(&map.relevance);
    for k in 0..t {
        for j in 0..d {
            let v = map.relevance[k * d + j] / s_map;
            svg.rect(left + cell * k as f64, top + cell * j as f64, cell, cell, &diverging(v));
        }
    }
    let s_frame = scale(&map.frame);
    let y = top + cell * (d as f64 + 0.5);
    for (k, v) in map.frame.iter().enumerate() {
        svg.rect(left + cell * k as f64, y, cell, cell, &diverging(v / s_frame));
    }
    svg.text(4.0, y + cell * 0.7, 10.0, "sum");
    svg.text(left, 18.0, 12.0, &format!("{title} ({})", map.target));
    svg.finish()
}
