//! Projection, single-layer unidirectional LSTM and the two prediction heads,
//! with a hand-written reverse pass.
//!
//! Shapes: a window is `T x F` features. The projection maps each frame to a
//! `D`-dim embedding, the LSTM runs over the `T` embeddings from
//! `h_0 = c_0 = 0`, and `z = h_T` feeds
//!
//! * the detection head, `p_det = sigmoid(w_det . z + b_det)`;
//! * the direction head, `p_dir = softmax(W_dir z + b_dir)` over `[Receives, Gives]`.
//!
//! In training mode inverted dropout is applied to the embeddings and to `z`.
//! Masks are drawn up front ([`DropoutMasks`]) so a pass is a pure function
//! of `(params, inputs, masks)`.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use params::{Gate, GateLayout, ModelDims, ModelParams, ParamGroup, FIELD_ORDER, NUM_DIRECTIONS};

use rand::Rng;

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Inverted-dropout masks for one window: entries are `0` or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// `T x D`, applied to the projected embeddings.
    pub embedding: Vec<f64>,
    /// `H`, applied to `z` before the heads.
    pub hidden: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng>(rng: &mut R, steps: usize, dims: &ModelDims, embedding_rate: f64, hidden_rate: f64) -> Self {
        DropoutMasks {
            embedding: dropout_mask(rng, steps * dims.embedding_dim, embedding_rate),
            hidden: dropout_mask(rng, dims.hidden_dim, hidden_rate),
        }
    }
}

pub fn dropout_mask<R: Rng>(rng: &mut R, len: usize, rate: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Forward mode.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a DropoutMasks),
}

/// `e_t = W_p f_t + b_p` for every row of `features` (`T x F`), then the
/// optional dropout mask.
pub fn project(features: &[f64], params: &ModelParams, mask: Option<&[f64]>) -> Result<Vec<f64>> {
    let f = params.dims.feature_dim;
    let d = params.dims.embedding_dim;
    if features.is_empty() || features.len() % f != 0 {
        return Err(Error::Shape(format!(
            "feature matrix of {} values is not a multiple of feature_dim {f}",
            features.len()
        )));
    }
    let steps = features.len() / f;
    if let Some(mask) = mask {
        if mask.len() != steps * d {
            return Err(Error::Shape(format!("embedding mask has {} values, need {}", mask.len(), steps * d)));
        }
    }
    let mut out = vec![0.0; steps * d];
    for t in 0..steps {
        let x = &features[t * f..(t + 1) * f];
        for j in 0..d {
            let row = &params.proj_weight[j * f..(j + 1) * f];
            out[t * d + j] = params.proj_bias[j] + dot(row, x);
        }
    }
    if let Some(mask) = mask {
        out.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    Ok(out)
}

/// Per-step LSTM state kept for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    pub steps: usize,
    /// `T x D` inputs as seen by the LSTM.
    pub inputs: Vec<f64>,
    /// `T x 4H` activated gates in the layout order.
    pub gates: Vec<f64>,
    /// `(T + 1) x H`, row 0 is `c_0`.
    pub cells: Vec<f64>,
    /// `(T + 1) x H`, row 0 is `h_0`.
    pub hidden: Vec<f64>,
}

impl LstmTrace {
    /// Final hidden state `h_T`.
    pub fn last_hidden(&self, h: usize) -> &[f64] {
        &self.hidden[self.steps * h..(self.steps + 1) * h]
    }
}

/// Runs the recurrence over `embeddings` (`T x D`) and returns `z = h_T` with its trace.
pub fn lstm_forward(embeddings: &[f64], params: &ModelParams) -> Result<(Vec<f64>, LstmTrace)> {
    let d = params.dims.embedding_dim;
    let h = params.dims.hidden_dim;
    if embeddings.is_empty() || embeddings.len() % d != 0 {
        return Err(Error::Shape(format!(
            "embedding matrix of {} values is not a multiple of embedding_dim {d}",
            embeddings.len()
        )));
    }
    let steps = embeddings.len() / d;
    let layout = params.gate_layout;
    let [si, sf, sg, so] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output].map(|g| layout.slot(g));

    let mut gates = vec![0.0; steps * 4 * h];
    let mut cells = vec![0.0; (steps + 1) * h];
    let mut hidden = vec![0.0; (steps + 1) * h];
    for t in 0..steps {
        let x = &embeddings[t * d..(t + 1) * d];
        let (prev_h, next_h) = hidden.split_at_mut((t + 1) * h);
        let h_prev = &prev_h[t * h..];
        let a = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for r in 0..4 * h {
            a[r] = params.lstm_bias[r]
                + dot(&params.lstm_input_weight[r * d..(r + 1) * d], x)
                + dot(&params.lstm_recurrent_weight[r * h..(r + 1) * h], h_prev);
        }
        for k in 0..h {
            a[si * h + k] = sigmoid(a[si * h + k]);
            a[sf * h + k] = sigmoid(a[sf * h + k]);
            a[sg * h + k] = a[sg * h + k].tanh();
            a[so * h + k] = sigmoid(a[so * h + k]);
        }
        let (prev_c, next_c) = cells.split_at_mut((t + 1) * h);
        let c_prev = &prev_c[t * h..];
        let c = &mut next_c[..h];
        let h_out = &mut next_h[..h];
        for k in 0..h {
            c[k] = a[sf * h + k] * c_prev[k] + a[si * h + k] * a[sg * h + k];
            h_out[k] = a[so * h + k] * c[k].tanh();
            if !c[k].is_finite() || !h_out[k].is_finite() {
                return Err(Error::NumericOverflow(format!("LSTM state non-finite at step {t}, unit {k}")));
            }
        }
    }
    let trace = LstmTrace {
        steps,
        inputs: embeddings.to_vec(),
        gates,
        cells,
        hidden,
    };
    Ok((trace.last_hidden(h).to_vec(), trace))
}

/// Head outputs for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub det_logit: f64,
    pub dir_logits: [f64; 2],
    pub p_det: f64,
    /// `[p(Receives), p(Gives)]`
    pub p_dir: [f64; 2],
}

pub fn heads_forward(z: &[f64], params: &ModelParams) -> HeadOutput {
    let h = params.dims.hidden_dim;
    let det_logit = dot(&params.det_weight, z) + params.det_bias[0];
    let dir_logits = [
        dot(&params.dir_weight[..h], z) + params.dir_bias[0],
        dot(&params.dir_weight[h..2 * h], z) + params.dir_bias[1],
    ];
    HeadOutput {
        det_logit,
        dir_logits,
        p_det: sigmoid(det_logit),
        p_dir: softmax2(dir_logits),
    }
}

/// Everything a forward pass produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `T x F` input features; `None` when the pass started from embeddings.
    pub features: Option<Vec<f64>>,
    pub embedding_mask: Option<Vec<f64>>,
    pub lstm: LstmTrace,
    /// `h_T`
    pub z: Vec<f64>,
    pub hidden_mask: Option<Vec<f64>>,
    /// `z` after dropout, the heads' input.
    pub head_input: Vec<f64>,
    pub output: HeadOutput,
}

impl ForwardCache {
    pub fn steps(&self) -> usize {
        self.lstm.steps
    }

    /// Embedding sequence fed to the LSTM (post-dropout).
    pub fn embeddings(&self) -> &[f64] {
        &self.lstm.inputs
    }
}

/// Full pass from window features (`T x F`).
pub fn forward(features: &[f64], params: &ModelParams, mode: Mode<'_>) -> Result<ForwardCache> {
    let masks = match mode {
        Mode::Eval => None,
        Mode::Train(m) => Some(m),
    };
    let embeddings = project(features, params, masks.map(|m| m.embedding.as_slice()))?;
    let mut cache = forward_embeddings(&embeddings, params, masks.map(|m| m.hidden.as_slice()))?;
    cache.features = Some(features.to_vec());
    cache.embedding_mask = masks.map(|m| m.embedding.clone());
    Ok(cache)
}

/// Pass starting at the embedding sequence (`T x D`), bypassing the projection.
pub fn forward_embeddings(embeddings: &[f64], params: &ModelParams, hidden_mask: Option<&[f64]>) -> Result<ForwardCache> {
    let (z, lstm) = lstm_forward(embeddings, params)?;
    let head_input = match hidden_mask {
        Some(mask) => {
            if mask.len() != z.len() {
                return Err(Error::Shape(format!("hidden mask has {} values, need {}", mask.len(), z.len())));
            }
            z.iter().zip(mask).map(|(v, m)| v * m).collect()
        }
        None => z.clone(),
    };
    let output = heads_forward(&head_input, params);
    Ok(ForwardCache {
        features: None,
        embedding_mask: None,
        lstm,
        z,
        hidden_mask: hidden_mask.map(<[f64]>::to_vec),
        head_input,
        output,
    })
}

/// Upstream gradient at the head logits.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeadGrad {
    pub det_logit: f64,
    pub dir_logits: [f64; 2],
}

impl HeadGrad {
    /// Chains gradients w.r.t. `p_det` and `p_dir` through the sigmoid and softmax.
    pub fn from_probabilities(output: &HeadOutput, grad_p_det: f64, grad_p_dir: [f64; 2]) -> Self {
        let p = output.p_det;
        let q = output.p_dir;
        let inner = q[0] * grad_p_dir[0] + q[1] * grad_p_dir[1];
        HeadGrad {
            det_logit: grad_p_det * p * (1.0 - p),
            dir_logits: [q[0] * (grad_p_dir[0] - inner), q[1] * (grad_p_dir[1] - inner)],
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        HeadGrad {
            det_logit: self.det_logit * factor,
            dir_logits: [self.dir_logits[0] * factor, self.dir_logits[1] * factor],
        }
    }
}

/// Result of [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ModelParams,
    /// `T x D`, w.r.t. the LSTM input embeddings.
    pub embeddings: Vec<f64>,
}

/// Reverse pass for one window; returns fresh parameter gradients.
pub fn backward(cache: &ForwardCache, params: &ModelParams, upstream: HeadGrad) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    let embeddings = backward_into(cache, params, upstream, &mut grads)?;
    Ok(Gradients {
        params: grads,
        embeddings,
    })
}

/// Reverse pass that adds parameter gradients into `grads` and returns the
/// gradient w.r.t. the LSTM input embeddings.
pub fn backward_into(cache: &ForwardCache, params: &ModelParams, upstream: HeadGrad, grads: &mut ModelParams) -> Result<Vec<f64>> {
    let d = params.dims.embedding_dim;
    let h = params.dims.hidden_dim;
    let f = params.dims.feature_dim;
    let steps = cache.steps();
    if cache.z.len() != h || cache.lstm.inputs.len() != steps * d || grads.dims != params.dims {
        return Err(Error::Shape("forward cache does not match parameter dims".into()));
    }
    if grads.gate_layout != params.gate_layout {
        return Err(Error::Shape("gradient and parameter gate layouts differ".into()));
    }

    // heads
    let g_det = upstream.det_logit;
    let g_dir = upstream.dir_logits;
    let mut dz = vec![0.0; h];
    for k in 0..h {
        grads.det_weight[k] += g_det * cache.head_input[k];
        grads.dir_weight[k] += g_dir[0] * cache.head_input[k];
        grads.dir_weight[h + k] += g_dir[1] * cache.head_input[k];
        dz[k] = g_det * params.det_weight[k] + g_dir[0] * params.dir_weight[k] + g_dir[1] * params.dir_weight[h + k];
    }
    grads.det_bias[0] += g_det;
    grads.dir_bias[0] += g_dir[0];
    grads.dir_bias[1] += g_dir[1];
    if let Some(mask) = &cache.hidden_mask {
        dz.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }

    // backprop through time
    let layout = params.gate_layout;
    let [si, sf, sg, so] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output].map(|g| layout.slot(g));
    let trace = &cache.lstm;
    let mut d_inputs = vec![0.0; steps * d];
    let mut dh = dz;
    let mut dc = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let a = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_prev = &trace.cells[t * h..(t + 1) * h];
        let c = &trace.cells[(t + 1) * h..(t + 2) * h];
        let h_prev = &trace.hidden[t * h..(t + 1) * h];
        let x = &trace.inputs[t * d..(t + 1) * d];
        for k in 0..h {
            let (i, fg, g, o) = (a[si * h + k], a[sf * h + k], a[sg * h + k], a[so * h + k]);
            let tc = c[k].tanh();
            let d_o = dh[k] * tc;
            let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
            da[si * h + k] = dck * g * i * (1.0 - i);
            da[sf * h + k] = dck * c_prev[k] * fg * (1.0 - fg);
            da[sg * h + k] = dck * i * (1.0 - g * g);
            da[so * h + k] = d_o * o * (1.0 - o);
            dc[k] = dck * fg;
        }
        let dx = &mut d_inputs[t * d..(t + 1) * d];
        dh.fill(0.0);
        for r in 0..4 * h {
            let g = da[r];
            if g == 0.0 {
                continue;
            }
            grads.lstm_bias[r] += g;
            let wi = &params.lstm_input_weight[r * d..(r + 1) * d];
            let gwi = &mut grads.lstm_input_weight[r * d..(r + 1) * d];
            for j in 0..d {
                gwi[j] += g * x[j];
                dx[j] += g * wi[j];
            }
            let wh = &params.lstm_recurrent_weight[r * h..(r + 1) * h];
            let gwh = &mut grads.lstm_recurrent_weight[r * h..(r + 1) * h];
            for j in 0..h {
                gwh[j] += g * h_prev[j];
                dh[j] += g * wh[j];
            }
        }
    }

    // projection
    if let Some(features) = &cache.features {
        let mut d_pre = d_inputs.clone();
        if let Some(mask) = &cache.embedding_mask {
            d_pre.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        for t in 0..steps {
            let x = &features[t * f..(t + 1) * f];
            for j in 0..d {
                let g = d_pre[t * d + j];
                grads.proj_bias[j] += g;
                let row = &mut grads.proj_weight[j * f..(j + 1) * f];
                row.iter_mut().zip(x).for_each(|(w, xv)| *w += g * xv);
            }
        }
    }
    Ok(d_inputs)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
