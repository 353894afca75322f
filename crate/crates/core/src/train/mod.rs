//! The training loop: weighted sampling, forward/backward over micro-batches,
//! gradient accumulation, clipping, AdamW with two parameter groups, a
//! warmup + cosine schedule, and early stopping on validation loss.

mod optim;
mod sampler;

pub use optim::{
    adamw_update, clip_grad_norm, lr_at, warmup_steps, GroupRates, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use sampler::{sample_batch, ClassPools, SamplerProbs};

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{inverse_frequency_weights, total_loss, LossBreakdown, LossWeights};
use crate::net::{backward_into, forward, DropoutMasks, HeadOutput, ModelDims, ModelParams, Mode};
use crate::synth::jitter_embeddings;
use crate::windowing::{shuffle_window_frames, FrameLabel, LabeledFrameStream, Window, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Projection group (stands in for the backbone group).
    pub lr_projection: f64,
    /// LSTM and heads.
    pub lr_temporal: f64,
    pub weight_decay_projection: f64,
    pub weight_decay_temporal: f64,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub max_grad_norm: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub sampler: SamplerProbs,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Trailing fraction of streams held out for validation.
    pub validation_fraction: f64,
    /// Each epoch samples `ceil(|train windows| / epoch_divisor)` windows.
    pub epoch_divisor: usize,
    pub embedding_dropout: f64,
    pub hidden_dropout: f64,
    /// Std of Gaussian noise added to training features each epoch.
    pub embedding_jitter: f64,
    pub loss: LossWeights,
    /// `None` derives inverse class frequencies from the training windows.
    pub dir_class_weights: Option<[f64; 2]>,
    /// Ablation: permute the frames of every training window.
    pub shuffle_frames: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_projection: 3e-6,
            lr_temporal: 1e-5,
            weight_decay_projection: 1e-4,
            weight_decay_temporal: 1e-5,
            batch_size: 8,
            accumulation_steps: 2,
            max_grad_norm: 1.0,
            warmup_fraction: 0.05,
            epochs: 10,
            sampler: SamplerProbs::default(),
            early_stop_patience: 3,
            validation_fraction: 0.15,
            epoch_divisor: 3,
            embedding_dropout: 0.3,
            hidden_dropout: 0.4,
            embedding_jitter: 0.0,
            loss: LossWeights::default(),
            dir_class_weights: None,
            shuffle_frames: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with learning rates sized for training the small model from
    /// scratch on synthetic data: 2e-3 for the projection, 5e-3 for the rest.
    pub fn desk_scale() -> Self {
        TrainConfig {
            lr_projection: 2e-3,
            lr_temporal: 5e-3,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.loss.validate()?;
        let rates = [
            self.lr_projection,
            self.lr_temporal,
            self.weight_decay_projection,
            self.weight_decay_temporal,
            self.warmup_fraction,
            self.embedding_jitter,
        ];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument("learning rates, decays, warmup and jitter must be >= 0".into()));
        }
        if self.batch_size == 0 || self.accumulation_steps == 0 || self.epoch_divisor == 0 {
            return Err(Error::InvalidArgument("batch_size, accumulation_steps and epoch_divisor must be >= 1".into()));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::InvalidArgument("max_grad_norm must be > 0".into()));
        }
        for rate in [self.embedding_dropout, self.hidden_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn rates_at(&self, step: usize, total_steps: usize) -> GroupRates {
        GroupRates {
            projection_lr: lr_at(step, total_steps, self.warmup_fraction, self.lr_projection),
            projection_wd: self.weight_decay_projection,
            temporal_lr: lr_at(step, total_steps, self.warmup_fraction, self.lr_temporal),
            temporal_wd: self.weight_decay_temporal,
        }
    }
}

/// Number of validation streams held out from `num_streams`.
pub fn validation_stream_count(num_streams: usize, fraction: f64) -> usize {
    if num_streams < 2 || fraction <= 0.0 {
        return 0;
    }
    ((fraction * num_streams as f64).round() as usize).clamp(1, num_streams - 1)
}

/// A window together with the stream it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowRef {
    pub stream: usize,
    pub window: Window,
}

pub fn collect_windows(streams: &[LabeledFrameStream], spec: &WindowSpec) -> Vec<WindowRef> {
    streams
        .iter()
        .enumerate()
        .flat_map(|(stream, s)| s.windows(spec).into_iter().map(move |window| WindowRef { stream, window }))
        .collect()
}

/// One training input: features, label, and the dropout masks of this pass.
pub struct Sample<'a> {
    pub features: &'a [f64],
    pub label: FrameLabel,
    pub masks: Option<&'a DropoutMasks>,
}

/// Forward + loss + backward over one batch; returns the gradient of the
/// batch's total loss.
pub fn batch_gradient(params: &ModelParams, samples: &[Sample<'_>], weights: &LossWeights) -> Result<(ModelParams, LossBreakdown)> {
    let mut caches = Vec::with_capacity(samples.len());
    for s in samples {
        let mode = s.masks.map_or(Mode::Eval, Mode::Train);
        caches.push(forward(s.features, params, mode)?);
    }
    let outputs: Vec<HeadOutput> = caches.iter().map(|c| c.output).collect();
    let labels: Vec<FrameLabel> = samples.iter().map(|s| s.label).collect();
    let loss = total_loss(&outputs, &labels, weights)?;
    let mut grads = params.zeros_like();
    for (cache, head_grad) in caches.iter().zip(&loss.head_grads) {
        backward_into(cache, params, *head_grad, &mut grads)?;
    }
    Ok((grads, loss.breakdown))
}

/// Sums micro-batch gradients until an optimizer step.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    sum: ModelParams,
    count: usize,
}

impl GradientAccumulator {
    pub fn new(params: &ModelParams) -> Self {
        GradientAccumulator {
            sum: params.zeros_like(),
            count: 0,
        }
    }

    pub fn add(&mut self, grads: &ModelParams) {
        self.sum.add_assign(grads);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean of the accumulated micro-batch gradients; resets the accumulator.
    pub fn take_mean(&mut self) -> ModelParams {
        let zeros = self.sum.zeros_like();
        let mut mean = std::mem::replace(&mut self.sum, zeros);
        if self.count > 0 {
            mean.scale(1.0 / self.count as f64);
        }
        self.count = 0;
        mean
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Temporal-group learning rate at the epoch's last optimizer step.
    pub lr: f64,
    pub train_det: f64,
    pub train_dir: f64,
    pub train_total: f64,
    pub val_det: f64,
    pub val_dir: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss, or the final ones without a validation split.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Temporal-group learning rate of every optimizer step.
    pub lr_trace: Vec<f64>,
    pub dir_class_weights: [f64; 2],
}

/// Schedule geometry derived from the dataset size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub micro_batches_per_epoch: usize,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(num_train_windows: usize, config: &TrainConfig) -> Self {
        let samples = num_train_windows.div_ceil(config.epoch_divisor);
        let micro = samples.div_ceil(config.batch_size).max(1);
        let steps = micro.div_ceil(config.accumulation_steps);
        Schedule {
            micro_batches_per_epoch: micro,
            steps_per_epoch: steps,
            total_steps: steps * config.epochs,
        }
    }
}

/// Mean losses of `params` over `windows` in eval mode.
pub fn evaluate_loss(
    params: &ModelParams,
    streams: &[LabeledFrameStream],
    windows: &[WindowRef],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut outputs = Vec::with_capacity(windows.len());
    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        let features = streams[w.stream].window_features(&w.window);
        outputs.push(forward(&features, params, Mode::Eval)?.output);
        labels.push(w.window.train_label);
    }
    Ok(total_loss(&outputs, &labels, weights)?.breakdown)
}

/// Trains a model on `streams`. The last `validation_fraction` of the
/// streams is held out for early stopping.
pub fn train(streams: &[LabeledFrameStream], spec: &WindowSpec, dims: ModelDims, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    for s in streams {
        if s.feature_dim() != dims.feature_dim {
            return Err(Error::Shape(format!(
                "stream feature_dim {} does not match model feature_dim {}",
                s.feature_dim(),
                dims.feature_dim
            )));
        }
    }
    let mut params = ModelParams::init(dims, config.seed)?;
    let n_val = validation_stream_count(streams.len(), config.validation_fraction);
    let (train_streams, val_streams) = streams.split_at(streams.len() - n_val);
    let train_windows = collect_windows(train_streams, spec);
    let val_windows = collect_windows(val_streams, spec);

    let dir_class_weights = config
        .dir_class_weights
        .unwrap_or_else(|| inverse_frequency_weights(train_windows.iter().map(|w| w.window.train_label)));
    let weights = LossWeights {
        dir_class_weights,
        ..config.loss
    };

    let mut outcome = TrainOutcome {
        params: params.clone(),
        history: Vec::new(),
        best_epoch: None,
        lr_trace: Vec::new(),
        dir_class_weights,
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    let pools = ClassPools::from_labels(train_windows.iter().map(|w| w.window.train_label));
    let schedule = Schedule::new(train_windows.len(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000);
    let mut optimizer = OptimizerState::new(&params);
    let mut accumulator = GradientAccumulator::new(&params);
    let mut step = 0usize;
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let steps_in_dims = spec.frames_per_window;

    for epoch in 0..config.epochs {
        let jittered;
        let epoch_streams: &[LabeledFrameStream] = if config.embedding_jitter > 0.0 {
            jittered = train_streams
                .iter()
                .map(|s| jitter_embeddings(s, config.embedding_jitter, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            &jittered
        } else {
            train_streams
        };

        let mut det_sum = 0.0;
        let mut dir_sum = 0.0;
        let mut dir_batches = 0usize;
        let mut last_lr = 0.0;
        for micro in 0..schedule.micro_batches_per_epoch {
            let batch = sample_batch(&pools, &config.sampler, config.batch_size, &mut rng)?;
            let mut features: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| epoch_streams[train_windows[i].stream].window_features(&train_windows[i].window))
                .collect();
            if config.shuffle_frames {
                for f in features.iter_mut() {
                    shuffle_window_frames(f, dims.feature_dim, &mut rng);
                }
            }
            let masks: Vec<DropoutMasks> = batch
                .iter()
                .map(|_| DropoutMasks::sample(&mut rng, steps_in_dims, &dims, config.embedding_dropout, config.hidden_dropout))
                .collect();
            let samples: Vec<Sample<'_>> = batch
                .iter()
                .zip(&features)
                .zip(&masks)
                .map(|((&i, f), m)| Sample {
                    features: f,
                    label: train_windows[i].window.train_label,
                    masks: Some(m),
                })
                .collect();
            let (grads, loss) = batch_gradient(&params, &samples, &weights)?;
            if !loss.total.is_finite() || !grads.is_finite() {
                let composition = FrameLabel::ALL
                    .iter()
                    .map(|l| format!("{l}={}", samples.iter().filter(|s| s.label == *l).count()))
                    .collect::<Vec<_>>()
                    .join(",");
                return Err(Error::NonFiniteLoss { step, composition });
            }
            det_sum += loss.det;
            if loss.num_positive > 0 {
                dir_sum += loss.dir;
                dir_batches += 1;
            }
            accumulator.add(&grads);
            let last_micro = micro + 1 == schedule.micro_batches_per_epoch;
            if accumulator.count() == config.accumulation_steps || last_micro {
                let mut mean = accumulator.take_mean();
                clip_grad_norm(&mut mean, config.max_grad_norm);
                let rates = config.rates_at(step, schedule.total_steps);
                optimizer.step(&mut params, &mean, &rates);
                last_lr = rates.temporal_lr;
                outcome.lr_trace.push(rates.temporal_lr);
                step += 1;
            }
        }
        if !params.is_finite() {
            return Err(Error::NumericOverflow(format!("parameters non-finite after epoch {epoch}")));
        }

        let train_det = det_sum / schedule.micro_batches_per_epoch as f64;
        let train_dir = if dir_batches > 0 { dir_sum / dir_batches as f64 } else { 0.0 };
        let val = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate_loss(&params, val_streams, &val_windows, &weights)?)
        };
        outcome.history.push(EpochRecord {
            epoch,
            lr: last_lr,
            train_det,
            train_dir,
            train_total: weights.lambda_det * train_det + weights.lambda_dir * train_dir,
            val_det: val.map_or(f64::NAN, |v| v.det),
            val_dir: val.map_or(f64::NAN, |v| v.dir),
            val_total: val.map_or(f64::NAN, |v| v.total),
        });

        match val {
            Some(v) if v.total < best_val => {
                best_val = v.total;
                since_best = 0;
                outcome.params = params.clone();
                outcome.best_epoch = Some(epoch);
            }
            Some(_) => {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    break;
                }
            }
            None => {
                outcome.params = params.clone();
            }
        }
    }
    Ok(outcome)
}

/// History as CSV: `epoch,lr,train_det,train_dir,val_det,val_dir,val_total`.
pub fn write_history_csv<W: Write>(mut out: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "epoch,lr,train_det,train_dir,val_det,val_dir,val_total")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.lr, r.train_det, r.train_dir, r.val_det, r.val_dir, r.val_total
        )?;
    }
    Ok(())
}

pub fn save_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_history_csv(&mut out, history).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
