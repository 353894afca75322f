//! `key=value` run configuration.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::attribution::Target;
use crate::error::{Error, Result};
use crate::events::EvalParams;
use crate::net::GateLayout;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;
use crate::windowing::{StreamFormat, WindowSpec};

/// Environment variable overriding `seed`.
pub const SEED_ENV: &str = "HANDOVER_EVENTS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionMethod {
    /// Integrated gradients.
    Ig,
    /// Gradient times input.
    Gxi,
}

impl FromStr for AttributionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ig" => Ok(AttributionMethod::Ig),
            "gxi" => Ok(AttributionMethod::Gxi),
            other => Err(Error::Config(format!("unknown attribution method {other:?}"))),
        }
    }
}

impl std::fmt::Display for AttributionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttributionMethod::Ig => "ig",
            AttributionMethod::Gxi => "gxi",
        })
    }
}

/// Everything a command may need. `seed` drives both generation and training.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub window: WindowSpec,
    pub synth: SynthConfig,
    pub stream_format: StreamFormat,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub gate_layout: GateLayout,
    pub train: TrainConfig,
    pub eval: EvalParams,
    /// Ablation: permute frames inside every evaluated window.
    pub eval_shuffle_frames: bool,
    pub attribution_method: AttributionMethod,
    pub attribution_steps: usize,
    pub attribution_target: Target,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            window: WindowSpec::default(),
            synth: SynthConfig::default(),
            stream_format: StreamFormat::Jsonl,
            embedding_dim: 16,
            hidden_dim: 16,
            gate_layout: GateLayout::default(),
            train: TrainConfig::default(),
            eval: EvalParams::default(),
            eval_shuffle_frames: false,
            attribution_method: AttributionMethod::Ig,
            attribution_steps: 64,
            attribution_target: Target::Detection,
        }
    }
}

/// One configurable key.
pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<()>,
}

fn parse<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

macro_rules! key {
    ($name:literal, $help:literal, $($field:ident).+) => {
        Key {
            name: $name,
            help: $help,
            get: |c| c.$($field).+.to_string(),
            set: |c, v| {
                c.$($field).+ = parse(v, $name)?;
                Ok(())
            },
        }
    };
}

/// Every key, in `--help` order.
pub fn keys() -> Vec<Key> {
    vec![
        key!("seed", "seed of generation, initialization and sampling", seed),
        key!("window.frames", "frames per window T", window.frames_per_window),
        key!("window.frame_stride", "frame stride inside a window", window.frame_stride),
        key!("window.sequence_stride", "stride between window starts", window.sequence_stride),
        key!("synth.num_streams", "streams to generate", synth.num_streams),
        key!("synth.frames_per_stream", "frames per stream", synth.frames_per_stream),
        key!("synth.feature_dim", "features per frame F", synth.feature_dim),
        key!("synth.event_rate", "events per 1000 frames", synth.event_rate),
        key!("synth.duration_min", "shortest event in frames", synth.event_duration_min),
        key!("synth.duration_max", "longest event in frames", synth.event_duration_max),
        key!("synth.direction_ratio", "fraction of Receives events", synth.direction_ratio),
        key!("synth.noise_sigma", "std of the background noise", synth.noise_sigma),
        key!("synth.amplitude", "peak norm of the event pattern", synth.event_amplitude),
        key!("synth.min_gap", "minimum idle frames between events", synth.min_gap),
        key!("synth.edge_margin", "idle frames kept at stream ends", synth.edge_margin),
        key!("synth.pattern_seed", "seed of the shared event patterns", synth.pattern_seed),
        Key {
            name: "synth.format",
            help: "stream file format: jsonl or csv",
            get: |c| c.stream_format.extension().to_string(),
            set: |c, v| {
                c.stream_format = v.parse()?;
                Ok(())
            },
        },
        key!("model.embedding_dim", "embedding width D", embedding_dim),
        key!("model.hidden_dim", "LSTM hidden width", hidden_dim),
        Key {
            name: "model.gate_layout",
            help: "LSTM gate block order, a permutation of ifgo",
            get: |c| c.gate_layout.code(),
            set: |c, v| {
                c.gate_layout = GateLayout::parse(v).map_err(|e| Error::Config(e.to_string()))?;
                Ok(())
            },
        },
        key!("train.lr_projection", "peak learning rate of the projection", train.lr_projection),
        key!("train.lr_temporal", "peak learning rate of LSTM and heads", train.lr_temporal),
        key!("train.wd_projection", "weight decay of the projection", train.weight_decay_projection),
        key!("train.wd_temporal", "weight decay of LSTM and heads", train.weight_decay_temporal),
        key!("train.batch_size", "windows per micro-batch", train.batch_size),
        key!("train.accumulation_steps", "micro-batches per optimizer step", train.accumulation_steps),
        key!("train.max_grad_norm", "global gradient-norm clip", train.max_grad_norm),
        key!("train.warmup_fraction", "fraction of steps in linear warmup", train.warmup_fraction),
        key!("train.epochs", "maximum epochs", train.epochs),
        key!("train.sampler_idle", "sampling probability of Idle windows", train.sampler.idle),
        key!("train.sampler_receives", "sampling probability of Receives windows", train.sampler.receives),
        key!("train.sampler_gives", "sampling probability of Gives windows", train.sampler.gives),
        key!("train.patience", "epochs without validation gain before stopping", train.early_stop_patience),
        key!("train.validation_fraction", "trailing fraction of streams held out", train.validation_fraction),
        key!("train.epoch_divisor", "an epoch samples windows / divisor windows", train.epoch_divisor),
        key!("train.embedding_dropout", "dropout on embeddings", train.embedding_dropout),
        key!("train.hidden_dropout", "dropout on the sequence representation", train.hidden_dropout),
        key!("train.jitter", "std of noise added to training features", train.embedding_jitter),
        key!("train.w_pos", "positive weight of the detection loss", train.loss.w_pos),
        key!("train.lambda_det", "weight of the detection loss", train.loss.lambda_det),
        key!("train.lambda_dir", "weight of the direction loss", train.loss.lambda_dir),
        Key {
            name: "train.dir_class_weights",
            help: "direction class weights `r,g`, or auto for inverse frequency",
            get: |c| match c.train.dir_class_weights {
                None => "auto".into(),
                Some([r, g]) => format!("{r},{g}"),
            },
            set: |c, v| {
                c.train.dir_class_weights = if v == "auto" {
                    None
                } else {
                    let parts: Vec<f64> = v
                        .split(',')
                        .map(|p| parse(p.trim(), "train.dir_class_weights"))
                        .collect::<Result<_>>()?;
                    let [r, g] = parts[..] else {
                        return Err(Error::Config(format!("train.dir_class_weights needs two values, got {v:?}")));
                    };
                    Some([r, g])
                };
                Ok(())
            },
        },
        key!("train.shuffle_frames", "ablation: permute frames inside training windows", train.shuffle_frames),
        key!("eval.sigma", "std of the smoothing kernel, in windows", eval.sigma),
        key!("eval.kernel_size", "smoothing kernel length (odd)", eval.kernel_size),
        key!("eval.min_height", "minimum smoothed peak height", eval.min_height),
        key!("eval.prominence_frac", "minimum prominence as a fraction of the signal range", eval.prominence_frac),
        key!("eval.tolerance", "matching tolerance in windows", eval.tolerance),
        key!("eval.sigma_dir_divisor", "direction weights use sigma = len / divisor", eval.sigma_dir_divisor),
        key!("eval.sigma_dir_min", "lower bound of the direction sigma", eval.sigma_dir_min),
        key!("eval.shuffle_frames", "ablation: permute frames inside evaluated windows", eval_shuffle_frames),
        key!("attribute.method", "ig or gxi", attribution_method),
        key!("attribute.steps", "integration steps (>= 8)", attribution_steps),
        key!("attribute.target", "det, dir:receives or dir:gives", attribution_target),
    ]
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let keys = keys();
        let k = keys
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        (k.set)(self, value.trim())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        keys().iter().find(|k| k.name == key).map(|k| (k.get)(self))
    }

    /// Applies a `key=value` line.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    /// Applies a config file: `key = value` lines, `#` comments, blank lines.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply(line)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults, then `file`, then the seed variable, then `overrides`.
    pub fn load(file: Option<&Path>, seed_env: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        if let Some(v) = seed_env {
            cfg.seed = parse(v.trim(), SEED_ENV)?;
        }
        for o in overrides {
            cfg.apply(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| Error::Config(strip_prefix(&e));
        self.window.validate().map_err(as_config)?;
        self.synth_config().validate().map_err(as_config)?;
        self.train_config().validate().map_err(as_config)?;
        self.eval.validate().map_err(as_config)?;
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("model dims must be > 0".into()));
        }
        if self.attribution_steps < 8 {
            return Err(Error::Config("attribute.steps must be >= 8".into()));
        }
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// `key=value` lines for every key, in key order.
    pub fn to_text(&self) -> String {
        keys().iter().map(|k| format!("{}={}\n", k.name, (k.get)(self))).collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config error: ")
        .or_else(|| s.strip_prefix("invalid argument: "))
        .unwrap_or(&s)
        .to_string()
}

/// Key table for `--help`.
pub fn help_table() -> String {
    let defaults = RunConfig::default();
    let width = keys().iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (key=value, default shown):\n");
    for k in keys() {
        out.push_str(&format!("  {:width$}  {:<22} {}\n", k.name, (k.get)(&defaults), k.help));
    }
    out.push_str(&format!(
        "\nPrecedence: defaults < --config file < {SEED_ENV} < --set.\n\
         Exit codes: 0 ok, 2 config or argument error, 3 numeric failure, 4 I/O or parse error.\n"
    ));
    out
}
