//! Event-level detection and direction classification of instrument
//! handovers from windowed frame-embedding sequences.
//!
//! The crate is organised along the pipeline:
//!
//! * [`windowing`]: windows over a labeled frame stream and their labels;
//! * [`synth`]: synthetic streams with planted events;
//! * [`net`]: projection, LSTM and the detection/direction heads, forward and reverse;
//! * [`loss`]: weighted binary and masked weighted cross-entropy;
//! * [`train`]: sampler, AdamW, warmup-cosine schedule, the training loop;
//! * [`events`]: confidence signal, smoothing, peaks, matching, metrics;
//! * [`attribution`]: integrated gradients over the embedding sequence;
//! * [`cli`]: the `handover-events` command line.

pub mod attribution;
pub mod cli;
pub mod error;
pub mod events;
pub mod loss;
pub mod net;
pub mod synth;
pub mod train;
pub mod windowing;

mod svg;

pub use error::{Error, Result};
