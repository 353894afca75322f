//! The `handover-events` command line.
//!
//! Every subcommand reads the same run configuration: defaults, then an
//! optional `--config` file of `key=value` lines, then the
//! `HANDOVER_EVENTS_SEED` variable, then `--set key=value` flags.

mod commands;
mod config;

pub use commands::{
    cmd_attribute, cmd_detect, cmd_eval, cmd_plot, cmd_synth, cmd_train, load_dataset, parse_window_id, score_dataset,
    AttributeOutput, Dataset, DetectOutput, Detection, Manifest, StreamEntry, TrainSummary, CHECKPOINT, HISTORY, MANIFEST,
    METRICS, TRAIN_SUMMARY,
};
pub use config::{help_table, keys, AttributionMethod, Key, RunConfig, SEED_ENV};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "handover-events", version, about = "Handover event detection on frame-embedding streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// File of key=value lines
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic streams with ground-truth sidecars
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a dataset with a checkpoint and write event-level metrics
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write one SVG trace per stream
        #[arg(long)]
        plot: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Find events in a predictions CSV
    Detect {
        #[arg(long)]
        predictions: PathBuf,
        /// Ground-truth sidecar; adds metrics to the output
        #[arg(long)]
        events: Option<PathBuf>,
        /// Output JSON file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Attribute one window's prediction to its frames
    Attribute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `<stream>:<window>`, stream by name or index
        #[arg(long)]
        window: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render a predictions CSV as an SVG trace
    Plot {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        /// Output SVG file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Detect { common, .. }
            | Command::Attribute { common, .. }
            | Command::Plot { common, .. } => common,
        }
    }
}

/// Clap command with the config key table appended to every help page.
pub fn command() -> clap::Command {
    let table = help_table();
    Cli::command()
        .after_help(table.clone())
        .mut_subcommands(|sub| sub.after_help(table.clone()))
}

/// Executes a parsed command line; returns a one-line summary for stdout.
pub fn execute(cli: &Cli, seed_env: Option<&str>) -> Result<String> {
    let common = cli.command.common();
    let cfg = RunConfig::load(common.config.as_deref(), seed_env, &common.overrides)?;
    match &cli.command {
        Command::Synth { out, .. } => {
            let m = cmd_synth(&cfg, out)?;
            Ok(format!("wrote {} streams, {} events to {}", m.num_streams, m.total_events, out.display()))
        }
        Command::Train { data, out, .. } => {
            let s = cmd_train(&cfg, data, out)?;
            Ok(format!(
                "trained {} epochs, best epoch {}, checkpoint {}",
                s.epochs_run,
                s.best_epoch.map_or("-".into(), |e| e.to_string()),
                out.join(CHECKPOINT).display()
            ))
        }
        Command::Eval { data, checkpoint, out, plot, .. } => {
            let r = cmd_eval(&cfg, data, checkpoint, out, *plot)?;
            Ok(format!(
                "detection P={:.4} R={:.4} F1={:.4}; direction F1@R={:.4} F1@G={:.4} mean={:.4}",
                r.precision, r.recall, r.f1, r.f1_receives, r.f1_gives, r.mean_f1
            ))
        }
        Command::Detect { predictions, events, out, .. } => {
            let d = cmd_detect(&cfg, predictions, events.as_deref(), out)?;
            Ok(format!("{} detections written to {}", d.detections.len(), out.display()))
        }
        Command::Attribute { data, checkpoint, window, out, .. } => {
            let (_, info) = cmd_attribute(&cfg, data, checkpoint, window, out)?;
            Ok(format!(
                "wrote {} (completeness error {:.3e})",
                info.csv.display(),
                info.completeness_error
            ))
        }
        Command::Plot { predictions, events, out, .. } => {
            cmd_plot(&cfg, predictions, events.as_deref(), out)?;
            Ok(format!("wrote {}", out.display()))
        }
    }
}

/// Full entry point: parses `args`, runs, prints, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let seed_env = std::env::var(SEED_ENV).ok();
    match execute(&cli, seed_env.as_deref()) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
