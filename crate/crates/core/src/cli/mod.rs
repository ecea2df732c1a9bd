//! Command-line entry point: `synth`, `tokenize`, `train`, `evaluate`,
//! `analyze-bias` and `bench-mask`.
//!
//! Every command reads an optional TOML [`ExperimentConfig`], applies flag
//! overrides, writes its artifacts under the output directory and a JSON
//! [`Report`] named `report_<command>.json`. Exit codes: 0 success, 1
//! configuration or runtime error, 2 usage error.

mod bench;
mod config;
mod pipeline;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Result;
use crate::model::{MaskKind, Mode, QueryCounts};

pub use bench::{bench_mask, BenchReport, BenchRow};
pub use config::{AnalysisConfig, BenchConfig, DataConfig, DecodeConfig, ExperimentConfig, OUTPUT_ROOT_ENV};
pub use pipeline::{Artifacts, Prepared, CHECKPOINT, PREDICTIONS, SEMANTIC_IDS, TEST_TARGETS, TRAIN_LOG};
pub use report::{DatasetSummary, LayoutSummary, Report, SweepEntry, TrainSummary, TOOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic interaction log and item embeddings.
    Synth,
    /// Fit codebooks and write semantic IDs.
    Tokenize,
    /// Train a model and write a checkpoint plus training log.
    Train,
    /// Beam-decode the test split and write predictions and metrics.
    Evaluate,
    /// Teacher-forced pass and popularity-bias report.
    AnalyzeBias,
    /// Attention-pair counts and timings, single pass vs staged re-encoding.
    BenchMask,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Tokenize => "tokenize",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::AnalyzeBias => "analyze-bias",
            Command::BenchMask => "bench-mask",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "care", version, about = "Cascaded reasoning for generative recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, global = true, value_parser = parse_mask)]
    mask: Option<MaskKind>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Per-stage reasoning query counts, e.g. 1-1-4-4.
    #[arg(long, global = true)]
    query_counts: Option<QueryCounts>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Comma-separated cut-offs, e.g. 5,10,20.
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "baseline" => Ok(Mode::Baseline),
        "care" => Ok(Mode::Care),
        _ => Err(format!("unknown mode {s:?} (baseline|care)")),
    }
}

fn parse_mask(s: &str) -> std::result::Result<MaskKind, String> {
    match s {
        "progressive" => Ok(MaskKind::Progressive),
        "causal" => Ok(MaskKind::Causal),
        _ => Err(format!("unknown mask {s:?} (progressive|causal)")),
    }
}

impl Cli {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.mode {
            cfg.model.mode = v;
        }
        if let Some(v) = self.mask {
            cfg.model.mask = v;
        }
        if let Some(v) = self.alpha {
            cfg.train.alpha = v;
        }
        if let Some(v) = &self.query_counts {
            cfg.model.query_counts = v.clone();
        }
        if let Some(v) = self.epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = &self.ks {
            cfg.decode.ks = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs `command` and writes its report; returns the report.
pub fn run_command(command: Command, cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let report = match command {
        Command::Synth => pipeline::synth(cfg)?,
        Command::Tokenize => pipeline::tokenize_cmd(cfg)?,
        Command::Train => pipeline::train(cfg)?,
        Command::Evaluate => pipeline::evaluate(cfg)?,
        Command::AnalyzeBias => pipeline::analyze_bias(cfg)?,
        Command::BenchMask => pipeline::bench(cfg)?,
    };
    report.write(&Artifacts::new(cfg).report(command.name()))?;
    Ok(report)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match cli.experiment().and_then(|cfg| run_command(cli.command, &cfg)) {
        Ok(report) => {
            println!("{}", Artifacts::new(&report.config).report(cli.command.name()).display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["care", "foo"]), 2);
        assert_eq!(run(["care"]), 2);
        assert_eq!(run(["care", "train", "--mode", "other"]), 2);
        assert_eq!(run(["care", "--help"]), 0);
    }

    #[test]
    fn config_errors_exit_one() {
        assert_eq!(run(["care", "train", "--config", "/nonexistent/care.toml"]), 1);
        assert_eq!(run(["care", "evaluate", "--ks", "5,50"]), 1);
    }
}
