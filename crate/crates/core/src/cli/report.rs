use std::path::Path;

use serde::Serialize;

use super::bench::BenchReport;
use super::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::{BiasReport, MetricRow};
use crate::model::{build_layout, Mode, ModelConfig};
use crate::training::TrainLog;
use crate::util::write_atomic;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Positions of the longest sequence the model sees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutSummary {
    pub mode: Mode,
    pub query_counts: Vec<usize>,
    pub history_items: usize,
    pub sequence_length: usize,
    pub readouts: Vec<usize>,
}

impl LayoutSummary {
    pub fn of(cfg: &ModelConfig) -> Result<Self> {
        let layout = build_layout(cfg.max_history, cfg)?;
        Ok(Self {
            mode: cfg.mode,
            query_counts: layout.query_counts.clone(),
            history_items: cfg.max_history,
            sequence_length: layout.len(),
            readouts: layout.readouts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub train_examples: usize,
    pub valid_examples: usize,
    pub test_examples: usize,
}

/// Training outcome without wall-clock figures, so reports stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub final_rec_loss: f64,
    pub final_div_loss: f64,
    pub final_total_loss: f64,
    pub best_valid_recall10: Option<f64>,
    pub best_valid_ndcg10: Option<f64>,
}

impl TrainSummary {
    pub fn of(log: &TrainLog) -> Self {
        let last = log.epochs.last();
        let best = log.epochs.iter().find(|e| e.epoch == log.best_epoch);
        Self {
            epochs_run: log.epochs.len(),
            best_epoch: log.best_epoch,
            stopped_early: log.stopped_early,
            final_rec_loss: last.map_or(f64::NAN, |e| e.rec_loss),
            final_div_loss: last.map_or(f64::NAN, |e| e.div_loss),
            final_total_loss: last.map_or(f64::NAN, |e| e.total_loss),
            best_valid_recall10: best.and_then(|e| e.valid_recall10),
            best_valid_ndcg10: best.and_then(|e| e.valid_ndcg10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub alpha: f64,
    pub summary: TrainSummary,
}

/// Self-contained result of one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<LayoutSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub alpha_sweep: Vec<SweepEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<MetricRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchReport>,
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed: config.seed,
            config: config.clone(),
            dataset: None,
            layout: None,
            train: None,
            alpha_sweep: Vec::new(),
            metrics: None,
            bias: None,
            bench: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}
