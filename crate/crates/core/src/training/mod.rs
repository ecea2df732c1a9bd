//! Losses, optimisation loop and gradient verification.

mod adam;
mod gradcheck;
mod loss;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemIdx, TrainingExample, UserIdx};
use crate::decoding::{beam_generate, DEFAULT_BEAM_SIZE};
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, recall_at_k};
use crate::model::forward::{record_hidden, record_logits, ParamVars};
use crate::model::tape::Tape;
use crate::model::{build_layout, build_progressive_mask, AttentionMask, Mode, ModelConfig, ModelParams, SequenceInputs, SequenceLayout};
use crate::tokenizer::{PrefixTrie, SemanticTable};
use crate::util::seeded_rng;

pub use adam::Adam;
pub use gradcheck::{finite_difference_check, finite_difference_check_at, pick_probes, GradCheckReport, GradProbe};
pub use loss::{diversity_loss, recommendation_loss, total_loss, DiversityScope};

/// Learning-rate grid for sweeps; the first entry is the default.
pub const LEARNING_RATE_GRID: [f64; 4] = [1e-3, 5e-4, 3e-4, 1e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a valid Recall@10 improvement before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub diversity_scope: DiversityScope,
    /// Beam width used for the validation ranking.
    pub valid_beam: usize,
    /// Validate on at most this many examples (all when unset).
    pub valid_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            learning_rate: LEARNING_RATE_GRID[0],
            batch_size: 64,
            max_epochs: 200,
            early_stop_patience: 10,
            seed: 0,
            diversity_scope: DiversityScope::Pooled,
            valid_beam: DEFAULT_BEAM_SIZE,
            valid_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.valid_beam < VALID_K {
            return Err(Error::Config(format!("valid_beam must be at least {VALID_K}")));
        }
        Ok(())
    }
}

const VALID_K: usize = 10;

/// A training example with its items replaced by semantic-ID codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub user: UserIdx,
    /// Item-major history codes.
    pub history: Vec<usize>,
    pub target_item: ItemIdx,
    pub target: Vec<usize>,
}

pub fn encode_examples(examples: &[TrainingExample], table: &SemanticTable) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|ex| EncodedExample {
            user: ex.user,
            history: crate::decoding::history_codes(table, &ex.history),
            target_item: ex.target,
            target: table.id_of(ex.target).codes().to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rec: f64,
    pub div: f64,
    pub total: f64,
}

/// Layouts and masks keyed by history length.
#[derive(Default)]
struct LayoutCache(Vec<Option<(SequenceLayout, AttentionMask)>>);

impl LayoutCache {
    fn get(&mut self, cfg: &ModelConfig, items: usize) -> Result<&(SequenceLayout, AttentionMask)> {
        if self.0.len() <= items {
            self.0.resize_with(items + 1, || None);
        }
        if self.0[items].is_none() {
            let layout = build_layout(items, cfg)?;
            let mask = build_progressive_mask(&layout, cfg);
            self.0[items] = Some((layout, mask));
        }
        Ok(self.0[items].as_ref().expect("just filled"))
    }
}

/// Total objective on `batch`; with `want_grad`, also its gradient.
pub(crate) fn batch_objective(
    params: &ModelParams,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    batch: &[&EncodedExample],
    want_grad: bool,
) -> Result<(LossParts, Option<ModelParams>)> {
    let mut layouts = LayoutCache::default();
    let mut grads = want_grad.then(|| params.zeros_like());
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut rec = 0.0;
    for ex in batch {
        let (layout, mask) = layouts.get(cfg, ex.history.len() / cfg.levels)?;
        let inputs = SequenceInputs { history: &ex.history, teacher: &ex.target };
        inputs.validate(layout, cfg)?;
        let mut tape = Tape::new(cfg.precision);
        let pv = ParamVars::register(&mut tape, params);
        let hidden = record_hidden(&mut tape, &pv, cfg, layout, mask, &inputs);
        let logits = record_logits(&mut tape, &pv, hidden, layout.readouts.clone());
        let (loss, local) = loss::example_recommendation_loss(cfg, tape.value(logits).view(), &ex.target)?;
        if !loss.is_finite() {
            return Err(Error::NumericalOverflow);
        }
        rec += loss * scale;
        if let Some(acc) = grads.as_mut() {
            let root = tape.scalar(logits, loss, local);
            let g = tape.backward(root, &pv.shapes);
            for (a, gi) in acc.tensors_mut().into_iter().zip(&g) {
                a.scaled_add(scale, gi);
            }
        }
    }
    let (div, div_grad) = if cfg.mode == Mode::Care {
        loss::scoped_diversity(cfg, params.queries.view(), tc.diversity_scope)
    } else {
        (0.0, params.queries.clone())
    };
    if let Some(acc) = grads.as_mut() {
        if cfg.mode == Mode::Care && tc.alpha != 0.0 {
            acc.queries.scaled_add(tc.alpha, &div_grad);
        }
    }
    Ok((LossParts { rec, div, total: total_loss(rec, div, tc.alpha) }, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub rec_loss: f64,
    pub div_loss: f64,
    pub total_loss: f64,
    pub valid_recall10: Option<f64>,
    pub valid_ndcg10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub wall_time_secs: f64,
}

pub struct TrainData<'a> {
    pub train: &'a [EncodedExample],
    pub valid: &'a [EncodedExample],
    pub trie: &'a PrefixTrie,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Mean Recall@k and NDCG@k of beam-decoded rankings.
pub fn ranking_scores(
    params: &ModelParams,
    cfg: &ModelConfig,
    trie: &PrefixTrie,
    examples: &[EncodedExample],
    beam: usize,
    k: usize,
) -> Result<(f64, f64)> {
    let mut recall = 0.0;
    let mut ndcg = 0.0;
    for ex in examples {
        let ranked = beam_generate(params, cfg, trie, &ex.history, beam, k)?.item_ids();
        recall += recall_at_k(&ranked, ex.target_item, k);
        ndcg += ndcg_at_k(&ranked, ex.target_item, k);
    }
    let n = examples.len().max(1) as f64;
    Ok((recall / n, ndcg / n))
}

/// Mini-batch Adam on the total loss with seeded per-epoch shuffling.
///
/// Validates after every epoch; returns the parameters of the best valid
/// Recall@10 epoch (the last epoch when there is no validation data).
pub fn fit(params: ModelParams, cfg: &ModelConfig, data: &TrainData<'_>, tc: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    tc.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let start = Instant::now();
    let valid = &data.valid[..tc.valid_limit.unwrap_or(usize::MAX).min(data.valid.len())];
    let mut rng = seeded_rng(tc.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut params = params;
    let mut opt = Adam::new(&params, tc.learning_rate);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let diverged = || Error::Diverged { epoch, last_finite: epoch.checked_sub(1).filter(|&e| e > 0) };
        let mut sums = LossParts { rec: 0.0, div: 0.0, total: 0.0 };
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (parts, grads) = match batch_objective(&params, cfg, tc, &batch, true) {
                Err(Error::NumericalOverflow) => return Err(diverged()),
                other => other?,
            };
            if !parts.total.is_finite() {
                return Err(diverged());
            }
            let w = batch.len() as f64 / data.train.len() as f64;
            sums.rec += w * parts.rec;
            sums.div += w * parts.div;
            sums.total += w * parts.total;
            opt.step(&mut params, &grads.expect("gradient requested"), cfg.precision);
            if !params.all_finite() {
                return Err(diverged());
            }
        }
        let scores = if valid.is_empty() {
            None
        } else {
            Some(ranking_scores(&params, cfg, data.trie, valid, tc.valid_beam, VALID_K)?)
        };
        log::info!(
            "epoch {epoch}: rec {:.4} div {:.4} total {:.4} valid R@10 {:?}",
            sums.rec,
            sums.div,
            sums.total,
            scores.map(|s| s.0)
        );
        epochs.push(EpochStats {
            epoch,
            rec_loss: sums.rec,
            div_loss: sums.div,
            total_loss: sums.total,
            valid_recall10: scores.map(|s| s.0),
            valid_ndcg10: scores.map(|s| s.1),
        });
        match scores {
            Some((recall, _)) => {
                if best.as_ref().is_none_or(|b| recall > b.0) {
                    best = Some((recall, epoch, params.clone()));
                } else if epoch - best.as_ref().map_or(0, |b| b.1) >= tc.early_stop_patience {
                    stopped_early = true;
                    break;
                }
            }
            None => best = Some((f64::NAN, epoch, params.clone())),
        }
    }
    let (_, best_epoch, params) = best.ok_or_else(|| Error::Config("max_epochs must be positive".into()))?;
    Ok(FitOutcome {
        params,
        log: TrainLog { epochs, best_epoch, stopped_early, wall_time_secs: start.elapsed().as_secs_f64() },
    })
}
