//! Trie-constrained beam search and the teacher-forced analysis pass.
//!
//! Both run on the cached [`Engine`]: the history is encoded once per user
//! and every hypothesis extends a copy of that cache with its own stage
//! blocks (`c(t-1)` followed by the stage's queries in care mode, the single
//! generated code in baseline mode).

mod dump;

use std::cmp::Ordering;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::ItemIdx;
use crate::error::{Error, Result};
use crate::model::forward::position_input;
use crate::model::{
    build_layout, build_progressive_mask, Engine, KvCache, ModelConfig, ModelParams, PositionInput, Role,
    SequenceInputs, SequenceLayout,
};
use crate::tokenizer::{PrefixTrie, SemanticTable};

pub use dump::{format_predictions, parse_predictions, read_predictions, write_predictions, PredictionRow};

pub const DEFAULT_BEAM_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub codes: Vec<usize>,
    /// Sum of chosen-code log-probabilities under the renormalised valid set.
    pub log_prob: f64,
}

/// Items in decreasing score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<(ItemIdx, f64)>,
    /// Fewer than the requested number of items were found.
    pub underfull: bool,
}

impl RankedList {
    pub fn item_ids(&self) -> Vec<ItemIdx> {
        self.items.iter().map(|&(i, _)| i).collect()
    }
}

/// Item-major history codes for a list of items.
pub fn history_codes(table: &SemanticTable, items: &[ItemIdx]) -> Vec<usize> {
    items.iter().flat_map(|&i| table.id_of(i).codes().iter().copied()).collect()
}

/// Log-probabilities of `codes` at `level`, renormalised over those codes only.
pub(crate) fn renormalized_log_probs(cfg: &ModelConfig, logits: ArrayView1<f64>, level: usize, codes: &[usize]) -> Vec<f64> {
    let vals: Vec<f64> = codes.iter().map(|&c| logits[cfg.token(level, c)]).collect();
    let max = vals.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    vals.iter().map(|v| v - lse).collect()
}

/// Higher score first, then the lexicographically smaller code sequence.
fn rank_order(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.codes.cmp(&b.codes))
}

fn check_history(cfg: &ModelConfig, history: &[usize]) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    if !history.len().is_multiple_of(cfg.levels) {
        return Err(Error::DimensionMismatch { expected: cfg.levels, actual: history.len() % cfg.levels });
    }
    if let Some(&bad) = history.iter().find(|&&c| c >= cfg.codes_per_level) {
        return Err(Error::InvalidToken { token: bad, vocab: cfg.codes_per_level });
    }
    Ok(history.len() / cfg.levels)
}

/// Positions appended when moving to stage `stage`, ending at its readout.
fn stage_block(layout: &SequenceLayout, stage: usize) -> std::ops::RangeInclusive<usize> {
    let start = if stage == 0 { layout.history_len() } else { layout.readouts[stage - 1] + 1 };
    start..=layout.readouts[stage]
}

fn block_inputs(cfg: &ModelConfig, layout: &SequenceLayout, positions: &[usize], codes: &[usize]) -> Vec<PositionInput> {
    positions
        .iter()
        .map(|&p| match layout.roles[p] {
            Role::Query { stage, index } => PositionInput::Query(cfg.query_counts.offset(stage) + index),
            Role::Generated { stage } => PositionInput::Token(cfg.token(stage, codes[stage])),
            Role::History { .. } => unreachable!("history is encoded up front"),
        })
        .collect()
}

struct Live {
    hyp: BeamHypothesis,
    cache: KvCache,
}

/// Top-`k` items for one history (item-major codes) by beam search of width
/// `beam`, constrained to the trie.
pub fn beam_generate(
    params: &ModelParams,
    cfg: &ModelConfig,
    trie: &PrefixTrie,
    history: &[usize],
    beam: usize,
    k: usize,
) -> Result<RankedList> {
    if beam == 0 || k > beam {
        return Err(Error::Config(format!("need 1 <= k <= beam, got k={k}, beam={beam}")));
    }
    let items = check_history(cfg, history)?;
    let layout = build_layout(items, cfg)?;
    let mask = build_progressive_mask(&layout, cfg);
    let engine = Engine::new(params, cfg);
    let visible = |r: usize, c: usize| mask.get(r, c);

    let inputs = SequenceInputs { history, teacher: &[] };
    let hist_inputs: Vec<PositionInput> =
        layout.roles[..layout.history_len()].iter().map(|&r| position_input(cfg, r, &inputs)).collect();
    let hist_pos: Vec<usize> = (0..layout.history_len()).collect();
    let mut root_cache = KvCache::new(cfg);
    let hist_hidden = engine.extend(&mut root_cache, &hist_inputs, &hist_pos, visible);
    let mut root_logits = Some(engine.logits(hist_hidden.row(hist_hidden.nrows() - 1)));

    let mut live = vec![Live { hyp: BeamHypothesis { codes: Vec::new(), log_prob: 0.0 }, cache: root_cache }];
    for stage in 0..cfg.levels {
        let positions: Vec<usize> = stage_block(&layout, stage).collect();
        let mut candidates: Vec<(BeamHypothesis, usize)> = Vec::new();
        for (parent, h) in live.iter_mut().enumerate() {
            let logits: Array1<f64> = if positions.is_empty() {
                root_logits.take().expect("empty block only at the first baseline stage")
            } else {
                let feeds = block_inputs(cfg, &layout, &positions, &h.hyp.codes);
                let hidden = engine.extend(&mut h.cache, &feeds, &positions, visible);
                engine.logits(hidden.row(hidden.nrows() - 1))
            };
            let valid = trie.valid_next(&h.hyp.codes);
            let lps = renormalized_log_probs(cfg, logits.view(), stage, &valid);
            for (&code, lp) in valid.iter().zip(lps) {
                let mut codes = h.hyp.codes.clone();
                codes.push(code);
                candidates.push((BeamHypothesis { codes, log_prob: h.hyp.log_prob + lp }, parent));
            }
        }
        candidates.sort_by(|a, b| rank_order(&a.0, &b.0));
        candidates.truncate(beam);
        live = candidates
            .into_iter()
            .map(|(hyp, parent)| Live { hyp, cache: live[parent].cache.clone() })
            .collect();
    }

    let mut out = Vec::with_capacity(k);
    for h in live.iter().take(k) {
        let item = trie
            .ground(&h.hyp.codes)
            .ok_or_else(|| Error::UnknownItem(format!("{:?}", h.hyp.codes)))?;
        out.push((item, h.hyp.log_prob));
    }
    let underfull = out.len() < k;
    Ok(RankedList { items: out, underfull })
}

/// Per-stage outcome of the teacher-forced pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePrediction {
    /// Argmax over the stage's level codes.
    pub predicted: usize,
    pub hit: bool,
    /// Softmax over the stage's level codes (length `codes_per_level`).
    pub distribution: Vec<f64>,
}

/// One forward with the target's codes in the generated positions; reads each
/// stage's distribution over its level's codes.
pub fn teacher_forced_tokens(
    params: &ModelParams,
    cfg: &ModelConfig,
    history: &[usize],
    target: &[usize],
) -> Result<Vec<StagePrediction>> {
    let items = check_history(cfg, history)?;
    if target.len() != cfg.levels {
        return Err(Error::DimensionMismatch { expected: cfg.levels, actual: target.len() });
    }
    let layout = build_layout(items, cfg)?;
    let inputs = SequenceInputs { history, teacher: target };
    inputs.validate(&layout, cfg)?;
    let mask = build_progressive_mask(&layout, cfg);
    let engine = Engine::new(params, cfg);
    let feeds: Vec<PositionInput> = layout.roles.iter().map(|&r| position_input(cfg, r, &inputs)).collect();
    let positions: Vec<usize> = (0..layout.len()).collect();
    let mut cache = KvCache::new(cfg);
    let hidden = engine.extend(&mut cache, &feeds, &positions, |r, c| mask.get(r, c));

    let all_codes: Vec<usize> = (0..cfg.codes_per_level).collect();
    Ok((0..cfg.levels)
        .map(|stage| {
            let logits = engine.logits(hidden.row(layout.readouts[stage]));
            let distribution: Vec<f64> = renormalized_log_probs(cfg, logits.view(), stage, &all_codes)
                .into_iter()
                .map(f64::exp)
                .collect();
            let predicted = distribution
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
                .0;
            StagePrediction { predicted, hit: predicted == target[stage], distribution }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{readout_logits, Mode, QueryCounts};
    use crate::tokenizer::SemanticId;
    use rand::{Rng, SeedableRng};

    fn tiny(mode: Mode, k_eff: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            ff_dim: 12,
            n_layers: 2,
            codes_per_level: k_eff,
            query_counts: QueryCounts(vec![1, 2, 1, 2]),
            mode,
            max_history: 4,
            init_seed: 11,
            ..ModelConfig::default()
        }
    }

    /// A 64-item table covering `4 x 4 x 2 x 2` code combinations.
    fn full_table() -> SemanticTable {
        let mut ids = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..2 {
                    for d in 0..2 {
                        ids.push(SemanticId(vec![a, b, c, d]));
                    }
                }
            }
        }
        SemanticTable::from_ids(ids, 5).unwrap()
    }

    /// Scores every full ID with an independent full-sequence pass.
    fn brute_force(params: &ModelParams, cfg: &ModelConfig, trie: &PrefixTrie, table: &SemanticTable, history: &[usize]) -> Vec<(ItemIdx, Vec<usize>, f64)> {
        let layout = build_layout(history.len() / cfg.levels, cfg).unwrap();
        let mask = build_progressive_mask(&layout, cfg);
        let mut out: Vec<_> = table
            .ids()
            .iter()
            .enumerate()
            .map(|(item, id)| {
                let codes = id.codes();
                let inputs = SequenceInputs { history, teacher: codes };
                let logits = readout_logits(params, cfg, &layout, &mask, &inputs).unwrap();
                let score = (0..cfg.levels)
                    .map(|t| {
                        let valid = trie.valid_next(&codes[..t]);
                        let lps = renormalized_log_probs(cfg, logits.row(t), t, &valid);
                        lps[valid.iter().position(|&c| c == codes[t]).unwrap()]
                    })
                    .sum::<f64>();
                (item, codes.to_vec(), score)
            })
            .collect();
        out.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.1.cmp(&b.1)));
        out
    }

    #[test]
    fn wide_beam_equals_exhaustive_enumeration() {
        let table = full_table();
        let trie = PrefixTrie::build(&table);
        for mode in [Mode::Care, Mode::Baseline] {
            let cfg = tiny(mode, 5);
            let params = ModelParams::init(&cfg).unwrap();
            let history = history_codes(&table, &[3, 17, 40]);
            let got = beam_generate(&params, &cfg, &trie, &history, 64, 64).unwrap();
            let want = brute_force(&params, &cfg, &trie, &table, &history);
            assert!(!got.underfull);
            assert_eq!(got.item_ids(), want.iter().map(|w| w.0).collect::<Vec<_>>());
            for (&(_, s), w) in got.items.iter().zip(&want) {
                assert!((s - w.2).abs() <= 1e-12 * w.2.abs().max(1.0), "{s} vs {}", w.2);
            }
        }
    }

    #[test]
    fn single_item_catalog_is_forced() {
        let table = SemanticTable::from_ids(vec![SemanticId(vec![2, 0, 1, 3])], 5).unwrap();
        let trie = PrefixTrie::build(&table);
        let cfg = tiny(Mode::Care, 5);
        let params = ModelParams::init(&cfg).unwrap();
        let got = beam_generate(&params, &cfg, &trie, &[2, 0, 1, 3], 20, 1).unwrap();
        assert_eq!(got.items, vec![(0, 0.0)]);
    }

    #[test]
    fn underfull_when_catalog_is_small() {
        let table = SemanticTable::from_ids(vec![SemanticId(vec![0, 0, 0, 0]), SemanticId(vec![1, 0, 0, 0])], 5).unwrap();
        let trie = PrefixTrie::build(&table);
        let cfg = tiny(Mode::Care, 5);
        let params = ModelParams::init(&cfg).unwrap();
        let got = beam_generate(&params, &cfg, &trie, &[0, 0, 0, 0], 20, 5).unwrap();
        assert!(got.underfull);
        assert_eq!(got.items.len(), 2);
    }

    #[test]
    fn ranked_lists_are_valid_and_sorted() {
        let table = full_table();
        let trie = PrefixTrie::build(&table);
        let cfg = tiny(Mode::Care, 5);
        let params = ModelParams::init(&cfg).unwrap();
        let history = history_codes(&table, &[5, 6]);
        let mut prev_top = f64::NEG_INFINITY;
        for beam in [1, 2, 5, 10, 20, 64] {
            let got = beam_generate(&params, &cfg, &trie, &history, beam, beam.min(10)).unwrap();
            assert!(got.items.windows(2).all(|w| w[0].1 >= w[1].1));
            let mut ids = got.item_ids();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), got.items.len());
            // Wider beams never lose the best hypothesis.
            assert!(got.items[0].1 >= prev_top);
            prev_top = got.items[0].1;
        }
        assert!(beam_generate(&params, &cfg, &trie, &history, 5, 6).is_err());
        assert!(matches!(beam_generate(&params, &cfg, &trie, &[], 5, 5), Err(Error::EmptyHistory)));
    }

    #[test]
    fn teacher_forced_distributions_are_normalised() {
        let cfg = tiny(Mode::Care, 5);
        let params = ModelParams::init(&cfg).unwrap();
        let preds = teacher_forced_tokens(&params, &cfg, &[1, 2, 3, 4, 0, 1, 0, 1], &[3, 1, 4, 0]).unwrap();
        assert_eq!(preds.len(), 4);
        for (p, target) in preds.iter().zip([3, 1, 4, 0]) {
            assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(p.hit, p.predicted == target);
        }
    }

    #[test]
    fn uniform_model_hits_at_chance() {
        let k_eff = 5;
        let cfg = tiny(Mode::Care, k_eff);
        let mut params = ModelParams::init(&cfg).unwrap();
        params.head_w.fill(0.0);
        params.head_b.fill(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 2000;
        let mut hits = vec![0usize; cfg.levels];
        for _ in 0..n {
            let target: Vec<usize> = (0..cfg.levels).map(|_| rng.random_range(0..k_eff)).collect();
            for (t, p) in teacher_forced_tokens(&params, &cfg, &[0, 1, 2, 3], &target).unwrap().iter().enumerate() {
                hits[t] += p.hit as usize;
            }
        }
        let p = 1.0 / k_eff as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for h in hits {
            assert!((h as f64 / n as f64 - p).abs() <= 3.0 * se, "hit rate {}", h as f64 / n as f64);
        }
    }
}
