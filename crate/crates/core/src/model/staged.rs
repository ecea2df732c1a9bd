//! Naive staged re-encoding: one fresh sequence per stage.
//!
//! Stage `t` re-encodes the history truncated to its first `g(t)` levels per
//! item, followed by `Q1 c1 .. Qt`, from scratch. Every position keeps the
//! positional embedding of its role in the full layout. This is the costly
//! side of the complexity comparison and the reference the single-pass
//! progressive mask must reproduce.

use ndarray::Array2;

use super::config::{HistoryRule, Mode, ModelConfig};
use super::engine::{Engine, KvCache};
use super::forward::{check_finite, position_input, SequenceInputs};
use super::layout::{build_layout, Role};
use super::params::ModelParams;
use crate::error::{Error, Result};

fn stage_granularity(cfg: &ModelConfig, stage: usize) -> usize {
    cfg.visible_levels(stage)
}

/// Full-layout positions included in stage `stage`'s fresh sequence.
pub fn stage_positions(cfg: &ModelConfig, roles: &[Role], stage: usize) -> Vec<usize> {
    let g = stage_granularity(cfg, stage);
    roles
        .iter()
        .enumerate()
        .filter(|(_, role)| match **role {
            Role::History { level, .. } => level < g,
            Role::Query { stage: s, .. } => s <= stage,
            Role::Generated { stage: s } => s < stage,
        })
        .map(|(p, _)| p)
        .collect()
}

/// Whether `row` may see `col` inside a stage's fresh sequence (`col` earlier).
fn staged_visible(cfg: &ModelConfig, row: Role, col: Role) -> bool {
    match (row, col) {
        (Role::History { level: rl, .. }, Role::History { level: cl, .. }) => match cfg.history_rule {
            HistoryRule::Causal => true,
            // A level-`rl` token only ever sees levels present in the coarsest
            // stage that contains it.
            HistoryRule::LevelConsistent => {
                let coarsest = (0..cfg.levels)
                    .map(|s| stage_granularity(cfg, s))
                    .find(|&g| g > rl)
                    .unwrap_or(cfg.levels);
                cl < coarsest
            }
        },
        (Role::History { .. }, _) => false,
        (Role::Query { stage, .. } | Role::Generated { stage }, Role::History { level, .. }) => {
            level < stage_granularity(cfg, stage)
        }
        _ => true,
    }
}

/// Per-stage readout logits (`l x V`) computed by staged re-encoding.
pub fn staged_reference_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    inputs: &SequenceInputs<'_>,
) -> Result<Array2<f64>> {
    if cfg.mode != Mode::Care {
        return Err(Error::Config("staged reference requires care mode".into()));
    }
    let items = inputs.history.len() / cfg.levels;
    let layout = build_layout(items, cfg)?;
    inputs.validate(&layout, cfg)?;
    let engine = Engine::new(params, cfg);
    let mut out = Array2::zeros((cfg.levels, cfg.vocab_size()));
    for stage in 0..cfg.levels {
        let included = stage_positions(cfg, &layout.roles, stage);
        let roles: Vec<Role> = included.iter().map(|&p| layout.roles[p]).collect();
        let feeds: Vec<_> = roles.iter().map(|&r| position_input(cfg, r, inputs)).collect();
        let mut cache = KvCache::new(cfg);
        let hidden = engine.extend(&mut cache, &feeds, &included, |r, c| {
            c <= r && staged_visible(cfg, roles[r], roles[c])
        });
        let last = hidden.nrows() - 1;
        out.row_mut(stage).assign(&engine.logits(hidden.row(last)));
    }
    check_finite(&out)?;
    Ok(out)
}

/// Length of each stage's fresh sequence for `items` history items.
pub fn staged_sequence_lengths(cfg: &ModelConfig, items: usize) -> Result<Vec<usize>> {
    let layout = build_layout(items, cfg)?;
    Ok((0..cfg.levels)
        .map(|s| stage_positions(cfg, &layout.roles, s).len())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::QueryCounts;
    use crate::model::forward::readout_logits;
    use crate::model::mask::build_progressive_mask;

    fn tiny(layers: usize, rule: HistoryRule) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            ff_dim: 24,
            n_layers: layers,
            codes_per_level: 6,
            query_counts: QueryCounts(vec![1, 1, 1, 1]),
            max_history: 3,
            history_rule: rule,
            init_seed: 7,
            ..ModelConfig::default()
        }
    }

    const HISTORY: [usize; 12] = [0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5];
    const TEACHER: [usize; 3] = [1, 2, 3];

    fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
            .fold(0.0, f64::max)
    }

    fn both(cfg: &ModelConfig) -> (Array2<f64>, Array2<f64>) {
        let params = ModelParams::init(cfg).unwrap();
        let inputs = SequenceInputs { history: &HISTORY, teacher: &TEACHER };
        let layout = build_layout(3, cfg).unwrap();
        let mask = build_progressive_mask(&layout, cfg);
        let single = readout_logits(&params, cfg, &layout, &mask, &inputs).unwrap();
        let staged = staged_reference_forward(&params, cfg, &inputs).unwrap();
        (single, staged)
    }

    #[test]
    fn first_stage_length() {
        let cfg = tiny(1, HistoryRule::LevelConsistent);
        // M * g(t) + n1 + .. + nt + (t - 1)
        assert_eq!(staged_sequence_lengths(&cfg, 3).unwrap()[0], 3 + 1);
        let wide = ModelConfig { query_counts: QueryCounts(vec![2, 1, 1, 1]), ..cfg };
        assert_eq!(staged_sequence_lengths(&wide, 3).unwrap(), vec![5, 10, 15, 20]);
    }

    #[test]
    fn single_layer_matches_under_either_history_rule() {
        for rule in [HistoryRule::LevelConsistent, HistoryRule::Causal] {
            let (single, staged) = both(&tiny(1, rule));
            assert!(max_rel(&single, &staged) < 1e-10);
        }
    }

    #[test]
    fn deep_model_needs_level_consistent_history() {
        let (single, staged) = both(&tiny(2, HistoryRule::LevelConsistent));
        assert!(max_rel(&single, &staged) < 1e-10);
        // With causal history rows, a second layer carries finer levels into
        // coarse history keys; only the last stage (full history) still agrees.
        let (single, staged) = both(&tiny(2, HistoryRule::Causal));
        assert!(max_rel(&single, &staged) > 1e-6);
        let last = single.nrows() - 1;
        assert!(max_rel(
            &single.slice(ndarray::s![last.., ..]).to_owned(),
            &staged.slice(ndarray::s![last.., ..]).to_owned()
        ) < 1e-10);
    }

    #[test]
    fn full_schedule_reduces_to_causal_forward() {
        let cfg = ModelConfig { schedule: vec![4, 4, 4, 4], ..tiny(2, HistoryRule::Causal) };
        let (single, staged) = both(&cfg);
        assert!(max_rel(&single, &staged) < 1e-10);
    }

    #[test]
    fn baseline_rejected() {
        let cfg = ModelConfig { mode: Mode::Baseline, ..tiny(1, HistoryRule::Causal) };
        let params = ModelParams::init(&cfg).unwrap();
        let inputs = SequenceInputs { history: &HISTORY, teacher: &TEACHER };
        assert!(staged_reference_forward(&params, &cfg, &inputs).is_err());
    }
}
