//! Attention-pair accounting for single-pass versus staged history encoding.

use serde::Serialize;

use super::config::{HistoryRule, ModelConfig};
use super::layout::{build_layout, Role};
use super::mask::{build_progressive_mask, AttentionMask};
use super::staged::stage_positions;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingScheme {
    /// Full history encoded once under the progressive mask.
    SinglePass,
    /// History re-encoded from scratch for every stage.
    Staged,
}

/// Number of visible `(row, col)` pairs in `mask`.
pub fn count_mask_pairs(mask: &AttentionMask) -> usize {
    mask.count_visible()
}

/// History self-attention pairs needed to encode `items` history items.
pub fn count_attention_pairs(cfg: &ModelConfig, items: usize, scheme: EncodingScheme) -> Result<usize> {
    let layout = build_layout(items, cfg)?;
    let mask = build_progressive_mask(&layout, cfg);
    let hist = layout.history_len();
    Ok(match scheme {
        EncodingScheme::SinglePass => (0..hist)
            .map(|r| (0..hist).filter(|&c| mask.get(r, c)).count())
            .sum(),
        EncodingScheme::Staged => (0..cfg.levels)
            .map(|stage| {
                let included: Vec<usize> = stage_positions(cfg, &layout.roles, stage)
                    .into_iter()
                    .filter(|&p| layout.roles[p].is_history())
                    .collect();
                included
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| included[..=i].iter().filter(|&&c| history_sees(cfg, &layout.roles, r, c)).count())
                    .sum::<usize>()
            })
            .sum(),
    })
}

fn history_sees(cfg: &ModelConfig, roles: &[Role], row: usize, col: usize) -> bool {
    match (cfg.history_rule, roles[row], roles[col]) {
        (HistoryRule::Causal, _, _) => true,
        (HistoryRule::LevelConsistent, Role::History { level: rl, .. }, Role::History { level: cl, .. }) => {
            cl < cfg.history_reach(rl).max(rl + 1)
        }
        _ => false,
    }
}

/// Ratio of the `M^2` coefficients of staged and single-pass history pair
/// counts under dense causal attention: `sum_t g(t)^2 / l^2`.
///
/// Both counts are quadratic in `M` with no constant term, so the leading
/// coefficient is `(f(2) - 2 f(1)) / 2`, read off exact counts at `M = 1, 2`.
pub fn dense_leading_order_ratio(cfg: &ModelConfig) -> Result<f64> {
    let dense = ModelConfig {
        history_rule: HistoryRule::Causal,
        max_history: cfg.max_history.max(2),
        ..cfg.clone()
    };
    let lead = |scheme| -> Result<i64> {
        let f1 = count_attention_pairs(&dense, 1, scheme)? as i64;
        let f2 = count_attention_pairs(&dense, 2, scheme)? as i64;
        Ok(f2 - 2 * f1)
    };
    Ok(lead(EncodingScheme::Staged)? as f64 / lead(EncodingScheme::SinglePass)? as f64)
}
