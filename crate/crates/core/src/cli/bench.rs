use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::forward::position_input;
use crate::model::{
    build_layout, build_progressive_mask, count_attention_pairs, dense_leading_order_ratio, staged_reference_forward,
    EncodingScheme, Engine, KvCache, Mode, ModelConfig, ModelParams, PositionInput, SequenceInputs,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub history_items: usize,
    pub single_pass_pairs: usize,
    pub staged_pairs: usize,
    pub pair_ratio: f64,
    pub single_pass_median_secs: f64,
    pub staged_median_secs: f64,
    pub time_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    /// Staged over single-pass pair count, leading order in history length,
    /// for dense causal history attention.
    pub dense_leading_order_ratio: f64,
    pub rows: Vec<BenchRow>,
}

fn median_secs(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[reps / 2])
}

/// Attention-pair counts and median forward times of the single progressive
/// pass against staged re-encoding, for each history length.
pub fn bench_mask(cfg: &ModelConfig, history_items: &[usize], repetitions: usize) -> Result<BenchReport> {
    if cfg.mode != Mode::Care {
        return Err(Error::Config("bench-mask needs a care-mode model".into()));
    }
    if repetitions == 0 {
        return Err(Error::Config("bench-mask needs at least one repetition".into()));
    }
    let cfg = ModelConfig { max_history: history_items.iter().copied().max().unwrap_or(1).max(cfg.max_history), ..cfg.clone() };
    let params = ModelParams::init(&cfg)?;
    let mut rows = Vec::new();
    for &m in history_items {
        let single = count_attention_pairs(&cfg, m, EncodingScheme::SinglePass)?;
        let staged = count_attention_pairs(&cfg, m, EncodingScheme::Staged)?;
        let history: Vec<usize> = (0..m * cfg.levels).map(|i| (i * 7 + 3) % cfg.codes_per_level).collect();
        let teacher: Vec<usize> = (0..cfg.levels).map(|t| t % cfg.codes_per_level).collect();
        let inputs = SequenceInputs { history: &history, teacher: &teacher };
        let layout = build_layout(m, &cfg)?;
        inputs.validate(&layout, &cfg)?;
        let engine = Engine::new(&params, &cfg);
        let feeds: Vec<PositionInput> = layout.roles.iter().map(|&r| position_input(&cfg, r, &inputs)).collect();
        let positions: Vec<usize> = (0..layout.len()).collect();
        let single_t = median_secs(repetitions, || {
            let mask = build_progressive_mask(&layout, &cfg);
            let mut cache = KvCache::new(&cfg);
            let hidden = engine.extend(&mut cache, &feeds, &positions, |r, c| mask.get(r, c));
            for &r in &layout.readouts {
                std::hint::black_box(engine.logits(hidden.row(r)));
            }
            Ok(())
        })?;
        let staged_t = median_secs(repetitions, || {
            std::hint::black_box(staged_reference_forward(&params, &cfg, &inputs)?);
            Ok(())
        })?;
        rows.push(BenchRow {
            history_items: m,
            single_pass_pairs: single,
            staged_pairs: staged,
            pair_ratio: staged as f64 / single as f64,
            single_pass_median_secs: single_t,
            staged_median_secs: staged_t,
            time_ratio: staged_t / single_t,
        });
    }
    Ok(BenchReport { repetitions, dense_leading_order_ratio: dense_leading_order_ratio(&cfg)?, rows })
}
