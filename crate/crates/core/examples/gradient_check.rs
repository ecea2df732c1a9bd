//! Central finite differences against the tape gradient of the total loss,
//! including the reasoning queries.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use care::dataset::TrainingExample;
use care::model::{ModelConfig, ModelParams, QueryCounts};
use care::tokenizer::{SemanticId, SemanticTable};
use care::training::{encode_examples, finite_difference_check, TrainConfig};

fn main() -> care::Result<()> {
    let ids = (0..6).map(|i| SemanticId(vec![i % 3, i % 2, i, 0])).collect();
    let table = SemanticTable::from_ids(ids, 7)?;
    let examples = [
        TrainingExample { user: 0, history: vec![0, 1], target: 2 },
        TrainingExample { user: 1, history: vec![3, 4], target: 5 },
    ];
    let batch = encode_examples(&examples, &table);
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        ff_dim: 16,
        codes_per_level: 7,
        query_counts: QueryCounts(vec![1, 1, 2, 2]),
        max_history: 2,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&cfg)?;
    let tc = TrainConfig { alpha: 0.7, ..TrainConfig::default() };
    let report = finite_difference_check(&params, &cfg, &tc, &batch, 30, 1e-5, 1)?;
    for p in report.probes.iter().take(12) {
        println!(
            "{:<22} [{:>2},{:>2}] analytic {:>12.6e} numeric {:>12.6e} rel {:.1e}",
            p.tensor, p.row, p.col, p.analytic, p.numeric, p.rel_error
        );
    }
    println!("max relative error over {} probes: {:.2e}", report.probes.len(), report.max_rel_error);
    Ok(())
}
