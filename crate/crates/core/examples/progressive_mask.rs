//! The progressive attention mask: what each position sees, the equivalence
//! with staged re-encoding, and the attention pairs it saves.
//!
//! ```bash
//! cargo run --release --example progressive_mask
//! ```

use care::model::{
    build_layout, build_progressive_mask, count_attention_pairs, dense_leading_order_ratio, readout_logits,
    staged_reference_forward, EncodingScheme, HistoryRule, ModelConfig, ModelParams, QueryCounts, SequenceInputs,
};

fn main() -> care::Result<()> {
    let cfg = ModelConfig {
        d_model: 16,
        n_heads: 2,
        ff_dim: 32,
        codes_per_level: 5,
        query_counts: QueryCounts(vec![1, 1, 2, 2]),
        max_history: 2,
        ..ModelConfig::default()
    };
    let layout = build_layout(2, &cfg)?;
    let mask = build_progressive_mask(&layout, &cfg);
    println!("layout ({} positions), readouts at {:?}", layout.len(), layout.readouts);
    for (r, role) in layout.roles.iter().enumerate() {
        let line: String = mask.row(r).iter().map(|&v| if v { '#' } else { '.' }).collect();
        println!("  {line}  {role:?}");
    }

    let history = [0, 1, 2, 3, 4, 0, 1, 2];
    let teacher = [3, 1, 4];
    let inputs = SequenceInputs { history: &history, teacher: &teacher };
    let params = ModelParams::init(&cfg)?;
    let single = readout_logits(&params, &cfg, &layout, &mask, &inputs)?;
    let staged = staged_reference_forward(&params, &cfg, &inputs)?;
    let diff = single.iter().zip(&staged).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("single pass vs staged re-encoding: max |diff| = {diff:.2e}");

    let long = ModelConfig { max_history: 16, ..cfg.clone() };
    let dense = ModelConfig { history_rule: HistoryRule::Causal, ..long.clone() };
    println!("dense leading-order ratio staged/single: {}", dense_leading_order_ratio(&long)?);
    println!("history x history pairs   single  staged   (causal history rows: single  staged)");
    for m in [1, 2, 4, 8, 16] {
        let pairs = |c: &ModelConfig, s| count_attention_pairs(c, m, s);
        println!(
            "  M={m:>2}                  {:>7} {:>7}                         {:>7} {:>7}",
            pairs(&long, EncodingScheme::SinglePass)?,
            pairs(&long, EncodingScheme::Staged)?,
            pairs(&dense, EncodingScheme::SinglePass)?,
            pairs(&dense, EncodingScheme::Staged)?
        );
    }
    Ok(())
}
