//! Wall time of one progressive-mask pass against staged re-encoding.
//!
//! ```bash
//! cargo run --release --example bench_mask
//! ```

use care::cli::bench_mask;
use care::model::ModelConfig;

fn main() -> care::Result<()> {
    let cfg = ModelConfig { max_history: 16, ..ModelConfig::default() };
    let report = bench_mask(&cfg, &[1, 2, 4, 8, 16], 21)?;
    println!("dense leading-order pair ratio: {}", report.dense_leading_order_ratio);
    println!("{:>3} {:>8} {:>8} {:>6} {:>10} {:>10} {:>6}", "M", "single", "staged", "ratio", "single ms", "staged ms", "time");
    for r in &report.rows {
        println!(
            "{:>3} {:>8} {:>8} {:>6.3} {:>10.3} {:>10.3} {:>6.2}",
            r.history_items,
            r.single_pass_pairs,
            r.staged_pairs,
            r.pair_ratio,
            r.single_pass_median_secs * 1e3,
            r.staged_median_secs * 1e3,
            r.time_ratio
        );
    }
    Ok(())
}
