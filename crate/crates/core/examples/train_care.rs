//! Train the causal baseline and the query-anchored model on the same small
//! corpus and compare validation Recall@10.
//!
//! ```bash
//! RUST_LOG=info cargo run --release --example train_care
//! ```

use care::dataset::{build_examples, generate_synthetic, temporal_split, SplitRatios, SynthConfig};
use care::model::{Mode, ModelConfig, ModelParams, QueryCounts};
use care::tokenizer::{tokenize, PrefixTrie, TokenizerConfig};
use care::training::{encode_examples, fit, TrainConfig, TrainData};

fn main() -> care::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let corpus = generate_synthetic(&SynthConfig { n_users: 400, ..SynthConfig::default() }, 3)?;
    let tok = TokenizerConfig { codebook_size: 16, seed: 3, ..TokenizerConfig::default() };
    let (_, table) = tokenize(corpus.embeddings.vectors.view(), &tok)?;
    let trie = PrefixTrie::build(&table);
    let split = temporal_split(&corpus.log, SplitRatios::default())?;
    let examples = build_examples(&split, 8);
    let train = encode_examples(&examples.train, &table);
    let valid = encode_examples(&examples.valid, &table);
    let data = TrainData { train: &train, valid: &valid, trie: &trie };

    let tc = TrainConfig { learning_rate: 3e-3, max_epochs: 8, early_stop_patience: 3, ..TrainConfig::default() };
    for (mode, queries) in [(Mode::Baseline, vec![1, 1, 1, 1]), (Mode::Care, vec![1, 1, 2, 2])] {
        let cfg = ModelConfig {
            codes_per_level: table.codes_per_level(),
            mode,
            query_counts: QueryCounts(queries),
            ..ModelConfig::default()
        };
        let out = fit(ModelParams::init(&cfg)?, &cfg, &data, &tc)?;
        let best = &out.log.epochs[out.log.best_epoch - 1];
        println!(
            "{mode:?}: best epoch {} of {}, rec loss {:.3}, div loss {:.3}, valid R@10 {:.4}, {:.1}s",
            out.log.best_epoch,
            out.log.epochs.len(),
            best.rec_loss,
            best.div_loss,
            best.valid_recall10.unwrap_or(f64::NAN),
            out.log.wall_time_secs
        );
    }
    Ok(())
}
