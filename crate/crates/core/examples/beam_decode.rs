//! Trie-constrained beam search and the teacher-forced pass for one user.
//!
//! ```bash
//! cargo run --release --example beam_decode
//! ```

use care::dataset::{build_examples, generate_synthetic, temporal_split, SplitRatios, SynthConfig};
use care::decoding::{beam_generate, teacher_forced_tokens};
use care::model::{ModelConfig, ModelParams, QueryCounts};
use care::tokenizer::{tokenize, PrefixTrie, TokenizerConfig};
use care::training::{encode_examples, fit, TrainConfig, TrainData};

fn main() -> care::Result<()> {
    let corpus = generate_synthetic(&SynthConfig { n_users: 300, ..SynthConfig::default() }, 5)?;
    let tok = TokenizerConfig { codebook_size: 16, seed: 5, ..TokenizerConfig::default() };
    let (_, table) = tokenize(corpus.embeddings.vectors.view(), &tok)?;
    let trie = PrefixTrie::build(&table);
    let split = temporal_split(&corpus.log, SplitRatios::default())?;
    let examples = build_examples(&split, 8);
    let train = encode_examples(&examples.train, &table);
    let test = encode_examples(&examples.test, &table);

    let cfg = ModelConfig {
        codes_per_level: table.codes_per_level(),
        query_counts: QueryCounts(vec![1, 1, 2, 2]),
        ..ModelConfig::default()
    };
    let tc = TrainConfig { learning_rate: 3e-3, max_epochs: 4, ..TrainConfig::default() };
    let params = fit(ModelParams::init(&cfg)?, &cfg, &TrainData { train: &train, valid: &[], trie: &trie }, &tc)?.params;

    let ex = &test[0];
    println!("history items {:?}", examples.test[0].history);
    println!("target item {} with ID {:?}", ex.target_item, ex.target);
    let ranked = beam_generate(&params, &cfg, &trie, &ex.history, 20, 10)?;
    for (rank, (item, score)) in ranked.items.iter().enumerate() {
        let hit = if *item == ex.target_item { "  <- target" } else { "" };
        println!("  {:>2}. item {:>3} {:?} log p {:>8.4}{hit}", rank + 1, item, table.id_of(*item).codes(), score);
    }
    for (level, stage) in teacher_forced_tokens(&params, &cfg, &ex.history, &ex.target)?.iter().enumerate() {
        let p = stage.distribution[stage.predicted];
        println!("level {level}: predicted {} (p {p:.3}), target {}, hit {}", stage.predicted, ex.target[level], stage.hit);
    }
    Ok(())
}
