//! Generate a clustered Zipf corpus, fit residual k-means codebooks and look
//! at the resulting semantic IDs.
//!
//! ```bash
//! cargo run --release --example synth_tokenize
//! ```

use care::dataset::{build_examples, generate_synthetic, temporal_split, SplitRatios, SynthConfig};
use care::tokenizer::{tokenize, PrefixTrie, TokenizerConfig};

fn main() -> care::Result<()> {
    let synth = SynthConfig { n_users: 500, ..SynthConfig::default() };
    let corpus = generate_synthetic(&synth, 7)?;
    println!(
        "{} users, {} items, {} interactions",
        corpus.log.user_count(),
        corpus.log.item_count(),
        corpus.log.interactions.len()
    );

    let freqs = corpus.log.item_frequencies();
    let mut sorted = freqs.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    println!("top-5 item counts {:?}, median {}", &sorted[..5], sorted[sorted.len() / 2]);

    let cfg = TokenizerConfig { codebook_size: 16, seed: 7, ..TokenizerConfig::default() };
    let (codebooks, table) = tokenize(corpus.embeddings.vectors.view(), &cfg)?;
    println!(
        "{} levels x {} codes (+1 zero centroid), {} distinct IDs",
        codebooks.depth(),
        codebooks.codebook_size(),
        table.len()
    );
    for item in [0, 1, 2] {
        println!("  item {:>3} (cluster {:>2}) -> {:?}", item, corpus.clusters[item], table.id_of(item).codes());
    }

    let trie = PrefixTrie::build(&table);
    let first = trie.valid_next(&[]);
    println!("level-1 codes in use: {}; after {:?}: {:?}", first.len(), [first[0]], trie.valid_next(&[first[0]]));

    let split = temporal_split(&corpus.log, SplitRatios::default())?;
    let examples = build_examples(&split, 8);
    println!(
        "examples: {} train / {} valid / {} test",
        examples.train.len(),
        examples.valid.len(),
        examples.test.len()
    );
    Ok(())
}
