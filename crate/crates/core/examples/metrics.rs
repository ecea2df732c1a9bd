//! Ranking, diversity and over-recommendation metrics on hand-made lists.
//!
//! ```bash
//! cargo run --example metrics
//! ```

use care::metrics::{divr_at_k, metric_table, ndcg_at_k, orr_at_k, recall_at_k};

fn main() {
    let ranked = [7, 3, 9, 1, 4];
    println!("target 3 at rank 2: Recall@1 {}, Recall@5 {}", recall_at_k(&ranked, 3, 1), recall_at_k(&ranked, 3, 5));
    println!("NDCG@5 {:.5} (1/log2 3)", ndcg_at_k(&ranked, 3, 5));

    let lists = vec![vec![0, 1], vec![0, 1], vec![0, 2]];
    println!("DivR@2 of {lists:?} = {}", divr_at_k(&lists, 2));
    let singles: Vec<Vec<usize>> = (0..6).map(|i| vec![i]).collect();
    println!("ORR@1 over six distinct items = {:.4}", orr_at_k(&singles, 1));

    let lists = vec![vec![5, 2, 8, 1, 0], vec![2, 5, 1, 9, 3], vec![2, 4, 5, 6, 7]];
    let targets = [8, 9, 0];
    println!("{:>3} {:>8} {:>8} {:>8} {:>8}", "K", "Recall", "NDCG", "DivR", "ORR");
    for row in metric_table(&lists, &targets, &[1, 3, 5]) {
        println!("{:>3} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", row.k, row.recall, row.ndcg, row.divr, row.orr);
    }
}
