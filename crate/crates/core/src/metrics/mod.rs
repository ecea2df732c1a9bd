//! Ranking accuracy, diversity, over-recommendation and popularity-bias
//! reporting.

mod bias;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ItemIdx;
use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

pub use bias::{bias_report, popularity_groups, BiasInputs, BiasReport, GroupFrequencies, LevelBias, PopularityGrouping};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];
pub const DEFAULT_GROUPS: usize = 8;
/// Size of the over-recommended set in ORR.
pub const ORR_TOP: usize = 5;

/// 1-based rank of `target` within the first `k` entries.
fn rank_within(ranked: &[ItemIdx], target: ItemIdx, k: usize) -> Option<usize> {
    ranked.iter().take(k).position(|&i| i == target).map(|p| p + 1)
}

pub fn recall_at_k(ranked: &[ItemIdx], target: ItemIdx, k: usize) -> f64 {
    rank_within(ranked, target, k).map_or(0.0, |_| 1.0)
}

pub fn ndcg_at_k(ranked: &[ItemIdx], target: ItemIdx, k: usize) -> f64 {
    rank_within(ranked, target, k).map_or(0.0, |r| 1.0 / ((r + 1) as f64).log2())
}

/// Unique items across all top-`k` lists over the `U * k` slots.
pub fn divr_at_k(lists: &[Vec<ItemIdx>], k: usize) -> f64 {
    if lists.is_empty() || k == 0 {
        return 0.0;
    }
    let unique: HashSet<ItemIdx> = lists.iter().flat_map(|l| l.iter().take(k).copied()).collect();
    unique.len() as f64 / (lists.len() * k) as f64
}

/// Share of the `U * k` slots held by the five most recommended items
/// (ties: smaller item index first).
pub fn orr_at_k(lists: &[Vec<ItemIdx>], k: usize) -> f64 {
    if lists.is_empty() || k == 0 {
        return 0.0;
    }
    let mut counts: BTreeMap<ItemIdx, usize> = BTreeMap::new();
    for l in lists {
        for &i in l.iter().take(k) {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut by_freq: Vec<(ItemIdx, usize)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top: usize = by_freq.iter().take(ORR_TOP).map(|&(_, c)| c).sum();
    top as f64 / (lists.len() * k) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub divr: f64,
    pub orr: f64,
}

/// Corpus metrics at each cut-off; Recall and NDCG are means over examples.
pub fn metric_table(lists: &[Vec<ItemIdx>], targets: &[ItemIdx], ks: &[usize]) -> Vec<MetricRow> {
    let n = lists.len().max(1) as f64;
    ks.iter()
        .map(|&k| MetricRow {
            k,
            recall: lists.iter().zip(targets).map(|(l, &t)| recall_at_k(l, t, k)).sum::<f64>() / n,
            ndcg: lists.iter().zip(targets).map(|(l, &t)| ndcg_at_k(l, t, k)).sum::<f64>() / n,
            divr: divr_at_k(lists, k),
            orr: orr_at_k(lists, k),
        })
        .collect()
}

/// `user_id<TAB>item_id` lines naming each test example's ground truth.
pub fn format_targets(rows: &[(String, String)]) -> String {
    rows.iter().map(|(u, i)| format!("{u}\t{i}\n")).collect()
}

pub fn parse_targets(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, line)| match line.split('\t').collect::<Vec<_>>()[..] {
            [u, item] => Ok((u.to_string(), item.to_string())),
            _ => Err(Error::Parse { line: i + 1, message: "expected user_id<TAB>item_id".into() }),
        })
        .collect()
}

pub fn write_targets(path: &Path, rows: &[(String, String)]) -> Result<()> {
    write_atomic(path, format_targets(rows).as_bytes())
}

pub fn read_targets(path: &Path) -> Result<Vec<(String, String)>> {
    parse_targets(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_metrics() {
        assert_eq!(recall_at_k(&[7, 1, 2], 7, 1), 1.0);
        assert_eq!(ndcg_at_k(&[7, 1, 2], 7, 1), 1.0);
        assert!((ndcg_at_k(&[1, 7, 2, 3, 4], 7, 5) - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((ndcg_at_k(&[1, 7], 7, 5) - 0.630_929_753_571_457_4).abs() < 1e-9);
        assert_eq!(recall_at_k(&[1, 2, 3, 7], 7, 3), 0.0);
        assert_eq!(ndcg_at_k(&[1, 2, 3, 7], 7, 3), 0.0);
    }

    #[test]
    fn divr_examples() {
        let (a, b, c) = (0, 1, 2);
        assert_eq!(divr_at_k(&[vec![a, b], vec![a, b], vec![a, c]], 2), 0.5);
        assert_eq!(divr_at_k(&[vec![a, b], vec![a, b], vec![a, b], vec![a, b]], 2), 0.25);
        assert_eq!(divr_at_k(&[vec![a, b], vec![c, 3]], 2), 1.0);
    }

    #[test]
    fn orr_examples() {
        assert_eq!(orr_at_k(&[vec![0, 1], vec![2, 0]], 2), 1.0);
        let six: Vec<Vec<usize>> = (0..6).map(|i| vec![i]).collect();
        assert_eq!(orr_at_k(&six, 1), 5.0 / 6.0);
        assert_eq!(orr_at_k(&[vec![4], vec![4], vec![4]], 1), 1.0);
    }

    #[test]
    fn targets_roundtrip() {
        let rows = vec![("u1".to_string(), "i3".to_string())];
        assert_eq!(parse_targets(&format_targets(&rows)).unwrap(), rows);
        assert!(parse_targets("u1 i3\n").is_err());
    }

    proptest! {
        #[test]
        fn rank_metrics_bounded_and_monotone(
            ranked in Just((0..30usize).collect::<Vec<_>>()).prop_shuffle(),
            target in 0..40usize,
        ) {
            let mut prev = (0.0, 0.0);
            for k in 1..=30 {
                let r = recall_at_k(&ranked, target, k);
                let n = ndcg_at_k(&ranked, target, k);
                prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&n));
                prop_assert!(r >= prev.0 && n >= prev.1);
                prev = (r, n);
            }
        }

        #[test]
        fn list_metrics_identities(lists in prop::collection::vec(prop::collection::vec(0..12usize, 4), 1..10)) {
            let lists: Vec<Vec<usize>> = lists;
            let k = 4;
            let slots = (lists.len() * k) as f64;
            let d = divr_at_k(&lists, k);
            prop_assert!(d > 0.0 && d <= 1.0);
            prop_assert!(((d * slots).round() - d * slots).abs() < 1e-9);
            let o = orr_at_k(&lists, k);
            prop_assert!((0.0..=1.0).contains(&o));
            let distinct: HashSet<usize> = lists.iter().flatten().copied().collect();
            if distinct.len() <= ORR_TOP {
                prop_assert_eq!(o, 1.0);
            }
            // Direct count of the five largest item frequencies.
            let mut freq = [0usize; 12];
            for l in &lists { for &i in l { freq[i] += 1; } }
            freq.sort_unstable_by(|a, b| b.cmp(a));
            prop_assert!(o >= freq.iter().take(ORR_TOP).sum::<usize>() as f64 / slots - 1e-12);
        }
    }
}
