use serde::{Deserialize, Serialize};

use crate::dataset::ItemIdx;

/// Code (or item) -> popularity group, groups ordered by descending training
/// frequency. Group indices are 0-based; reports label them `G1..`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityGrouping {
    pub group_of: Vec<usize>,
    pub groups: usize,
}

/// Sorts codes by descending frequency (ties by index) and cuts them into
/// `groups` near-equal chunks, the remainder going to the earliest groups.
pub fn popularity_groups(frequencies: &[u64], groups: usize) -> PopularityGrouping {
    let n = frequencies.len();
    let mut g = groups.max(1);
    if n < g {
        log::warn!("only {n} codes for {g} popularity groups; using one group per code");
        g = n.max(1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| frequencies[b].cmp(&frequencies[a]).then(a.cmp(&b)));
    let (base, extra) = (n / g, n % g);
    let mut group_of = vec![0; n];
    let mut pos = 0;
    for grp in 0..g {
        let size = base + usize::from(grp < extra);
        for &code in &order[pos..pos + size] {
            group_of[code] = grp;
        }
        pos += size;
    }
    PopularityGrouping { group_of, groups: g }
}

/// Test and generated frequency per group, each normalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFrequencies {
    pub test: Vec<f64>,
    pub generated: Vec<f64>,
    /// `generated / test`; `None` where the test frequency is zero.
    pub amplification: Vec<Option<f64>>,
}

impl GroupFrequencies {
    fn from_counts(grouping: &PopularityGrouping, test: impl Iterator<Item = usize>, generated: impl Iterator<Item = usize>) -> Self {
        let normalise = |codes: &mut dyn Iterator<Item = usize>| {
            let mut c = vec![0.0; grouping.groups];
            for code in codes {
                c[grouping.group_of[code]] += 1.0;
            }
            let total: f64 = c.iter().sum();
            if total > 0.0 {
                c.iter_mut().for_each(|v| *v /= total);
            }
            c
        };
        let test = normalise(&mut { test });
        let generated = normalise(&mut { generated });
        let amplification = test
            .iter()
            .zip(&generated)
            .map(|(&t, &g)| (t > 0.0).then(|| g / t))
            .collect();
        Self { test, generated, amplification }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBias {
    pub level: usize,
    pub groups: GroupFrequencies,
    /// Teacher-forced hit rate at this level.
    pub token_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub levels: Vec<LevelBias>,
    /// Item popularity groups: test targets vs every top-K slot.
    pub items: GroupFrequencies,
}

impl BiasReport {
    /// Amplification of the most popular group at the last level.
    pub fn last_level_head_amplification(&self) -> Option<f64> {
        self.levels.last().and_then(|l| l.groups.amplification.first().copied().flatten())
    }
}

pub struct BiasInputs<'a> {
    /// Teacher-forced argmax codes, one vector of `l` codes per test example.
    pub predicted_codes: &'a [Vec<usize>],
    pub target_codes: &'a [Vec<usize>],
    /// One grouping per level, built from training frequencies.
    pub token_groups: &'a [PopularityGrouping],
    pub item_groups: &'a PopularityGrouping,
    pub ranked_lists: &'a [Vec<ItemIdx>],
    pub target_items: &'a [ItemIdx],
}

pub fn bias_report(inputs: &BiasInputs<'_>) -> BiasReport {
    let n = inputs.target_codes.len();
    let levels = inputs
        .token_groups
        .iter()
        .enumerate()
        .map(|(level, grouping)| {
            let hits = inputs
                .predicted_codes
                .iter()
                .zip(inputs.target_codes)
                .filter(|(p, t)| p[level] == t[level])
                .count();
            LevelBias {
                level,
                groups: GroupFrequencies::from_counts(
                    grouping,
                    inputs.target_codes.iter().map(|t| t[level]),
                    inputs.predicted_codes.iter().map(|p| p[level]),
                ),
                token_recall: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            }
        })
        .collect();
    let items = GroupFrequencies::from_counts(
        inputs.item_groups,
        inputs.target_items.iter().copied(),
        inputs.ranked_lists.iter().flatten().copied(),
    );
    BiasReport { levels, items }
}
