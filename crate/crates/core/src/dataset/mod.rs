//! Interaction logs, per-user temporal splits and next-item examples.

mod io;
mod synth;

use std::collections::HashMap;
use std::io::BufRead;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_embeddings, read_interactions, write_embeddings, write_interactions, Embeddings};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};

/// Dense index into [`InteractionLog::items`].
pub type ItemIdx = usize;
/// Dense index into [`InteractionLog::users`].
pub type UserIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserIdx,
    pub item: ItemIdx,
    pub timestamp: u64,
}

/// All interactions, grouped by user (first-appearance order) and sorted by
/// `(timestamp, input order)` within each user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub interactions: Vec<Interaction>,
}

impl InteractionLog {
    /// Builds a log from unsorted interactions, applying the per-user sort.
    pub fn new(users: Vec<String>, items: Vec<String>, mut interactions: Vec<Interaction>) -> Self {
        // Stable sort keeps input order for equal timestamps.
        interactions.sort_by_key(|it| (it.user, it.timestamp));
        Self {
            users,
            items,
            interactions,
        }
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    /// Per-user interaction runs, in user index order.
    pub fn sequences(&self) -> impl Iterator<Item = (UserIdx, &[Interaction])> {
        self.interactions
            .chunk_by(|a, b| a.user == b.user)
            .map(|run| (run[0].user, run))
    }

    /// Interaction counts per item.
    pub fn item_frequencies(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.items.len()];
        for it in &self.interactions {
            counts[it.item] += 1;
        }
        counts
    }
}

/// Parses tab-separated `user_id<TAB>item_id<TAB>timestamp` records.
///
/// Lines starting with `#` and blank lines are skipped. The item catalog is
/// the set of referenced items in first-appearance order.
pub fn ingest_interactions<R: BufRead>(source: R) -> Result<InteractionLog> {
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut interactions = Vec::new();

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let timestamp: u64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("timestamp {:?} is not a non-negative integer", fields[2]),
        })?;
        let user = intern(fields[0].trim(), &mut users, &mut user_index);
        let item = intern(fields[1].trim(), &mut items, &mut item_index);
        interactions.push(Interaction {
            user,
            item,
            timestamp,
        });
    }

    if interactions.is_empty() {
        return Err(Error::EmptyLog);
    }
    Ok(InteractionLog::new(users, items, interactions))
}

fn intern(key: &str, names: &mut Vec<String>, index: &mut HashMap<String, usize>) -> usize {
    if let Some(&i) = index.get(key) {
        return i;
    }
    let i = names.len();
    names.push(key.to_string());
    index.insert(key.to_string(), i);
    i
}

/// Train/valid/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 8.0,
            valid: 1.0,
            test: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user: UserIdx,
    pub train: Vec<Interaction>,
    pub valid: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub users: Vec<UserSplit>,
    pub item_count: usize,
}

impl SplitDataset {
    /// Item counts over the train portion only.
    pub fn train_item_frequencies(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.item_count];
        for u in &self.users {
            for it in &u.train {
                counts[it.item] += 1;
            }
        }
        counts
    }
}

/// Per-user temporal split.
///
/// Valid and test each take `floor(n * share)` of the most recent
/// interactions (minimum one); the remainder goes to train. Users with fewer
/// than three interactions are dropped with a warning.
pub fn temporal_split(log: &InteractionLog, ratios: SplitRatios) -> Result<SplitDataset> {
    let total = ratios.train + ratios.valid + ratios.test;
    if !(ratios.train > 0.0 && ratios.valid >= 0.0 && ratios.test >= 0.0 && total.is_finite()) {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    let mut users = Vec::new();
    for (user, seq) in log.sequences() {
        let n = seq.len();
        if n < 3 {
            warn!(
                "dropping user {} with {} interactions (need at least 3)",
                log.users[user], n
            );
            continue;
        }
        let share = |r: f64| ((n as f64 * r / total).floor() as usize).max(1);
        let n_valid = share(ratios.valid);
        let n_test = share(ratios.test);
        if n_valid + n_test >= n {
            warn!("dropping user {}: split leaves no training items", log.users[user]);
            continue;
        }
        let n_train = n - n_valid - n_test;
        users.push(UserSplit {
            user,
            train: seq[..n_train].to_vec(),
            valid: seq[n_train..n_train + n_valid].to_vec(),
            test: seq[n_train + n_valid..].to_vec(),
        });
    }
    if users.is_empty() {
        return Err(Error::NoSplittableUsers);
    }
    Ok(SplitDataset {
        users,
        item_count: log.item_count(),
    })
}

/// One next-item example: the target follows the (truncated) history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub user: UserIdx,
    pub history: Vec<ItemIdx>,
    pub target: ItemIdx,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExampleSet {
    pub train: Vec<TrainingExample>,
    pub valid: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
}

fn tail(items: &[ItemIdx], max_history: usize) -> Vec<ItemIdx> {
    items[items.len().saturating_sub(max_history)..].to_vec()
}

/// Sliding next-item examples over each user's train portion, plus one valid
/// and one test example per user.
pub fn build_examples(split: &SplitDataset, max_history: usize) -> ExampleSet {
    let mut out = ExampleSet::default();
    for u in &split.users {
        let train: Vec<ItemIdx> = u.train.iter().map(|it| it.item).collect();
        for t in 1..train.len() {
            out.train.push(TrainingExample {
                user: u.user,
                history: tail(&train[..t], max_history),
                target: train[t],
            });
        }
        if let Some(first_valid) = u.valid.first() {
            out.valid.push(TrainingExample {
                user: u.user,
                history: tail(&train, max_history),
                target: first_valid.item,
            });
        }
        if let Some(first_test) = u.test.first() {
            let mut seen = train.clone();
            seen.extend(u.valid.iter().map(|it| it.item));
            out.test.push(TrainingExample {
                user: u.user,
                history: tail(&seen, max_history),
                target: first_test.item,
            });
        }
    }
    out
}
