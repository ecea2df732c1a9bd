use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{Embeddings, Interaction, InteractionLog};
use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Parameters of the synthetic clustered-Zipf corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub zipf_exponent: f64,
    /// Inclusive `[min, max]` interactions per user.
    pub history_length_range: (usize, usize),
    pub embedding_dim: usize,
    pub noise_scale: f64,
    /// Probability that an interaction is drawn from the user's preferred
    /// cluster rather than from global popularity.
    pub preferred_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 200,
            n_clusters: 16,
            zipf_exponent: 1.2,
            history_length_range: (5, 12),
            embedding_dim: 16,
            noise_scale: 0.3,
            preferred_share: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.history_length_range;
        let problems = [
            (self.n_users == 0, "n_users must be positive"),
            (self.n_items == 0, "n_items must be positive"),
            (self.n_clusters == 0, "n_clusters must be positive"),
            (self.n_clusters > self.n_items, "n_clusters must not exceed n_items"),
            (
                !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()),
                "zipf_exponent must be positive",
            ),
            (lo < 2, "history_length_range minimum must be at least 2"),
            (hi < lo, "history_length_range is empty"),
            (self.embedding_dim == 0, "embedding_dim must be positive"),
            (
                !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()),
                "noise_scale must be non-negative",
            ),
            (
                !(0.0..=1.0).contains(&self.preferred_share),
                "preferred_share must lie in [0, 1]",
            ),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::Config((*msg).to_string())),
            None => Ok(()),
        }
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub log: InteractionLog,
    pub embeddings: Embeddings,
    /// Cluster of each item.
    pub clusters: Vec<usize>,
    /// Popularity rank of each item (0 = most popular).
    pub popularity_rank: Vec<usize>,
}

/// Generates a clustered corpus whose item popularity follows a Zipf law.
///
/// Items get a random cluster and a random popularity rank `r` with weight
/// `(r + 1)^-s`. Each user picks a preferred cluster uniformly and draws every
/// interaction either from that cluster (popularity weighted) or from the
/// global popularity distribution. Embeddings are the cluster centre plus
/// isotropic Gaussian noise.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = seeded_rng(seed);

    // Every cluster gets at least one item.
    let mut clusters: Vec<usize> = (0..cfg.n_items).map(|i| i % cfg.n_clusters).collect();
    clusters.shuffle(&mut rng);
    let mut popularity_rank: Vec<usize> = (0..cfg.n_items).collect();
    popularity_rank.shuffle(&mut rng);
    let weights: Vec<f64> = popularity_rank
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.zipf_exponent))
        .collect();

    let global = WeightedIndex::new(&weights).expect("positive weights");
    let members: Vec<Vec<usize>> = (0..cfg.n_clusters)
        .map(|c| (0..cfg.n_items).filter(|&i| clusters[i] == c).collect())
        .collect();
    let per_cluster: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&i| weights[i])).expect("non-empty cluster"))
        .collect();

    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let centers: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| (0..cfg.embedding_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let mut vectors = Array2::zeros((cfg.n_items, cfg.embedding_dim));
    for (i, mut row) in vectors.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let noise = if cfg.noise_scale > 0.0 {
                cfg.noise_scale * unit.sample(&mut rng)
            } else {
                0.0
            };
            *v = centers[clusters[i]][j] + noise;
        }
    }

    let (lo, hi) = cfg.history_length_range;
    let mut interactions = Vec::new();
    for user in 0..cfg.n_users {
        let preferred = rng.random_range(0..cfg.n_clusters);
        let len = rng.random_range(lo..=hi);
        for t in 0..len {
            let item = if rng.random::<f64>() < cfg.preferred_share {
                members[preferred][per_cluster[preferred].sample(&mut rng)]
            } else {
                global.sample(&mut rng)
            };
            interactions.push(Interaction {
                user,
                item,
                timestamp: t as u64,
            });
        }
    }

    let users = (0..cfg.n_users).map(|u| format!("u{u}")).collect();
    let items: Vec<String> = (0..cfg.n_items).map(|i| format!("i{i}")).collect();
    Ok(SyntheticCorpus {
        log: InteractionLog::new(users, items.clone(), interactions),
        embeddings: Embeddings { ids: items, vectors },
        clusters,
        popularity_rank,
    })
}
