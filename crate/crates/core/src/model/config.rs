use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain next-token generation over `[history | c1 .. c(l-1)]`.
    Baseline,
    /// Query-anchored reasoning: learned queries before every code.
    #[default]
    Care,
}

/// Which attention mask a care-mode model uses. `Causal` is the
/// "without progressive attention" ablation; baseline mode is always causal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    #[default]
    Progressive,
    Causal,
}

/// How history tokens attend to other history tokens under the progressive
/// mask.
///
/// `LevelConsistent` lets a level-`v` history token see earlier history
/// tokens only up to the coarsest granularity that includes `v`, so the key
/// and value of every history token are the same whether the full history or
/// a stage's truncated history is encoded. `Causal` lets history tokens see
/// all earlier history; the two encodings then agree only for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryRule {
    #[default]
    LevelConsistent,
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Activations and parameters rounded to f32 after every operation.
    Single,
    #[default]
    Double,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::Single => v as f32 as f64,
            Precision::Double => v,
        }
    }

    pub fn apply(self, a: &mut ndarray::Array2<f64>) {
        if self == Precision::Single {
            a.mapv_inplace(|v| v as f32 as f64);
        }
    }
}

/// Per-stage reasoning query counts, written `a-b-c-d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QueryCounts(pub Vec<usize>);

impl QueryCounts {
    pub fn uniform(levels: usize, n: usize) -> Self {
        Self(vec![n; levels])
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Offset of stage `s`'s first query in the flattened bank.
    pub fn offset(&self, stage: usize) -> usize {
        self.0[..stage].iter().sum()
    }
}

impl FromStr for QueryCounts {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let counts = s
            .split('-')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("query counts {s:?} must look like 1-1-4-4")))?;
        Ok(Self(counts))
    }
}

impl TryFrom<String> for QueryCounts {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<QueryCounts> for String {
    fn from(q: QueryCounts) -> String {
        q.to_string()
    }
}

impl fmt::Display for QueryCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    /// Semantic-ID length; one reasoning stage per level.
    pub levels: usize,
    /// Codes per level including the zero centroid.
    pub codes_per_level: usize,
    pub query_counts: QueryCounts,
    /// Visible history levels per stage; empty means `g(t) = t`.
    pub schedule: Vec<usize>,
    pub mode: Mode,
    pub mask: MaskKind,
    pub history_rule: HistoryRule,
    pub max_history: usize,
    pub precision: Precision,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            ff_dim: 64,
            levels: 4,
            codes_per_level: 33,
            query_counts: QueryCounts::uniform(4, 1),
            schedule: Vec::new(),
            mode: Mode::Care,
            mask: MaskKind::Progressive,
            history_rule: HistoryRule::LevelConsistent,
            max_history: 8,
            precision: Precision::Double,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail("d_model must be a positive multiple of n_heads");
        }
        if self.n_layers == 0 || self.ff_dim == 0 {
            return fail("n_layers and ff_dim must be positive");
        }
        if self.levels == 0 || self.codes_per_level == 0 || self.max_history == 0 {
            return fail("levels, codes_per_level and max_history must be positive");
        }
        if self.mode == Mode::Care {
            if self.query_counts.0.len() != self.levels {
                return fail("query_counts needs one entry per level");
            }
            if self.query_counts.0.contains(&0) {
                return fail("every stage needs at least one query");
            }
        }
        if !self.schedule.is_empty() {
            if self.schedule.len() != self.levels {
                return fail("schedule needs one entry per level");
            }
            if self.schedule.iter().any(|&g| g == 0 || g > self.levels) {
                return fail("schedule entries must lie in 1..=levels");
            }
            if self.schedule.windows(2).any(|w| w[1] < w[0]) {
                return fail("schedule must be non-decreasing");
            }
        }
        Ok(())
    }

    /// Visible history levels for 0-based `stage`, honouring the mask kind.
    pub fn visible_levels(&self, stage: usize) -> usize {
        if self.mode == Mode::Baseline || self.mask == MaskKind::Causal {
            return self.levels;
        }
        if self.schedule.is_empty() {
            stage + 1
        } else {
            self.schedule[stage]
        }
    }

    /// Number of levels a level-`level` history token may see in other
    /// history items: the smallest stage granularity that covers `level`.
    pub fn history_reach(&self, level: usize) -> usize {
        if self.history_rule == HistoryRule::Causal {
            return self.levels;
        }
        (0..self.levels)
            .map(|s| self.visible_levels(s))
            .filter(|&g| g > level)
            .min()
            .unwrap_or(self.levels)
    }

    pub fn vocab_size(&self) -> usize {
        self.levels * self.codes_per_level + 1
    }

    pub fn padding_token(&self) -> usize {
        self.levels * self.codes_per_level
    }

    pub fn token(&self, level: usize, code: usize) -> usize {
        level * self.codes_per_level + code
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn total_queries(&self) -> usize {
        match self.mode {
            Mode::Care => self.query_counts.total(),
            Mode::Baseline => 0,
        }
    }

    /// Longest layout this configuration can produce.
    pub fn max_positions(&self) -> usize {
        self.max_history * self.levels + self.total_queries() + self.levels - 1
    }
}
