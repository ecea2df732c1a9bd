use serde::Serialize;

use super::config::{Mode, ModelConfig};
use crate::error::{Error, Result};

/// What occupies one sequence position. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Role {
    History { item: usize, level: usize },
    Query { stage: usize, index: usize },
    /// The code emitted by `stage`, fed back as context for later stages.
    Generated { stage: usize },
}

impl Role {
    pub fn is_history(self) -> bool {
        matches!(self, Role::History { .. })
    }
}

/// Position bookkeeping for `[history | Q1 c1 Q2 c2 .. Ql]` (care) or
/// `[history | c1 .. c(l-1)]` (baseline).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SequenceLayout {
    pub roles: Vec<Role>,
    /// Position whose output predicts each stage's code.
    pub readouts: Vec<usize>,
    pub history_items: usize,
    pub levels: usize,
    /// Per-stage query counts (empty in baseline mode).
    pub query_counts: Vec<usize>,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn history_len(&self) -> usize {
        self.history_items * self.levels
    }

    pub fn position_of(&self, role: Role) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }
}

pub fn build_layout(history_items: usize, cfg: &ModelConfig) -> Result<SequenceLayout> {
    if history_items == 0 {
        return Err(Error::EmptyHistory);
    }
    if history_items > cfg.max_history {
        return Err(Error::Config(format!(
            "history of {history_items} items exceeds max_history {}",
            cfg.max_history
        )));
    }
    let l = cfg.levels;
    let mut roles = Vec::with_capacity(cfg.max_positions());
    for item in 0..history_items {
        for level in 0..l {
            roles.push(Role::History { item, level });
        }
    }
    let mut readouts = Vec::with_capacity(l);
    let query_counts = match cfg.mode {
        Mode::Care => {
            for stage in 0..l {
                for index in 0..cfg.query_counts.0[stage] {
                    roles.push(Role::Query { stage, index });
                }
                readouts.push(roles.len() - 1);
                if stage + 1 < l {
                    roles.push(Role::Generated { stage });
                }
            }
            cfg.query_counts.0.clone()
        }
        Mode::Baseline => {
            readouts.push(roles.len() - 1);
            for stage in 0..l - 1 {
                roles.push(Role::Generated { stage });
                readouts.push(roles.len() - 1);
            }
            Vec::new()
        }
    };
    Ok(SequenceLayout {
        roles,
        readouts,
        history_items,
        levels: l,
        query_counts,
    })
}
