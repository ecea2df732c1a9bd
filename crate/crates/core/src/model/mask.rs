use std::fmt;

use super::config::{MaskKind, Mode, ModelConfig};
use super::layout::{Role, SequenceLayout};

/// Square visibility matrix: `get(row, col)` means `row` may attend to `col`.
#[derive(Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    visible: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut visible = vec![false; n * n];
        for r in 0..n {
            for c in 0..n {
                visible[r * n + c] = f(r, c);
            }
        }
        Self { n, visible }
    }

    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, |r, c| c <= r)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.visible[row * self.n + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.visible[row * self.n..(row + 1) * self.n]
    }

    /// Visible columns of `row`, ascending.
    pub fn row_columns(&self, row: usize) -> Vec<usize> {
        (0..self.n).filter(|&c| self.get(row, c)).collect()
    }

    pub fn count_visible(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

impl fmt::Debug for AttentionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "AttentionMask({}x{})", self.n, self.n)?;
        for r in 0..self.n {
            let line: String = self.row(r).iter().map(|&v| if v { '1' } else { '.' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

/// Progressive visibility between two roles, ignoring causality.
pub(crate) fn progressive_visible(cfg: &ModelConfig, row: Role, col: Role) -> bool {
    match (row, col) {
        (Role::History { level: row_level, .. }, Role::History { level, .. }) => {
            level < cfg.history_reach(row_level).max(row_level + 1)
        }
        (Role::History { .. }, _) => false,
        (Role::Query { stage, .. } | Role::Generated { stage }, Role::History { level, .. }) => {
            level < cfg.visible_levels(stage)
        }
        _ => true,
    }
}

/// Builds the mask for `layout`.
///
/// Care mode with the progressive mask: history rows see earlier history
/// (limited by the history rule); stage-`t` query and generated rows see the
/// first `g(t)` levels of every history item plus all earlier query and
/// generated positions. Baseline mode and the causal ablation get the plain
/// lower-triangular mask.
pub fn build_progressive_mask(layout: &SequenceLayout, cfg: &ModelConfig) -> AttentionMask {
    if cfg.mode == Mode::Baseline || cfg.mask == MaskKind::Causal {
        return AttentionMask::causal(layout.len());
    }
    AttentionMask::from_fn(layout.len(), |r, c| {
        c <= r && progressive_visible(cfg, layout.roles[r], layout.roles[c])
    })
}
