//! Differentiable forward pass over a full layout with an explicit mask.

use ndarray::Array2;

use super::config::ModelConfig;
use super::layout::{Role, SequenceLayout};
use super::mask::AttentionMask;
use super::params::ModelParams;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Token codes feeding one sequence.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInputs<'s> {
    /// History codes, item-major: `history[item * l + level]`.
    pub history: &'s [usize],
    /// Codes placed at the generated-token positions (at least `l - 1`).
    pub teacher: &'s [usize],
}

impl SequenceInputs<'_> {
    pub(crate) fn validate(&self, layout: &SequenceLayout, cfg: &ModelConfig) -> Result<()> {
        if self.history.len() != layout.history_len() {
            return Err(Error::Config(format!(
                "history has {} codes, layout expects {}",
                self.history.len(),
                layout.history_len()
            )));
        }
        if self.teacher.len() + 1 < cfg.levels {
            return Err(Error::Config(format!(
                "teacher forcing needs {} codes, got {}",
                cfg.levels - 1,
                self.teacher.len()
            )));
        }
        let limit = cfg.codes_per_level;
        if let Some(&bad) = self.history.iter().chain(self.teacher).find(|&&c| c >= limit) {
            return Err(Error::InvalidToken { token: bad, vocab: limit });
        }
        Ok(())
    }
}

/// What feeds the embedding of one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionInput {
    Token(usize),
    /// Row of the flattened query bank.
    Query(usize),
}

pub(crate) fn position_input(cfg: &ModelConfig, role: Role, inputs: &SequenceInputs<'_>) -> PositionInput {
    match role {
        Role::History { item, level } => {
            PositionInput::Token(cfg.token(level, inputs.history[item * cfg.levels + level]))
        }
        Role::Generated { stage } => PositionInput::Token(cfg.token(stage, inputs.teacher[stage])),
        Role::Query { stage, index } => PositionInput::Query(cfg.query_counts.offset(stage) + index),
    }
}

/// Parameter leaves registered on a tape, in [`ModelParams::tensors`] order.
pub(crate) struct ParamVars {
    pub vars: Vec<Var>,
    pub shapes: Vec<(usize, usize)>,
}

impl ParamVars {
    pub fn register<'a>(tape: &mut Tape<'a>, params: &'a ModelParams) -> Self {
        let tensors = params.tensors();
        let shapes = tensors.iter().map(|t| t.dim()).collect();
        let vars = tensors.into_iter().enumerate().map(|(i, t)| tape.param(i, t)).collect();
        Self { vars, shapes }
    }

    pub fn token_emb(&self) -> Var {
        self.vars[0]
    }

    pub fn pos_emb(&self) -> Var {
        self.vars[1]
    }

    pub fn queries(&self) -> Var {
        self.vars[2]
    }

    /// Field `f` (0..12) of layer `layer`.
    fn layer(&self, layer: usize, f: usize) -> Var {
        self.vars[3 + layer * 12 + f]
    }

    fn tail(&self, k: usize) -> Var {
        self.vars[self.vars.len() - 4 + k]
    }
}

/// Records the transformer stack; returns the final-normalised hidden states.
pub(crate) fn record_hidden(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    layout: &SequenceLayout,
    mask: &AttentionMask,
    inputs: &SequenceInputs<'_>,
) -> Var {
    let sources = layout
        .roles
        .iter()
        .map(|&role| match position_input(cfg, role, inputs) {
            PositionInput::Token(t) => (pv.token_emb(), t),
            PositionInput::Query(q) => (pv.queries(), q),
        })
        .collect();
    let content = tape.gather(sources);
    let pos = tape.gather((0..layout.len()).map(|p| (pv.pos_emb(), p)).collect());
    let mut x = tape.add(content, pos);
    for layer in 0..cfg.n_layers {
        let f = |k| pv.layer(layer, k);
        let h = tape.layer_norm(x, f(0), f(1));
        let qkv = tape.linear(h, f(2), f(3));
        let att = tape.attention(qkv, mask, cfg.n_heads);
        let proj = tape.linear(att, f(4), f(5));
        x = tape.add(x, proj);
        let h = tape.layer_norm(x, f(6), f(7));
        let up = tape.linear(h, f(8), f(9));
        let act = tape.gelu(up);
        let down = tape.linear(act, f(10), f(11));
        x = tape.add(x, down);
    }
    tape.layer_norm(x, pv.tail(0), pv.tail(1))
}

/// Records logits (`rows.len() x V`) for the given positions.
pub(crate) fn record_logits(tape: &mut Tape<'_>, pv: &ParamVars, hidden: Var, rows: Vec<usize>) -> Var {
    let picked = tape.select_rows(hidden, rows);
    tape.linear(picked, pv.tail(2), pv.tail(3))
}

pub(crate) fn check_finite(a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalOverflow)
    }
}

/// Logits at every position of `layout` under `mask`.
///
/// Stage `t`'s next-code distribution is row `layout.readouts[t]`.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    layout: &SequenceLayout,
    mask: &AttentionMask,
    inputs: &SequenceInputs<'_>,
) -> Result<Array2<f64>> {
    inputs.validate(layout, cfg)?;
    let mut tape = Tape::new(cfg.precision);
    let pv = ParamVars::register(&mut tape, params);
    let hidden = record_hidden(&mut tape, &pv, cfg, layout, mask, inputs);
    let logits = record_logits(&mut tape, &pv, hidden, (0..layout.len()).collect());
    let out = tape.value(logits).clone();
    check_finite(&out)?;
    Ok(out)
}

/// Readout rows of [`forward`], one per stage.
pub fn readout_logits(
    params: &ModelParams,
    cfg: &ModelConfig,
    layout: &SequenceLayout,
    mask: &AttentionMask,
    inputs: &SequenceInputs<'_>,
) -> Result<Array2<f64>> {
    inputs.validate(layout, cfg)?;
    let mut tape = Tape::new(cfg.precision);
    let pv = ParamVars::register(&mut tape, params);
    let hidden = record_hidden(&mut tape, &pv, cfg, layout, mask, inputs);
    let logits = record_logits(&mut tape, &pv, hidden, layout.readouts.clone());
    let out = tape.value(logits).clone();
    check_finite(&out)?;
    Ok(out)
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}
