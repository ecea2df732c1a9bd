//! Gradient-free incremental evaluation with per-layer key/value caches.
//!
//! Positions are appended in blocks. A block's rows attend to whichever
//! cached or in-block columns the caller's visibility function allows, so the
//! same code runs the single-pass progressive encoding, beam search over a
//! shared history cache, and the staged re-encoding reference.

use ndarray::{s, Array1, Array2, Axis};

use super::config::{ModelConfig, Precision};
use super::forward::PositionInput;
use super::params::ModelParams;
use super::tape::{gelu, normalize_rows};

/// Keys and values of every position processed so far, one pair per layer.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
}

impl KvCache {
    pub fn new(cfg: &ModelConfig) -> Self {
        let empty = || Array2::zeros((0, cfg.d_model));
        Self {
            keys: (0..cfg.n_layers).map(|_| empty()).collect(),
            values: (0..cfg.n_layers).map(|_| empty()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, |k| k.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Engine<'p> {
    params: &'p ModelParams,
    cfg: &'p ModelConfig,
}

impl<'p> Engine<'p> {
    pub fn new(params: &'p ModelParams, cfg: &'p ModelConfig) -> Self {
        Self { params, cfg }
    }

    fn precision(&self) -> Precision {
        self.cfg.precision
    }

    /// Appends `inputs` (with positional-embedding indices `positions`) to
    /// `cache` and returns their final-normalised hidden states.
    ///
    /// `visible(row, col)` is queried with cache indices; `row` is one of the
    /// new positions and `col <= row`.
    pub fn extend(
        &self,
        cache: &mut KvCache,
        inputs: &[PositionInput],
        positions: &[usize],
        visible: impl Fn(usize, usize) -> bool,
    ) -> Array2<f64> {
        let p = self.params;
        let cfg = self.cfg;
        let prec = self.precision();
        let d = cfg.d_model;
        let base = cache.len();
        let n = inputs.len();

        let mut x = Array2::zeros((n, d));
        for (r, (&input, &pos)) in inputs.iter().zip(positions).enumerate() {
            let content = match input {
                PositionInput::Token(t) => p.token_emb.row(t),
                PositionInput::Query(q) => p.queries.row(q),
            };
            let mut row = x.row_mut(r);
            row.assign(&content);
            row += &p.pos_emb.row(pos);
        }
        prec.apply(&mut x);

        let col_lists: Vec<Vec<usize>> = (0..n)
            .map(|r| (0..=base + r).filter(|&c| visible(base + r, c)).collect())
            .collect();

        let heads = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for (li, layer) in p.layers.iter().enumerate() {
            let h = self.layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
            let mut qkv = h.dot(&layer.w_qkv) + &layer.b_qkv;
            prec.apply(&mut qkv);
            cache.keys[li]
                .append(Axis(0), qkv.slice(s![.., d..2 * d]))
                .expect("matching widths");
            cache.values[li]
                .append(Axis(0), qkv.slice(s![.., 2 * d..]))
                .expect("matching widths");
            let keys = &cache.keys[li];
            let values = &cache.values[li];

            let mut att = Array2::zeros((n, d));
            for (r, cols) in col_lists.iter().enumerate() {
                for hd in 0..heads {
                    let q = qkv.slice(s![r, hd * dh..(hd + 1) * dh]);
                    let mut scores: Vec<f64> = cols
                        .iter()
                        .map(|&c| prec.round(q.dot(&keys.slice(s![c, hd * dh..(hd + 1) * dh])) * scale))
                        .collect();
                    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let mut sum = 0.0;
                    for sc in &mut scores {
                        *sc = (*sc - max).exp();
                        sum += *sc;
                    }
                    let mut out = att.slice_mut(s![r, hd * dh..(hd + 1) * dh]);
                    for (&c, &w) in cols.iter().zip(&scores) {
                        let prob = prec.round(w / sum);
                        out.scaled_add(prob, &values.slice(s![c, hd * dh..(hd + 1) * dh]));
                    }
                }
            }
            prec.apply(&mut att);
            let mut proj = att.dot(&layer.w_out) + &layer.b_out;
            prec.apply(&mut proj);
            x += &proj;
            prec.apply(&mut x);

            let h = self.layer_norm(&x, &layer.ln2_gain, &layer.ln2_bias);
            let mut up = h.dot(&layer.w_ff1) + &layer.b_ff1;
            prec.apply(&mut up);
            up.mapv_inplace(gelu);
            prec.apply(&mut up);
            let mut down = up.dot(&layer.w_ff2) + &layer.b_ff2;
            prec.apply(&mut down);
            x += &down;
            prec.apply(&mut x);
        }
        self.layer_norm(&x, &p.lnf_gain, &p.lnf_bias)
    }

    fn layer_norm(&self, x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
        let (xhat, _) = normalize_rows(x.view());
        let mut out = xhat * gain + bias;
        self.precision().apply(&mut out);
        out
    }

    /// Vocabulary logits for one final hidden row.
    pub fn logits(&self, hidden: ndarray::ArrayView1<f64>) -> Array1<f64> {
        let mut out = hidden.dot(&self.params.head_w) + self.params.head_b.row(0);
        out.mapv_inplace(|v| self.precision().round(v));
        out
    }
}
