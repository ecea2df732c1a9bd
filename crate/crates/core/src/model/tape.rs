//! Reverse-mode differentiation over dense matrices.
//!
//! Nodes are recorded in evaluation order; [`Tape::backward`] walks them in
//! reverse and accumulates adjoints. Each operation is a whole layer-sized
//! kernel (linear, layer norm, masked multi-head attention, ...) so a
//! transformer forward pass is a few dozen nodes.

use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::config::Precision;
use super::mask::AttentionMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf { param: usize },
    Gather { sources: Vec<(Var, usize)> },
    Add(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Array2<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Attention { qkv: Var, heads: usize, probs: Vec<Array2<f64>> },
    SelectRows { x: Var, rows: Vec<usize> },
    /// Scalar whose gradient with respect to `x` was computed alongside it.
    Scalar { x: Var, local_grad: Array2<f64> },
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    precision: Precision,
}

pub const LN_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'a> Tape<'a> {
    pub fn new(precision: Precision) -> Self {
        Self { nodes: Vec::with_capacity(64), precision }
    }

    fn push(&mut self, mut value: Array2<f64>, op: Op) -> Var {
        self.precision.apply(&mut value);
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Trainable leaf borrowed from a parameter store; `index` identifies it
    /// in the gradient list returned by [`Tape::backward`].
    pub fn param(&mut self, index: usize, value: &'a Array2<f64>) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf { param: index } });
        Var(self.nodes.len() - 1)
    }

    /// Output row `i` is row `sources[i].1` of `sources[i].0`.
    pub fn gather(&mut self, sources: Vec<(Var, usize)>) -> Var {
        let cols = self.value(sources[0].0).ncols();
        let mut out = Array2::zeros((sources.len(), cols));
        for (i, &(table, row)) in sources.iter().enumerate() {
            out.row_mut(i).assign(&self.value(table).row(row));
        }
        self.push(out, Op::Gather { sources })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `x W + b` with `b` a `1 x n` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut out = self.value(x).dot(self.value(w));
        out += self.value(b);
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (xhat, inv_std) = normalize_rows(self.value(x).view());
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Masked multi-head self-attention over a packed `T x 3d` projection.
    pub fn attention(&mut self, qkv: Var, mask: &AttentionMask, heads: usize) -> Var {
        let (out, probs) = attention_forward(self.value(qkv).view(), mask, heads, self.precision);
        self.push(out, Op::Attention { qkv, heads, probs })
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let out = self.value(x).select(Axis(0), &rows);
        self.push(out, Op::SelectRows { x, rows })
    }

    pub fn scalar(&mut self, x: Var, value: f64, local_grad: Array2<f64>) -> Var {
        self.push(Array2::from_elem((1, 1), value), Op::Scalar { x, local_grad })
    }

    /// Back-propagates from the scalar `root`; returns one gradient per
    /// parameter index in `0..n_params` (zeros where a parameter was unused).
    pub fn backward(&self, root: Var, param_shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out: Vec<Array2<f64>> = param_shapes.iter().map(|&s| Array2::zeros(s)).collect();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param } => out[*param] += &g,
                Op::Gather { sources } => {
                    for (i, &(table, row)) in sources.iter().enumerate() {
                        let shape = self.value(table).dim();
                        let acc = grads[table.0].get_or_insert_with(|| Array2::zeros(shape));
                        let mut dst = acc.row_mut(row);
                        dst += &g.row(i);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.view());
                    accumulate(&mut grads, *b, g.view());
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let shape_x = xv.dim();
                    let gx = grads[x.0].get_or_insert_with(|| Array2::zeros(shape_x));
                    general_mat_mul(1.0, &g, &wv.t(), 1.0, gx);
                    let shape_w = wv.dim();
                    let gw = grads[w.0].get_or_insert_with(|| Array2::zeros(shape_w));
                    general_mat_mul(1.0, &xv.t(), &g, 1.0, gw);
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb.view());
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain);
                    let dgain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let n = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_h = dh.dot(&h);
                        let k = inv_std[r] / n;
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = k * (n * dh[c] - sum_dh - h[c] * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, dx.view());
                    accumulate(&mut grads, *gain, dgain.view());
                    accumulate(&mut grads, *bias, dbias.view());
                }
                Op::Gelu(x) => {
                    let dx = &g * &self.value(*x).mapv(gelu_grad);
                    accumulate(&mut grads, *x, dx.view());
                }
                Op::Attention { qkv, heads, probs } => {
                    let dqkv = attention_backward(self.value(*qkv).view(), probs, *heads, g.view());
                    accumulate(&mut grads, *qkv, dqkv.view());
                }
                Op::SelectRows { x, rows } => {
                    let shape = self.value(*x).dim();
                    let acc = grads[x.0].get_or_insert_with(|| Array2::zeros(shape));
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = acc.row_mut(r);
                        dst += &g.row(i);
                    }
                }
                Op::Scalar { x, local_grad } => {
                    let dx = local_grad * g[[0, 0]];
                    accumulate(&mut grads, *x, dx.view());
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: ArrayView2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g.to_owned()),
    }
}

/// Zero-mean, unit-variance rows plus the per-row inverse std.
pub fn normalize_rows(x: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        row -= mean;
        let var = row.dot(&row) / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row *= inv;
        inv_std.push(inv);
    }
    (xhat, inv_std)
}

/// Returns the `T x d` attention output and each head's probability matrix.
pub fn attention_forward(
    qkv: ArrayView2<f64>,
    mask: &AttentionMask,
    heads: usize,
    precision: Precision,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let t = qkv.nrows();
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let mut p = q.dot(&k.t());
        for r in 0..t {
            let visible = mask.row(r);
            let mut row = p.row_mut(r);
            let mut max = f64::NEG_INFINITY;
            for c in 0..t {
                if visible[c] {
                    row[c] = precision.round(row[c] * scale);
                    max = max.max(row[c]);
                }
            }
            let mut sum = 0.0;
            for c in 0..t {
                row[c] = if visible[c] { (row[c] - max).exp() } else { 0.0 };
                sum += row[c];
            }
            row.mapv_inplace(|e| precision.round(e / sum));
        }
        out.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&p.dot(&v));
        probs.push(p);
    }
    (out, probs)
}

fn attention_backward(
    qkv: ArrayView2<f64>,
    probs: &[Array2<f64>],
    heads: usize,
    g: ArrayView2<f64>,
) -> Array2<f64> {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = Array2::zeros(qkv.raw_dim());
    for (h, p) in probs.iter().enumerate() {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let go = g.slice(s![.., h * dh..(h + 1) * dh]);
        let dp = go.dot(&v.t());
        let dv = p.t().dot(&go);
        let mut ds = dp;
        for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot = ds_row.dot(&p_row);
            ds_row.zip_mut_with(&p_row, |x, &pv| *x = pv * (*x - dot) * scale);
        }
        dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&ds.dot(&k));
        dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&ds.t().dot(&q));
        dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
    }
    dqkv
}
