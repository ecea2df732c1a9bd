use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::util::{read_to_string, seeded_rng, write_atomic};

pub const CHECKPOINT_FORMAT: &str = "care-checkpoint/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    /// `d x 3d`, columns ordered query | key | value.
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array2<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array2<f64>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array2<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array2<f64>,
}

/// All trainable tensors. Row vectors (biases, gains) are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    /// The query bank: `N x d`, stage-major (stage 1's queries first).
    pub queries: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Array2<f64>,
    pub lnf_bias: Array2<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array2<f64>,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.init_seed);
        let d = cfg.d_model;
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("valid std");
            Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng))
        };
        let v = cfg.vocab_size();
        let token_emb = normal(v, d, 0.1);
        let pos_emb = normal(cfg.max_positions(), d, 0.1);
        let queries = normal(cfg.total_queries(), d, 0.1);
        let lin_std = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_gain: Array2::ones((1, d)),
                ln1_bias: Array2::zeros((1, d)),
                w_qkv: normal(d, 3 * d, lin_std(d)),
                b_qkv: Array2::zeros((1, 3 * d)),
                w_out: normal(d, d, lin_std(d) / (2.0 * cfg.n_layers as f64).sqrt()),
                b_out: Array2::zeros((1, d)),
                ln2_gain: Array2::ones((1, d)),
                ln2_bias: Array2::zeros((1, d)),
                w_ff1: normal(d, cfg.ff_dim, lin_std(d)),
                b_ff1: Array2::zeros((1, cfg.ff_dim)),
                w_ff2: normal(
                    cfg.ff_dim,
                    d,
                    lin_std(cfg.ff_dim) / (2.0 * cfg.n_layers as f64).sqrt(),
                ),
                b_ff2: Array2::zeros((1, d)),
            })
            .collect();
        let head_w = normal(d, v, lin_std(d));
        let mut params = Self {
            token_emb,
            pos_emb,
            queries,
            layers,
            lnf_gain: Array2::ones((1, d)),
            lnf_bias: Array2::zeros((1, d)),
            head_w,
            head_b: Array2::zeros((1, v)),
        };
        params.round_to(cfg.precision);
        Ok(params)
    }

    pub fn round_to(&mut self, precision: super::config::Precision) {
        for t in self.tensors_mut() {
            precision.apply(t);
        }
    }

    /// Tensor names in canonical order; matches [`Self::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["token_emb", "pos_emb", "queries"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.layers.len() {
            for field in LAYER_FIELDS {
                names.push(format!("layers.{i}.{field}"));
            }
        }
        names.extend(["lnf_gain", "lnf_bias", "head_w", "head_b"].map(String::from));
        names
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.token_emb, &self.pos_emb, &self.queries];
        for l in &self.layers {
            out.extend([
                &l.ln1_gain, &l.ln1_bias, &l.w_qkv, &l.b_qkv, &l.w_out, &l.b_out, &l.ln2_gain,
                &l.ln2_bias, &l.w_ff1, &l.b_ff1, &l.w_ff2, &l.b_ff2,
            ]);
        }
        out.extend([&self.lnf_gain, &self.lnf_bias, &self.head_w, &self.head_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.token_emb, &mut self.pos_emb, &mut self.queries];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.w_qkv,
                &mut l.b_qkv,
                &mut l.w_out,
                &mut l.b_out,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.w_ff1,
                &mut l.b_ff1,
                &mut l.w_ff2,
                &mut l.b_ff2,
            ]);
        }
        out.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, b);
        }
    }

    fn from_named(cfg: &ModelConfig, mut named: BTreeMap<String, Array2<f64>>) -> Result<Self> {
        let mut params = Self::init(cfg)?;
        let names = params.names();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = named
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dim() != slot.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dim(),
                    slot.dim()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = named.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }
}

const LAYER_FIELDS: [&str; 12] = [
    "ln1_gain", "ln1_bias", "w_qkv", "b_qkv", "w_out", "b_out", "ln2_gain", "ln2_bias", "w_ff1",
    "b_ff1", "w_ff2", "b_ff2",
];

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorRecord>,
}

/// Model configuration plus parameters, serialised as tagged JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .params
            .names()
            .into_iter()
            .zip(self.params.tensors())
            .map(|(name, t)| {
                let (r, c) = t.dim();
                (name, TensorRecord { shape: [r, c], data: t.iter().copied().collect() })
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            tensors,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag {:?}",
                file.format
            )));
        }
        let named = file
            .tensors
            .into_iter()
            .map(|(name, rec)| {
                let arr = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data)
                    .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
                Ok((name, arr))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let params = ModelParams::from_named(&file.config, named)?;
        Ok(Self { config: file.config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }
}
