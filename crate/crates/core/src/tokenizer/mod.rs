//! Residual quantisation of item embeddings into fixed-length semantic IDs.
//!
//! Level 1 clusters the raw embeddings; every later level clusters what the
//! earlier levels left over. Each level's codebook carries one extra all-zero
//! centroid (code `K`) so quantisation can pass a residual through unchanged,
//! which makes the reconstruction error non-increasing across levels.

mod kmeans;
mod trie;

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{Embeddings, ItemIdx};
use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

pub use trie::PrefixTrie;

use kmeans::{kmeans, nearest, KMeansParams};

/// A fixed-length code sequence, coarse to fine. Code `c` at level `t` is a
/// distinct token from code `c` at any other level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticId(pub Vec<usize>);

impl SemanticId {
    pub fn codes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (level, code) in self.0.iter().enumerate() {
            write!(f, "<{}_{}>", (b'a' + (level % 26) as u8) as char, code)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Semantic-ID length.
    pub levels: usize,
    /// Learned centroids per level (the zero centroid is extra).
    pub codebook_size: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            codebook_size: 32,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// Per-level codebooks, each `(K + 1) x dim` with the zero centroid last.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    levels: Vec<Array2<f64>>,
}

impl CodebookSet {
    pub fn from_levels(levels: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(Error::Config("codebook set needs at least one level".into()));
        };
        let shape = first.dim();
        for cb in &levels {
            if cb.dim() != shape {
                return Err(Error::Config("codebook levels differ in shape".into()));
            }
            if cb.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("codebook contains non-finite values".into()));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Array2<f64>] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Learned centroids per level.
    pub fn codebook_size(&self) -> usize {
        self.levels[0].nrows() - 1
    }

    /// Codes per level including the zero centroid.
    pub fn codes_per_level(&self) -> usize {
        self.levels[0].nrows()
    }

    pub fn zero_code(&self) -> usize {
        self.codebook_size()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].ncols()
    }

    /// Quantises one embedding level by level.
    ///
    /// Returns the codes and, per level, the residual norm after that level
    /// (the reconstruction error using levels `1..=t`).
    pub fn encode_item(&self, embedding: ArrayView1<f64>) -> Result<(SemanticId, Vec<f64>)> {
        if embedding.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: embedding.len(),
            });
        }
        let mut residual = embedding.to_owned();
        let mut codes = Vec::with_capacity(self.depth());
        let mut norms = Vec::with_capacity(self.depth());
        for cb in &self.levels {
            let (code, _) = nearest(residual.view(), cb.view());
            residual -= &cb.row(code);
            codes.push(code);
            norms.push(residual.dot(&residual).sqrt());
        }
        Ok((SemanticId(codes), norms))
    }

    /// Sum of the chosen centroids; a shorter ID uses only its leading levels.
    pub fn reconstruct(&self, id: &SemanticId) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        for (cb, &code) in self.levels.iter().zip(id.codes()) {
            out += &cb.row(code);
        }
        out
    }

    /// Writes one embedding-format file per level: `codebook_level{t}.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (t, cb) in self.levels.iter().enumerate() {
            let emb = Embeddings {
                ids: (0..cb.nrows()).map(|c| c.to_string()).collect(),
                vectors: cb.clone(),
            };
            write_atomic(
                &dir.join(format!("codebook_level{}.txt", t + 1)),
                emb.to_text().as_bytes(),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, levels: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(levels);
        for t in 0..levels {
            let text = read_to_string(&dir.join(format!("codebook_level{}.txt", t + 1)))?;
            out.push(Embeddings::parse(&text)?.vectors);
        }
        Self::from_levels(out)
    }
}

/// Fits `levels` residual k-means codebooks of `codebook_size` centroids each.
pub fn fit_codebooks(embeddings: ArrayView2<f64>, cfg: &TokenizerConfig) -> Result<CodebookSet> {
    let n = embeddings.nrows();
    if cfg.levels == 0 || cfg.codebook_size == 0 {
        return Err(Error::Config("levels and codebook_size must be positive".into()));
    }
    if cfg.codebook_size > n {
        return Err(Error::CodebookUnderfilled {
            items: n,
            centroids: cfg.codebook_size,
        });
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("embeddings contain non-finite values".into()));
    }
    let dim = embeddings.ncols();
    let mut residuals = embeddings.to_owned();
    let mut levels = Vec::with_capacity(cfg.levels);
    for t in 0..cfg.levels {
        let learned = kmeans(
            residuals.view(),
            KMeansParams {
                k: cfg.codebook_size,
                max_iters: cfg.max_iters,
                tol: cfg.tol,
                seed: cfg.seed.wrapping_add(t as u64),
            },
        );
        let mut cb = Array2::zeros((cfg.codebook_size + 1, dim));
        cb.slice_mut(ndarray::s![..cfg.codebook_size, ..]).assign(&learned);
        // Same nearest-centroid rule as `encode_item`, so the next level
        // trains on exactly the residuals it will see at encode time.
        for mut r in residuals.axis_iter_mut(Axis(0)) {
            let (code, _) = nearest(r.view(), cb.view());
            r -= &cb.row(code);
        }
        levels.push(cb);
    }
    CodebookSet::from_levels(levels)
}

/// Bijection between catalog items and semantic IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTable {
    forward: Vec<SemanticId>,
    inverse: HashMap<SemanticId, ItemIdx>,
    depth: usize,
    codes_per_level: usize,
}

impl SemanticTable {
    pub fn from_ids(ids: Vec<SemanticId>, codes_per_level: usize) -> Result<Self> {
        let depth = ids.first().map_or(0, SemanticId::len);
        let mut inverse = HashMap::with_capacity(ids.len());
        for (item, id) in ids.iter().enumerate() {
            if id.len() != depth || id.codes().iter().any(|&c| c >= codes_per_level) {
                return Err(Error::Config(format!("malformed semantic id {id} for item {item}")));
            }
            if inverse.insert(id.clone(), item).is_some() {
                return Err(Error::Config(format!("semantic id {id} assigned twice")));
            }
        }
        Ok(Self {
            forward: ids,
            inverse,
            depth,
            codes_per_level,
        })
    }

    pub fn id_of(&self, item: ItemIdx) -> &SemanticId {
        &self.forward[item]
    }

    pub fn item_of(&self, id: &SemanticId) -> Option<ItemIdx> {
        self.inverse.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Semantic-ID length.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn codes_per_level(&self) -> usize {
        self.codes_per_level
    }

    pub fn ids(&self) -> &[SemanticId] {
        &self.forward
    }

    /// Per-level code occurrence counts over a multiset of items.
    pub fn code_frequencies<'a>(&self, items: impl IntoIterator<Item = &'a ItemIdx>) -> Vec<Vec<u64>> {
        let mut counts = vec![vec![0u64; self.codes_per_level]; self.depth];
        for &item in items {
            for (level, &code) in self.forward[item].codes().iter().enumerate() {
                counts[level][code] += 1;
            }
        }
        counts
    }

    /// `item_id c1 c2 ... cl` lines.
    pub fn to_text(&self, item_names: &[String]) -> String {
        let mut out = String::new();
        for (name, id) in item_names.iter().zip(&self.forward) {
            out.push_str(name);
            for c in id.codes() {
                let _ = write!(out, " {c}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the export format; rows are matched to `item_names` by id.
    pub fn parse(text: &str, item_names: &[String], codes_per_level: usize) -> Result<Self> {
        let index: HashMap<&str, usize> = item_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut ids: Vec<Option<SemanticId>> = vec![None; item_names.len()];
        for (lno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().expect("non-empty line");
            let codes: Vec<usize> = fields
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: lno + 1,
                    message: format!("{e}"),
                })?;
            let item = *index
                .get(name)
                .ok_or_else(|| Error::UnknownItem(name.to_string()))?;
            ids[item] = Some(SemanticId(codes));
        }
        let ids = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| id.ok_or_else(|| Error::UnknownItem(item_names[i].clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::from_ids(ids, codes_per_level)
    }
}

/// Encodes every item and resolves collisions on the last level.
///
/// Items are visited in index order. When an item's full ID is already taken,
/// its last code moves to the nearest last-level centroid (to the residual
/// entering that level) whose resulting ID is still free.
pub fn assign_ids(cbs: &CodebookSet, embeddings: ArrayView2<f64>) -> Result<SemanticTable> {
    let last = cbs.depth() - 1;
    let mut used: HashMap<SemanticId, ItemIdx> = HashMap::new();
    let mut ids = Vec::with_capacity(embeddings.nrows());
    for (item, emb) in embeddings.rows().into_iter().enumerate() {
        let (mut id, _) = cbs.encode_item(emb)?;
        if used.contains_key(&id) {
            let prefix = SemanticId(id.codes()[..last].to_vec());
            let residual = &emb - &cbs.reconstruct(&prefix);
            let cb = &cbs.levels()[last];
            let mut candidates: Vec<(f64, usize)> = cb
                .rows()
                .into_iter()
                .enumerate()
                .map(|(c, row)| (kmeans::squared_distance(residual.view(), row), c))
                .collect();
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let free = candidates.into_iter().map(|(_, c)| c).find(|&c| {
                let mut probe = prefix.0.clone();
                probe.push(c);
                !used.contains_key(&SemanticId(probe))
            });
            let Some(code) = free else {
                return Err(Error::IdSpaceExhausted { prefix: prefix.0 });
            };
            id.0[last] = code;
        }
        used.insert(id.clone(), item);
        ids.push(id);
    }
    SemanticTable::from_ids(ids, cbs.codes_per_level())
}

/// Fits codebooks and assigns IDs in one step.
pub fn tokenize(embeddings: ArrayView2<f64>, cfg: &TokenizerConfig) -> Result<(CodebookSet, SemanticTable)> {
    let cbs = fit_codebooks(embeddings, cfg)?;
    let table = assign_ids(&cbs, embeddings)?;
    Ok((cbs, table))
}
