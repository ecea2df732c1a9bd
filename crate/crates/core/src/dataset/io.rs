use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::InteractionLog;
use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

/// Item embeddings, one row per item, in `ids` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    pub vectors: Array2<f64>,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Reorders rows to follow `catalog`; every catalog item must be present.
    pub fn aligned_to(&self, catalog: &[String]) -> Result<Embeddings> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut vectors = Array2::zeros((catalog.len(), self.dim()));
        for (row, id) in catalog.iter().enumerate() {
            let src = *index
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownItem(id.clone()))?;
            vectors.row_mut(row).assign(&self.vectors.row(src));
        }
        Ok(Embeddings {
            ids: catalog.to_vec(),
            vectors,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.ids.len(), self.dim());
        for (id, row) in self.ids.iter().zip(self.vectors.rows()) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Embeddings> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::EmptyLog)?;
        let parse_err = |line: usize, message: String| Error::Parse {
            line: line + 1,
            message,
        };
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(hline, format!("bad header {header:?}")))?;
        let [n, dim] = dims[..] else {
            return Err(parse_err(hline, "header must be `n_items embedding_dim`".into()));
        };
        let mut ids = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * dim);
        for (lno, line) in lines {
            let mut fields = line.split_whitespace();
            let id = fields.next().expect("non-empty line");
            let values: Vec<f64> = fields
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(lno, e.to_string()))?;
            if values.len() != dim {
                return Err(parse_err(
                    lno,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(lno, "non-finite embedding value".into()));
            }
            ids.push(id.to_string());
            data.extend(values);
        }
        if ids.len() != n {
            return Err(Error::Parse {
                line: 1,
                message: format!("header announces {n} items, found {}", ids.len()),
            });
        }
        let vectors = Array2::from_shape_vec((n, dim), data).expect("shape checked");
        Ok(Embeddings { ids, vectors })
    }
}

pub fn read_embeddings(path: &Path) -> Result<Embeddings> {
    Embeddings::parse(&read_to_string(path)?)
}

pub fn write_embeddings(path: &Path, emb: &Embeddings) -> Result<()> {
    write_atomic(path, emb.to_text().as_bytes())
}

pub fn read_interactions(path: &Path) -> Result<InteractionLog> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    super::ingest_interactions(std::io::BufReader::new(file))
}

pub fn write_interactions(path: &Path, log: &InteractionLog) -> Result<()> {
    let mut out = String::from("# user_id\titem_id\ttimestamp\n");
    for it in &log.interactions {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            log.users[it.user], log.items[it.item], it.timestamp
        );
    }
    write_atomic(path, out.as_bytes())
}
