use std::path::Path;

use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

/// One line of the prediction dump: `user_id<TAB>rank<TAB>item_id<TAB>score`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub user: String,
    /// 1-based.
    pub rank: usize,
    pub item: String,
    pub score: f64,
}

pub fn format_predictions(rows: &[PredictionRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{}\t{}\t{:?}\n", r.user, r.rank, r.item, r.score))
        .collect()
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRow>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 tab-separated fields"));
        }
        out.push(PredictionRow {
            user: f[0].to_string(),
            rank: f[1].parse().map_err(|_| bad("rank is not an integer"))?,
            item: f[2].to_string(),
            score: f[3].parse().map_err(|_| bad("score is not a number"))?,
        });
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    write_atomic(path, format_predictions(rows).as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    parse_predictions(&read_to_string(path)?)
}
