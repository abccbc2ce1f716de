//! Per-utterance score files: CSV `utterance_id,score`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::dataset::MosDataset;
use crate::error::{Error, Result};
use crate::io::{csv_string, parse_csv, write_atomic};

pub const SCORE_HEADER: &str = "utterance_id,score";

/// One score per utterance, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl ScoreTable {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        crate::error::check_len(ids.len(), values.len())?;
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id `{id}`")));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite score {v}")));
        }
        Ok(Self { ids, values })
    }

    /// Scores for every utterance of `d`, keyed by id.
    pub fn for_dataset(d: &MosDataset, values: Vec<f64>) -> Result<Self> {
        let ids = d.utterance_ids().into_iter().map(str::to_string).collect();
        Self::new(ids, values)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Scores reordered to the utterance order of `d`. `name` labels the
    /// table in the error raised for an uncovered utterance.
    pub fn aligned(&self, d: &MosDataset, name: &str) -> Result<Vec<f64>> {
        let by_id: HashMap<&str, f64> = self
            .ids
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
            .collect();
        d.utterances()
            .iter()
            .map(|u| {
                by_id.get(u.utterance_id.as_str()).copied().ok_or_else(|| {
                    Error::invalid(format!(
                        "`{name}` has no score for utterance `{}`",
                        u.utterance_id
                    ))
                })
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let rows = self
            .ids
            .iter()
            .zip(&self.values)
            .map(|(id, v)| [id.clone(), v.to_string()]);
        csv_string(&["utterance_id", "score"], rows)
    }
}

pub fn parse_scores(path: &Path, text: &str) -> Result<ScoreTable> {
    let table = parse_csv(path, text)?;
    if table.header.join(",") != SCORE_HEADER {
        return Err(Error::format(
            path,
            format!("expected header `{SCORE_HEADER}`"),
        ));
    }
    let (mut ids, mut values) = (Vec::new(), Vec::new());
    let mut seen = HashSet::new();
    for (row, fields) in &table.rows {
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            row: *row,
            message,
        };
        if fields.len() != 2 {
            return Err(row_err("expected 2 columns".into()));
        }
        let (id, v) = (&fields[0], &fields[1]);
        let v: f64 = v
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| row_err(format!("score `{v}` is not a finite number")))?;
        if !seen.insert(id.to_string()) {
            return Err(row_err(format!("duplicate utterance id `{id}`")));
        }
        ids.push(id.to_string());
        values.push(v);
    }
    Ok(ScoreTable { ids, values })
}

pub fn read_scores(path: &Path) -> Result<ScoreTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(path, &text)
}

pub fn write_scores(path: &Path, t: &ScoreTable) -> Result<()> {
    write_atomic(path, t.to_csv_string().as_bytes())
}
