//! ASR confidence: mean natural-log token probability per utterance, read
//! from a posterior file with lines `<utterance_id> <logprob_1> <logprob_2> ...`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRecord {
    pub utterance_id: String,
    pub token_logprobs: Vec<f64>,
}

impl ConfidenceRecord {
    pub fn new(utterance_id: impl Into<String>, token_logprobs: Vec<f64>) -> Result<Self> {
        if token_logprobs.is_empty() {
            return Err(Error::invalid("confidence record has no tokens"));
        }
        if let Some(p) = token_logprobs.iter().find(|p| !(**p <= 0.0)) {
            return Err(Error::invalid(format!(
                "log-probability must be <= 0, got {p}"
            )));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            token_logprobs,
        })
    }
}

pub fn confidence_score(r: &ConfidenceRecord) -> f64 {
    r.token_logprobs.iter().sum::<f64>() / r.token_logprobs.len() as f64
}

pub fn parse_posteriors(path: &Path, text: &str) -> Result<Vec<ConfidenceRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let values = parts
            .map(|v| {
                let x: f64 = v
                    .parse()
                    .map_err(|_| row_err(format!("`{v}` is not a number")))?;
                if !x.is_finite() || x > 0.0 {
                    return Err(row_err(format!("log-probability must be <= 0, got {v}")));
                }
                Ok(x)
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(row_err(format!("no token log-probabilities for `{id}`")));
        }
        if !seen.insert(id.to_string()) {
            return Err(row_err(format!("duplicate utterance id `{id}`")));
        }
        out.push(ConfidenceRecord {
            utterance_id: id.to_string(),
            token_logprobs: values,
        });
    }
    Ok(out)
}

pub fn load_posteriors(path: &Path) -> Result<Vec<ConfidenceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_posteriors(path, &text)
}

pub fn write_posteriors(path: &Path, records: &[ConfidenceRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.utterance_id);
        for p in &r.token_logprobs {
            let _ = write!(s, " {p}");
        }
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}
