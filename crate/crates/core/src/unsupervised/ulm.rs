//! Interpolated n-gram language model over discrete units.
//!
//! Token ids: units are `0..K`, end-of-sequence is `K`, and the
//! begin-of-sequence pad (history only, never predicted) is `K + 1`. The
//! predictive vocabulary therefore has `K + 1` events.
//!
//! For an order-`n` model the probability of `w` after history `h` is
//! `sum_k lambda_k * p_k(w | h)` where `p_1` is the add-one smoothed unigram
//! and `p_k` (k >= 2) is the relative frequency of `w` after the last `k - 1`
//! tokens, falling back to `p_{k-1}` when that context was never seen. Each
//! `p_k` is a proper distribution, so the mixture is one too.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::UnitSequence;
use crate::error::{Error, Result};
use crate::io::{check_version, read_json, write_json};

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_MIX: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<u32, u64>,
}

/// Raw k-gram counts for k = 1..=order.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramCounts {
    order: usize,
    vocab_size: usize,
    /// `tables[k - 1]` maps a (k-1)-token context to next-token counts.
    tables: Vec<BTreeMap<Vec<u32>, ContextCounts>>,
}

impl NgramCounts {
    fn train(sequences: &[UnitSequence], order: usize, vocab_size: usize) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("empty unit corpus"));
        }
        if order == 0 {
            return Err(Error::invalid("LM order must be at least 1"));
        }
        let eos = vocab_size as u32;
        let bos = eos + 1;
        let mut tables = vec![BTreeMap::<Vec<u32>, ContextCounts>::new(); order];
        for seq in sequences {
            if let Some(&u) = seq.units().iter().find(|&&u| u as usize >= vocab_size) {
                return Err(Error::invalid(format!(
                    "unit {u} outside vocabulary of {vocab_size}"
                )));
            }
            let mut padded = vec![bos; order - 1];
            padded.extend_from_slice(seq.units());
            padded.push(eos);
            for t in order - 1..padded.len() {
                let token = padded[t];
                for k in 1..=order {
                    let ctx = padded[t + 1 - k..t].to_vec();
                    let entry = tables[k - 1].entry(ctx).or_default();
                    entry.total += 1;
                    *entry.next.entry(token).or_default() += 1;
                }
            }
        }
        Ok(Self {
            order,
            vocab_size,
            tables,
        })
    }

    /// `p_k(token | history)` for k = `k`, where `history` already carries
    /// at least `order - 1` tokens of left padding.
    fn prob_at(&self, k: usize, history: &[u32], token: u32) -> f64 {
        if k == 1 {
            let unigram = self.tables[0].get(&Vec::new());
            let total = unigram.map_or(0, |c| c.total);
            let count = unigram
                .and_then(|c| c.next.get(&token))
                .copied()
                .unwrap_or(0);
            return (count + 1) as f64 / (total + self.vocab_size as u64 + 1) as f64;
        }
        let ctx = &history[history.len() + 1 - k..];
        match self.tables[k - 1].get(ctx) {
            Some(c) if c.total > 0 => {
                c.next.get(&token).copied().unwrap_or(0) as f64 / c.total as f64
            }
            _ => self.prob_at(k - 1, history, token),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    counts: NgramCounts,
}

/// A unit LM: a weighted mixture of interpolated n-gram count models.
/// A freshly trained LM has a single component; fine-tuning adds one.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitLm {
    order: usize,
    vocab_size: usize,
    lambdas: Vec<f64>,
    components: Vec<Component>,
}

impl UnitLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn eos(&self) -> u32 {
        self.vocab_size as u32
    }

    pub fn bos(&self) -> u32 {
        self.vocab_size as u32 + 1
    }

    /// Replaces the interpolation weights (non-negative, summing to one).
    pub fn with_lambdas(mut self, lambdas: Vec<f64>) -> Result<Self> {
        validate_lambdas(&lambdas, self.order)?;
        self.lambdas = lambdas;
        Ok(self)
    }

    /// Left-pads `history` with begin-of-sequence tokens to `order - 1`.
    pub fn padded_history(&self, history: &[u32]) -> Vec<u32> {
        let mut h = vec![self.bos(); self.order.saturating_sub(1)];
        h.extend_from_slice(history);
        h
    }

    /// Probability of `token` (a unit or `eos()`) after the unpadded `history`.
    pub fn prob(&self, history: &[u32], token: u32) -> f64 {
        self.prob_padded(&self.padded_history(history), token)
    }

    fn prob_padded(&self, padded: &[u32], token: u32) -> f64 {
        self.components
            .iter()
            .map(|c| {
                c.weight
                    * self
                        .lambdas
                        .iter()
                        .enumerate()
                        .map(|(i, l)| l * c.counts.prob_at(i + 1, padded, token))
                        .sum::<f64>()
            })
            .sum()
    }
}

fn validate_lambdas(lambdas: &[f64], order: usize) -> Result<()> {
    if lambdas.len() != order {
        return Err(Error::invalid(format!(
            "expected {order} interpolation weights"
        )));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0)) || (lambdas.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "interpolation weights must be non-negative and sum to 1",
        ));
    }
    Ok(())
}

/// Trains an order-`order` LM over `vocab_size` units with uniform
/// interpolation weights.
pub fn ulm_train(sequences: &[UnitSequence], order: usize, vocab_size: usize) -> Result<UnitLm> {
    let counts = NgramCounts::train(sequences, order, vocab_size)?;
    Ok(UnitLm {
        order,
        vocab_size,
        lambdas: vec![1.0 / order as f64; order],
        components: vec![Component {
            weight: 1.0,
            counts,
        }],
    })
}

/// Domain adaptation by interpolation: the result assigns
/// `(1 - mix) * p_base + mix * p_domain`, where `p_domain` is an LM trained on
/// `domain` alone with the base LM's order and interpolation weights.
pub fn ulm_finetune(lm: &UnitLm, domain: &[UnitSequence], mix: f64) -> Result<UnitLm> {
    if !(mix > 0.0 && mix <= 1.0) {
        return Err(Error::invalid(format!("mix {mix} not in (0, 1]")));
    }
    let counts = NgramCounts::train(domain, lm.order, lm.vocab_size)?;
    let mut components: Vec<Component> = lm
        .components
        .iter()
        .map(|c| Component {
            weight: c.weight * (1.0 - mix),
            counts: c.counts.clone(),
        })
        .collect();
    components.push(Component {
        weight: mix,
        counts,
    });
    components.retain(|c| c.weight > 0.0);
    Ok(UnitLm {
        components,
        ..lm.clone()
    })
}

/// Average natural-log probability per predicted event (every unit plus the
/// end-of-sequence token). Higher is more natural.
pub fn speechlm_score(lm: &UnitLm, seq: &UnitSequence) -> Result<f64> {
    if let Some(&u) = seq.units().iter().find(|&&u| u as usize >= lm.vocab_size) {
        return Err(Error::invalid(format!(
            "unit {u} outside vocabulary of {}",
            lm.vocab_size
        )));
    }
    let mut padded = lm.padded_history(&[]);
    let mut total = 0.0;
    for &u in seq.units() {
        total += lm.prob_padded(&padded, u).ln();
        padded.push(u);
    }
    total += lm.prob_padded(&padded, lm.eos()).ln();
    Ok(total / (seq.len() + 1) as f64)
}

pub const ULM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UlmFile {
    format_version: u32,
    order: usize,
    vocab_size: usize,
    lambdas: Vec<f64>,
    components: Vec<ComponentFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentFile {
    weight: f64,
    /// One list per order k = 1..=order.
    tables: Vec<Vec<ContextEntry>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextEntry {
    context: Vec<u32>,
    /// `(token, count)` pairs.
    next: Vec<(u32, u64)>,
}

pub fn save_ulm(path: &Path, lm: &UnitLm) -> Result<()> {
    let file = UlmFile {
        format_version: ULM_FORMAT_VERSION,
        order: lm.order,
        vocab_size: lm.vocab_size,
        lambdas: lm.lambdas.clone(),
        components: lm
            .components
            .iter()
            .map(|c| ComponentFile {
                weight: c.weight,
                tables: c
                    .counts
                    .tables
                    .iter()
                    .map(|t| {
                        t.iter()
                            .map(|(ctx, cc)| ContextEntry {
                                context: ctx.clone(),
                                next: cc.next.iter().map(|(&k, &v)| (k, v)).collect(),
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect(),
    };
    write_json(path, &file)
}

pub fn load_ulm(path: &Path) -> Result<UnitLm> {
    let file: UlmFile = read_json(path)?;
    check_version(path, file.format_version, ULM_FORMAT_VERSION)?;
    let bad = |m: &str| Error::format(path, m.to_string());
    validate_lambdas(&file.lambdas, file.order).map_err(|e| bad(&e.to_string()))?;
    let max_token = file.vocab_size as u32 + 1;
    let mut components = Vec::new();
    for c in file.components {
        if c.tables.len() != file.order {
            return Err(bad("count tables do not match order"));
        }
        let mut tables = Vec::new();
        for (k, entries) in c.tables.into_iter().enumerate() {
            let mut table = BTreeMap::new();
            for e in entries {
                if e.context.len() != k || e.context.iter().any(|&t| t > max_token) {
                    return Err(bad("malformed context"));
                }
                if e.next.iter().any(|&(t, _)| t >= max_token) {
                    return Err(bad("count for a token outside the vocabulary"));
                }
                let next: BTreeMap<u32, u64> = e.next.into_iter().collect();
                let total = next.values().sum();
                table.insert(e.context, ContextCounts { total, next });
            }
            tables.push(table);
        }
        components.push(Component {
            weight: c.weight,
            counts: NgramCounts {
                order: file.order,
                vocab_size: file.vocab_size,
                tables,
            },
        });
    }
    if components.is_empty()
        || (components.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(bad("component weights must sum to 1"));
    }
    Ok(UnitLm {
        order: file.order,
        vocab_size: file.vocab_size,
        lambdas: file.lambdas,
        components,
    })
}
