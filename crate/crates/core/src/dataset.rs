//! Listener-rated MOS corpora: one record per (utterance, listener) rating.
//!
//! The on-disk form is a rating manifest, a UTF-8 CSV with the header
//! `utterance_id,system_id,listener_id,score,audio_path` and one row per
//! rating. Listener embedding indices are assigned in lexicographic
//! listener-id order so that shuffled manifests produce the same registry.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_string, parse_csv, write_atomic, write_json};

pub const MANIFEST_HEADER: [&str; 5] = [
    "utterance_id",
    "system_id",
    "listener_id",
    "score",
    "audio_path",
];

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpinionScore {
    pub utterance_id: String,
    pub listener_id: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub system_id: String,
    pub audio_path: PathBuf,
    pub ratings: Vec<OpinionScore>,
}

impl Utterance {
    /// Arithmetic mean of the listener ratings.
    pub fn mean_opinion_score(&self) -> f64 {
        let sum: u32 = self.ratings.iter().map(|r| u32::from(r.score)).sum();
        f64::from(sum) / self.ratings.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Listener {
    pub listener_id: String,
    pub index: usize,
}

/// A flat rating row, the unit of the manifest format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub utterance_id: String,
    pub system_id: String,
    pub listener_id: String,
    pub score: u8,
    pub audio_path: PathBuf,
}

/// An immutable, validated MOS corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct MosDataset {
    utterances: Vec<Utterance>,
    listeners: Vec<Listener>,
    systems: BTreeSet<String>,
}

impl MosDataset {
    /// Builds a dataset from rating rows. Utterances keep first-appearance
    /// order; ratings keep row order within an utterance.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = RatingRecord>,
    {
        let mut builder = Builder::default();
        for (i, rec) in records.into_iter().enumerate() {
            builder
                .push(rec)
                .map_err(|m| Error::invalid(format!("record {}: {m}", i + 1)))?;
        }
        builder.finish(None)
    }

    /// Builds a dataset that reuses an existing listener registry. Every
    /// rating's listener must be present in `listeners`.
    pub fn with_registry(utterances: Vec<Utterance>, listeners: Vec<Listener>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::invalid("no utterances"));
        }
        for (i, l) in listeners.iter().enumerate() {
            if l.index != i {
                return Err(Error::invalid("listener indices must be contiguous from 0"));
            }
        }
        let known: HashSet<&str> = listeners.iter().map(|l| l.listener_id.as_str()).collect();
        let mut seen_utts = HashSet::new();
        for u in &utterances {
            if !seen_utts.insert(u.utterance_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate utterance `{}`",
                    u.utterance_id
                )));
            }
            if u.ratings.is_empty() {
                return Err(Error::invalid(format!(
                    "utterance `{}` has no ratings",
                    u.utterance_id
                )));
            }
            let mut seen = HashSet::new();
            for r in &u.ratings {
                if r.utterance_id != u.utterance_id {
                    return Err(Error::invalid(format!(
                        "rating for `{}` filed under `{}`",
                        r.utterance_id, u.utterance_id
                    )));
                }
                if !(MIN_SCORE..=MAX_SCORE).contains(&r.score) {
                    return Err(Error::invalid(format!("score {} outside 1..5", r.score)));
                }
                if !known.contains(r.listener_id.as_str()) {
                    return Err(Error::invalid(format!(
                        "listener `{}` not in registry",
                        r.listener_id
                    )));
                }
                if !seen.insert(r.listener_id.as_str()) {
                    return Err(Error::invalid(format!(
                        "duplicate rating ({}, {})",
                        u.utterance_id, r.listener_id
                    )));
                }
            }
        }
        let systems = utterances.iter().map(|u| u.system_id.clone()).collect();
        Ok(Self {
            utterances,
            listeners,
            systems,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn listeners(&self) -> &[Listener] {
        &self.listeners
    }

    pub fn systems(&self) -> &BTreeSet<String> {
        &self.systems
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn num_ratings(&self) -> usize {
        self.utterances.iter().map(|u| u.ratings.len()).sum()
    }

    pub fn listener_index(&self, listener_id: &str) -> Option<usize> {
        self.listeners
            .binary_search_by(|l| l.listener_id.as_str().cmp(listener_id))
            .ok()
    }

    pub fn utterance(&self, utterance_id: &str) -> Option<&Utterance> {
        self.utterances
            .iter()
            .find(|u| u.utterance_id == utterance_id)
    }

    /// Mean opinion score per utterance, in dataset order.
    pub fn mos_labels(&self) -> Vec<f64> {
        self.utterances
            .iter()
            .map(Utterance::mean_opinion_score)
            .collect()
    }

    pub fn utterance_ids(&self) -> Vec<&str> {
        self.utterances
            .iter()
            .map(|u| u.utterance_id.as_str())
            .collect()
    }

    /// Keeps utterances matching `keep`, sharing this dataset's listener registry.
    pub fn filter<F>(&self, mut keep: F) -> Result<Self>
    where
        F: FnMut(&Utterance) -> bool,
    {
        let kept: Vec<Utterance> = self
            .utterances
            .iter()
            .filter(|u| keep(u))
            .cloned()
            .collect();
        Self::with_registry(kept, self.listeners.clone())
    }

    pub fn records(&self) -> impl Iterator<Item = RatingRecord> + '_ {
        self.utterances.iter().flat_map(|u| {
            u.ratings.iter().map(move |r| RatingRecord {
                utterance_id: u.utterance_id.clone(),
                system_id: u.system_id.clone(),
                listener_id: r.listener_id.clone(),
                score: r.score,
                audio_path: u.audio_path.clone(),
            })
        })
    }

    /// Serializes to manifest text (LF line endings, header first).
    pub fn to_manifest_string(&self) -> String {
        let rows = self.records().map(|r| {
            [
                r.utterance_id,
                r.system_id,
                r.listener_id,
                r.score.to_string(),
                r.audio_path.display().to_string(),
            ]
        });
        csv_string(&MANIFEST_HEADER, rows)
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_manifest_string().as_bytes())
    }
}

#[derive(Default)]
struct Builder {
    order: Vec<String>,
    by_id: HashMap<String, Utterance>,
    listener_ids: BTreeSet<String>,
    pairs: HashSet<(String, String)>,
}

impl Builder {
    fn push(&mut self, rec: RatingRecord) -> std::result::Result<(), String> {
        if !(MIN_SCORE..=MAX_SCORE).contains(&rec.score) {
            return Err(format!("score {} outside 1..5", rec.score));
        }
        for (name, value) in [
            ("utterance_id", &rec.utterance_id),
            ("system_id", &rec.system_id),
            ("listener_id", &rec.listener_id),
        ] {
            if value.is_empty() {
                return Err(format!("empty {name}"));
            }
        }
        if !self
            .pairs
            .insert((rec.utterance_id.clone(), rec.listener_id.clone()))
        {
            return Err(format!(
                "duplicate rating for (utterance `{}`, listener `{}`)",
                rec.utterance_id, rec.listener_id
            ));
        }
        self.listener_ids.insert(rec.listener_id.clone());
        let rating = OpinionScore {
            utterance_id: rec.utterance_id.clone(),
            listener_id: rec.listener_id,
            score: rec.score,
        };
        match self.by_id.get_mut(&rec.utterance_id) {
            Some(u) => {
                if u.system_id != rec.system_id {
                    return Err(format!(
                        "utterance `{}` listed under systems `{}` and `{}`",
                        u.utterance_id, u.system_id, rec.system_id
                    ));
                }
                if u.audio_path != rec.audio_path {
                    return Err(format!(
                        "utterance `{}` has conflicting audio paths",
                        u.utterance_id
                    ));
                }
                u.ratings.push(rating);
            }
            None => {
                self.order.push(rec.utterance_id.clone());
                self.by_id.insert(
                    rec.utterance_id.clone(),
                    Utterance {
                        utterance_id: rec.utterance_id,
                        system_id: rec.system_id,
                        audio_path: rec.audio_path,
                        ratings: vec![rating],
                    },
                );
            }
        }
        Ok(())
    }

    fn finish(mut self, path: Option<&Path>) -> Result<MosDataset> {
        if self.order.is_empty() {
            return Err(match path {
                Some(p) => Error::format(p, "no utterances"),
                None => Error::invalid("no utterances"),
            });
        }
        let listeners = self
            .listener_ids
            .into_iter()
            .enumerate()
            .map(|(index, listener_id)| Listener { listener_id, index })
            .collect();
        let utterances = self
            .order
            .iter()
            .map(|id| {
                self.by_id
                    .remove(id)
                    .expect("utterance recorded in order list")
            })
            .collect();
        MosDataset::with_registry(utterances, listeners)
    }
}

/// Reads a rating manifest. Errors name the 1-based file line of the offending row.
pub fn load_manifest(path: &Path) -> Result<MosDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(path, &text)
}

pub fn parse_manifest(path: &Path, text: &str) -> Result<MosDataset> {
    let table = parse_csv(path, text)?;
    if table.header.is_empty() {
        return Err(Error::format(path, "no utterances"));
    }
    let mut position = [usize::MAX; 5];
    for (slot, name) in position.iter_mut().zip(MANIFEST_HEADER) {
        *slot =
            table
                .header
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })?;
    }
    if table.header.len() != MANIFEST_HEADER.len() {
        return Err(Error::format(
            path,
            format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        ));
    }

    let mut builder = Builder::default();
    for (row, fields) in &table.rows {
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            row: *row,
            message,
        };
        if fields.len() != MANIFEST_HEADER.len() {
            return Err(row_err(format!(
                "expected {} columns, found {}",
                MANIFEST_HEADER.len(),
                fields.len()
            )));
        }
        let field = |i: usize| &fields[position[i]];
        let raw_score = field(3);
        let score: i64 = raw_score
            .parse()
            .map_err(|_| row_err(format!("score `{raw_score}` is not an integer")))?;
        if !(i64::from(MIN_SCORE)..=i64::from(MAX_SCORE)).contains(&score) {
            return Err(row_err(format!("score {score} outside 1..5")));
        }
        builder
            .push(RatingRecord {
                utterance_id: field(0).to_string(),
                system_id: field(1).to_string(),
                listener_id: field(2).to_string(),
                score: score as u8,
                audio_path: PathBuf::from(field(4)),
            })
            .map_err(row_err)?;
    }
    builder.finish(Some(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub seed: u64,
    pub val_fraction: f64,
    pub system_disjoint: bool,
}

/// Splits into (train, validation). Both halves share the full listener registry.
///
/// With `system_disjoint`, whole systems are drawn in seeded-shuffle order
/// until the validation half holds at least `val_fraction * N` utterances.
pub fn split(d: &MosDataset, params: SplitParams) -> Result<(MosDataset, MosDataset)> {
    let SplitParams {
        seed,
        val_fraction,
        system_disjoint,
    } = params;
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction {val_fraction} not in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = d.len();
    let target = val_fraction * n as f64;

    let in_val: Vec<bool> = if system_disjoint {
        if d.systems.len() < 2 {
            return Err(Error::invalid(
                "system-disjoint split needs at least two systems",
            ));
        }
        let mut per_system: BTreeMap<&str, usize> = BTreeMap::new();
        for u in &d.utterances {
            *per_system.entry(u.system_id.as_str()).or_default() += 1;
        }
        let mut order: Vec<&str> = per_system.keys().copied().collect();
        order.shuffle(&mut rng);
        let mut chosen = HashSet::new();
        let mut count = 0usize;
        for sys in &order {
            if count as f64 >= target {
                break;
            }
            chosen.insert(*sys);
            count += per_system[sys];
        }
        if chosen.len() == order.len() {
            return Err(Error::invalid(format!(
                "val_fraction {val_fraction} leaves no system for training"
            )));
        }
        d.utterances
            .iter()
            .map(|u| chosen.contains(u.system_id.as_str()))
            .collect()
    } else {
        if n < 2 {
            return Err(Error::invalid(
                "utterance split needs at least two utterances",
            ));
        }
        let n_val = (target.ceil() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut flags = vec![false; n];
        for &i in &idx[..n_val] {
            flags[i] = true;
        }
        flags
    };

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (u, &v) in d.utterances.iter().zip(&in_val) {
        if v {
            val.push(u.clone());
        } else {
            train.push(u.clone());
        }
    }
    Ok((
        MosDataset::with_registry(train, d.listeners.clone())?,
        MosDataset::with_registry(val, d.listeners.clone())?,
    ))
}

#[derive(Debug, Serialize)]
struct SplitSidecar<'a> {
    source: String,
    params: SplitParams,
    train_manifest: &'a str,
    val_manifest: &'a str,
    train_utterances: usize,
    val_utterances: usize,
    train_systems: Vec<&'a str>,
    val_systems: Vec<&'a str>,
}

/// Writes `train.csv`, `val.csv` and a `split.json` sidecar into `dir`.
pub fn write_split(
    dir: &Path,
    source: &Path,
    params: SplitParams,
    train: &MosDataset,
    val: &MosDataset,
) -> Result<()> {
    train.write_manifest(&dir.join("train.csv"))?;
    val.write_manifest(&dir.join("val.csv"))?;
    let sidecar = SplitSidecar {
        source: source.display().to_string(),
        params,
        train_manifest: "train.csv",
        val_manifest: "val.csv",
        train_utterances: train.len(),
        val_utterances: val.len(),
        train_systems: train.systems.iter().map(String::as_str).collect(),
        val_systems: val.systems.iter().map(String::as_str).collect(),
    };
    write_json(&dir.join("split.json"), &sidecar)
}
