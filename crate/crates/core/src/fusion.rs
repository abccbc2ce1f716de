//! Subsystem selection and the bias-free linear fuser.
//!
//! Q supervised predictors (chosen by validation SRCC), R confidence columns
//! and S SpeechLMScore columns are stacked into an N x (Q+R+S) matrix; the
//! fuser is a single weight vector trained with minibatch RMSProp on MSE.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::MosDataset;
use crate::error::{check_len, Error, Result};
use crate::io::{check_version, csv_string, parse_csv, read_json, write_atomic, write_json};
use crate::metrics::{lcc, srcc, MetricValue};
use crate::scores::ScoreTable;
use crate::training::{stream_seed, BatchSampler, EarlyStopping, Verdict};

pub const FUSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Predictor,
    Confidence,
    Speechlm,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Predictor => "predictor",
            ColumnKind::Confidence => "confidence",
            ColumnKind::Speechlm => "speechlm",
        })
    }
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predictor" => Ok(ColumnKind::Predictor),
            "confidence" => Ok(ColumnKind::Confidence),
            "speechlm" => Ok(ColumnKind::Speechlm),
            other => Err(Error::invalid(format!(
                "unknown column kind `{other}` (expected predictor, confidence or speechlm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// The fuser's input: one row per utterance, one column per subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemScores {
    utterance_ids: Vec<String>,
    columns: Vec<Column>,
    rows: Vec<Vec<f64>>,
}

impl SubsystemScores {
    pub fn new(
        utterance_ids: Vec<String>,
        columns: Vec<Column>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("score matrix has no columns"));
        }
        let mut names = HashSet::new();
        for c in &columns {
            if c.name.is_empty() || c.name.contains(',') {
                return Err(Error::invalid(format!("bad column name `{}`", c.name)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("duplicate column `{}`", c.name)));
            }
        }
        check_len(utterance_ids.len(), rows.len())?;
        let mut ids = HashSet::new();
        for id in &utterance_ids {
            if !ids.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate utterance id `{id}`")));
            }
        }
        for row in &rows {
            check_len(columns.len(), row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("score matrix has a non-finite cell"));
            }
        }
        Ok(Self {
            utterance_ids,
            columns,
            rows,
        })
    }

    pub fn utterance_ids(&self) -> &[String] {
        &self.utterance_ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Rows restricted and reordered to the utterances of `d`.
    pub fn aligned(&self, d: &MosDataset) -> Result<Self> {
        let pos: std::collections::HashMap<&str, usize> = self
            .utterance_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(d.len());
        for u in d.utterances() {
            let &i = pos.get(u.utterance_id.as_str()).ok_or_else(|| {
                Error::invalid(format!(
                    "score matrix has no row for utterance `{}`",
                    u.utterance_id
                ))
            })?;
            rows.push(self.rows[i].clone());
        }
        let ids = d.utterance_ids().into_iter().map(str::to_string).collect();
        Self::new(ids, self.columns.clone(), rows)
    }

    pub fn to_csv_string(&self) -> String {
        let header: Vec<&str> = std::iter::once("utterance_id")
            .chain(self.columns.iter().map(|c| c.name.as_str()))
            .collect();
        let rows = self
            .utterance_ids
            .iter()
            .zip(&self.rows)
            .map(|(id, row)| std::iter::once(id.clone()).chain(row.iter().map(f64::to_string)));
        csv_string(&header, rows)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSchema {
    format_version: u32,
    columns: Vec<Column>,
}

/// Sidecar path holding the column kinds of a score matrix CSV.
pub fn schema_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("schema.json")
}

pub fn write_score_matrix(path: &Path, m: &SubsystemScores) -> Result<()> {
    write_atomic(path, m.to_csv_string().as_bytes())?;
    write_json(
        &schema_path(path),
        &MatrixSchema {
            format_version: FUSION_FORMAT_VERSION,
            columns: m.columns.clone(),
        },
    )
}

pub fn read_score_matrix(path: &Path) -> Result<SubsystemScores> {
    let schema_file = schema_path(path);
    let schema: MatrixSchema = read_json(&schema_file)?;
    check_version(&schema_file, schema.format_version, FUSION_FORMAT_VERSION)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = parse_csv(path, &text)?;
    let expected: Vec<&str> = std::iter::once("utterance_id")
        .chain(schema.columns.iter().map(|c| c.name.as_str()))
        .collect();
    if table.header != expected {
        return Err(Error::format(
            path,
            format!(
                "header does not match schema: expected `{}`",
                expected.join(",")
            ),
        ));
    }
    let (mut ids, mut rows) = (Vec::new(), Vec::new());
    for (row, fields) in &table.rows {
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            row: *row,
            message,
        };
        if fields.len() != expected.len() {
            return Err(row_err(format!(
                "expected {} columns, found {}",
                expected.len(),
                fields.len()
            )));
        }
        let values = fields
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| row_err(format!("`{f}` is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(fields[0].to_string());
        rows.push(values);
    }
    SubsystemScores::new(ids, schema.columns, rows).map_err(|e| Error::format(path, e.to_string()))
}

/// Column counts of a fusion setup: P candidate SSL models give 2P
/// predictors, of which Q are kept; R confidence and S SpeechLMScore columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q > 2 * self.p {
            return Err(Error::invalid(format!(
                "Q = {} exceeds the 2P = {} available predictors",
                self.q,
                2 * self.p
            )));
        }
        if self.q + self.r + self.s == 0 {
            return Err(Error::invalid("fusion needs at least one column"));
        }
        Ok(())
    }

    /// Counts the column kinds; `p` defaults to the smallest value admitting Q.
    pub fn for_columns(columns: &[Column], p: Option<usize>) -> Result<Self> {
        let count = |k| columns.iter().filter(|c| c.kind == k).count();
        let q = count(ColumnKind::Predictor);
        let cfg = Self {
            p: p.unwrap_or(q.div_ceil(2)),
            q,
            r: count(ColumnKind::Confidence),
            s: count(ColumnKind::Speechlm),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A selection candidate with its validation correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub name: String,
    pub srcc: MetricValue,
    pub lcc: MetricValue,
}

fn corr_or_undefined(r: Result<f64>) -> Result<MetricValue> {
    match r {
        Ok(v) => Ok(MetricValue::Value(v)),
        Err(Error::UndefinedCorrelation(_)) => Ok(MetricValue::UNDEFINED),
        Err(e) => Err(e),
    }
}

/// Ranks candidates by utterance-level SRCC, then LCC (both descending,
/// undefined last), then name ascending.
pub fn rank_candidates(
    candidates: &[(String, Vec<f64>)],
    labels: &[f64],
) -> Result<Vec<RankedCandidate>> {
    let mut names = HashSet::new();
    let mut ranked = Vec::with_capacity(candidates.len());
    for (name, pred) in candidates {
        if !names.insert(name.as_str()) {
            return Err(Error::invalid(format!("duplicate candidate `{name}`")));
        }
        check_len(labels.len(), pred.len())?;
        ranked.push(RankedCandidate {
            name: name.clone(),
            srcc: corr_or_undefined(srcc(pred, labels))?,
            lcc: corr_or_undefined(lcc(pred, labels))?,
        });
    }
    let key = |m: &MetricValue| m.value().unwrap_or(f64::NEG_INFINITY);
    ranked.sort_by(|a, b| {
        key(&b.srcc)
            .total_cmp(&key(&a.srcc))
            .then_with(|| key(&b.lcc).total_cmp(&key(&a.lcc)))
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(ranked)
}

/// The `q` best candidates in rank order.
pub fn select_top_q(
    candidates: &[(String, Vec<f64>)],
    labels: &[f64],
    q: usize,
) -> Result<Vec<RankedCandidate>> {
    if q > candidates.len() {
        return Err(Error::invalid(format!(
            "Q = {q} exceeds the {} candidates",
            candidates.len()
        )));
    }
    let mut ranked = rank_candidates(candidates, labels)?;
    ranked.truncate(q);
    Ok(ranked)
}

/// Stacks subsystem score tables into a matrix aligned with `d`, returning it
/// with the utterance MOS labels.
pub fn assemble(
    subsystems: &[(Column, ScoreTable)],
    d: &MosDataset,
) -> Result<(SubsystemScores, Vec<f64>)> {
    let mut cols = Vec::with_capacity(subsystems.len());
    for (c, t) in subsystems {
        cols.push(t.aligned(d, &c.name)?);
    }
    let rows = (0..d.len())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let ids = d.utterance_ids().into_iter().map(str::to_string).collect();
    let columns = subsystems.iter().map(|(c, _)| c.clone()).collect();
    Ok((SubsystemScores::new(ids, columns, rows)?, d.mos_labels()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuserConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
}

impl Default for FuserConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 4,
            max_epochs: 1000,
            patience: 20,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl FuserConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive")))
            }
        };
        positive(
            "learning_rate",
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
        )?;
        positive("batch_size", self.batch_size > 0)?;
        positive("max_epochs", self.max_epochs > 0)?;
        positive("patience", self.patience > 0)?;
        positive("rmsprop_epsilon", self.rmsprop_epsilon > 0.0)?;
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::invalid("rmsprop_decay must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// RMSProp state: `v <- rho v + (1 - rho) g^2`, `w <- w - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    learning_rate: f64,
    decay: f64,
    epsilon: f64,
    mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(n: usize, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            decay,
            epsilon,
            mean_square: vec![0.0; n],
        }
    }

    pub fn mean_square(&self) -> &[f64] {
        &self.mean_square
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        for ((w, v), &g) in weights.iter_mut().zip(&mut self.mean_square).zip(grad) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *w -= self.learning_rate * g / (v.sqrt() + self.epsilon);
        }
    }
}

/// Per-column mean/std applied before the weights when `--standardize` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Statistics of `m`'s columns; constant columns get std 1.
    pub fn fit(m: &SubsystemScores) -> Self {
        let n = m.n_rows() as f64;
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for j in 0..m.n_cols() {
            let col = m.column(j);
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            mean.push(mu);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Bias-free linear fuser.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub weights: Vec<f64>,
    pub columns: Vec<Column>,
    pub standardization: Option<Standardization>,
}

impl FusionModel {
    /// Uniform starting ensemble: every weight is `1 / (Q+R+S)`.
    pub fn uniform(columns: Vec<Column>) -> Self {
        let w = 1.0 / columns.len() as f64;
        Self {
            weights: vec![w; columns.len()],
            columns,
            standardization: None,
        }
    }

    /// Fused scores for every row; the matrix must carry the model's columns in order.
    pub fn predict(&self, m: &SubsystemScores) -> Result<Vec<f64>> {
        if m.columns() != self.columns.as_slice() {
            let names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
            return Err(Error::invalid(format!(
                "score matrix columns do not match the model (expected {})",
                names.join(",")
            )));
        }
        m.rows().iter().map(|r| fuse_forward(self, r)).collect()
    }
}

/// `dot(weights, row)` after optional standardization; no bias is added.
pub fn fuse_forward(m: &FusionModel, row: &[f64]) -> Result<f64> {
    check_len(m.weights.len(), row.len())?;
    Ok(match &m.standardization {
        Some(s) => dot(&m.weights, &s.apply(row)),
        None => dot(&m.weights, row),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mse_of(weights: &[f64], rows: &[Vec<f64>], labels: &[f64]) -> f64 {
    let sum: f64 = rows
        .iter()
        .zip(labels)
        .map(|(r, y)| {
            let e = dot(weights, r) - y;
            e * e
        })
        .sum();
    sum / rows.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuserEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct FuserOutcome {
    pub model: FusionModel,
    pub log: Vec<FuserEpoch>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

impl FuserOutcome {
    /// CSV `epoch,train_mse,val_mse`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for e in &self.log {
            s += &format!("{},{},{}\n", e.epoch, e.train_mse, e.val_mse);
        }
        s
    }
}

/// Minibatch RMSProp on MSE, early-stopped on validation MSE; returns the
/// best-epoch weights.
pub fn train_fuser(
    train: &SubsystemScores,
    train_labels: &[f64],
    val: &SubsystemScores,
    val_labels: &[f64],
    cfg: &FuserConfig,
    standardize: bool,
) -> Result<FuserOutcome> {
    cfg.validate()?;
    if train.n_rows() == 0 || val.n_rows() == 0 {
        return Err(Error::invalid(
            "fuser needs non-empty train and validation matrices",
        ));
    }
    if train.columns() != val.columns() {
        return Err(Error::invalid(
            "train and validation score matrices have different columns",
        ));
    }
    check_len(train.n_rows(), train_labels.len())?;
    check_len(val.n_rows(), val_labels.len())?;

    let mut model = FusionModel::uniform(train.columns().to_vec());
    let (train_rows, val_rows): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if standardize {
        let s = Standardization::fit(train);
        let t = train.rows().iter().map(|r| s.apply(r)).collect();
        let v = val.rows().iter().map(|r| s.apply(r)).collect();
        model.standardization = Some(s);
        (t, v)
    } else {
        (train.rows().to_vec(), val.rows().to_vec())
    };

    let n_cols = model.weights.len();
    let mut opt = RmsProp::new(
        n_cols,
        cfg.learning_rate,
        cfg.rmsprop_decay,
        cfg.rmsprop_epsilon,
    );
    let mut sampler = BatchSampler::new(train_rows.len(), cfg.batch_size, stream_seed(cfg.seed, 2));
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.weights.clone();
    let mut log = Vec::new();
    let mut grad = vec![0.0; n_cols];

    for epoch in 1..=cfg.max_epochs {
        for idx in sampler.epoch() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / idx.len() as f64;
            for &i in &idx {
                let e = dot(&model.weights, &train_rows[i]) - train_labels[i];
                for (g, x) in grad.iter_mut().zip(&train_rows[i]) {
                    *g += scale * e * x;
                }
            }
            opt.step(&mut model.weights, &grad);
        }
        let val_mse = mse_of(&model.weights, &val_rows, val_labels);
        log.push(FuserEpoch {
            epoch,
            train_mse: mse_of(&model.weights, &train_rows, train_labels),
            val_mse,
        });
        match stopper.observe(epoch, val_mse) {
            Verdict::Improved => best.clone_from(&model.weights),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    model.weights = best;
    Ok(FuserOutcome {
        model,
        log,
        best_epoch: stopper.best_epoch(),
        best_val_mse: stopper.best_loss(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusionFile {
    format_version: u32,
    columns: Vec<Column>,
    /// Decimal text, shortest representation that round-trips.
    weights: Vec<String>,
    standardization: Option<Standardization>,
    fusion_config: Option<FusionConfig>,
    fuser_config: Option<FuserConfig>,
    best_val_mse: Option<f64>,
}

pub fn save_fusion_model(
    path: &Path,
    m: &FusionModel,
    fusion: Option<&FusionConfig>,
    cfg: Option<&FuserConfig>,
    best_val_mse: Option<f64>,
) -> Result<()> {
    write_json(
        path,
        &FusionFile {
            format_version: FUSION_FORMAT_VERSION,
            columns: m.columns.clone(),
            weights: m.weights.iter().map(f64::to_string).collect(),
            standardization: m.standardization.clone(),
            fusion_config: fusion.copied(),
            fuser_config: cfg.copied(),
            best_val_mse,
        },
    )
}

pub fn load_fusion_model(path: &Path) -> Result<FusionModel> {
    let f: FusionFile = read_json(path)?;
    check_version(path, f.format_version, FUSION_FORMAT_VERSION)?;
    let bad = |m: String| Error::format(path, m);
    if f.weights.len() != f.columns.len() {
        return Err(bad(format!(
            "{} weights for {} columns",
            f.weights.len(),
            f.columns.len()
        )));
    }
    let weights = f
        .weights
        .iter()
        .map(|w| {
            w.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("weight `{w}` is not a finite number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = &f.standardization {
        if s.mean.len() != weights.len()
            || s.std.len() != weights.len()
            || s.std.iter().any(|&v| !(v > 0.0))
        {
            return Err(bad("malformed standardization statistics".into()));
        }
    }
    Ok(FusionModel {
        weights,
        columns: f.columns,
        standardization: f.standardization,
    })
}
