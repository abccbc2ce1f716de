//! SSL-MOS style regression over pooled features, with the optional
//! listener-enhanced (LE) branch used for multi-task training.
//!
//! The frame encoder is a fixed log-mel front end followed by a trainable
//! linear adapter `h = Wᵀv`. The MOS head maps `h` to a score; the listener
//! head maps `concat(h, embedding[listener])` to that listener's rating.
//! Both losses backpropagate into the shared adapter. Only the MOS head is
//! used at inference.

mod grad;
mod model_file;
mod train;

pub use grad::{batch_losses, gradients, sgd_step, Gradients};
pub use model_file::{load_model, save_model, ModelFile, MODEL_FORMAT_VERSION};
pub use train::{
    examples_from_dataset, out_of_fold, train, train_examples, EpochLog, TrainExample, TrainOutcome,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Listener;
use crate::error::{check_len, Error, Result};
use crate::features::UtteranceVector;
use crate::training::stream_seed;

pub const DEFAULT_ADAPTER_DIM: usize = 64;
pub const DEFAULT_EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    SslMos,
    LeSslMos,
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingMode::SslMos => "ssl_mos",
            TrainingMode::LeSslMos => "le_ssl_mos",
        })
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssl_mos" => Ok(TrainingMode::SslMos),
            "le_ssl_mos" => Ok(TrainingMode::LeSslMos),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adapter_dim: usize,
    pub embedding_dim: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            learning_rate: 1e-4,
            batch_size: 4,
            max_epochs: 1000,
            patience: 10,
            seed: 0,
            adapter_dim: DEFAULT_ADAPTER_DIM,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.alpha > 0.0
            && self.beta >= 0.0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && self.adapter_dim > 0
            && self.embedding_dim > 0;
        if !positive {
            return Err(Error::invalid("training config values must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid("patience exceeds max_epochs"));
        }
        Ok(())
    }
}

/// Trainable `F x D` linear map standing in for the fine-tuned encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderAdapter {
    input_dim: usize,
    output_dim: usize,
    /// Row-major `[f][d]`.
    weight: Vec<f64>,
}

impl EncoderAdapter {
    pub fn new(input_dim: usize, output_dim: usize, weight: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::invalid("adapter dimensions must be positive"));
        }
        check_len(input_dim * output_dim, weight.len())?;
        Ok(Self {
            input_dim,
            output_dim,
            weight,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            output_dim: dim,
            weight,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// `Wᵀ v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.output_dim];
        for (row, &x) in self.weight.chunks_exact(self.output_dim).zip(v) {
            for (acc, w) in h.iter_mut().zip(row) {
                *acc += w * x;
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl MosHead {
    fn apply(&self, h: &[f64]) -> f64 {
        dot(&self.weight, h) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerHead {
    /// One row per registry listener.
    pub embeddings: Vec<Vec<f64>>,
    /// Adapter slice first, embedding slice second.
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl ListenerHead {
    pub fn embedding_dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    fn apply(&self, h: &[f64], listener: usize) -> f64 {
        let (wh, we) = self.weight.split_at(h.len());
        dot(wh, h) + dot(we, &self.embeddings[listener]) + self.bias
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub adapter: EncoderAdapter,
    pub mos_head: MosHead,
    pub listener_head: Option<ListenerHead>,
    pub listeners: Vec<Listener>,
}

impl PredictorModel {
    /// Seeded initialization. Adapter and heads draw from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, embeddings from `U(-0.1, 0.1)`.
    /// The adapter and MOS head are drawn first so both modes share them.
    pub fn init(
        feature_dim: usize,
        listeners: &[Listener],
        mode: TrainingMode,
        cfg: &TrainingConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let d = cfg.adapter_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 1));
        let mut uniform = |bound: f64, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let adapter_bound = 1.0 / (feature_dim as f64).sqrt();
        let adapter = EncoderAdapter::new(feature_dim, d, uniform(adapter_bound, feature_dim * d))?;
        let mos_bound = 1.0 / (d as f64).sqrt();
        let mut mos = uniform(mos_bound, d + 1);
        let mos_bias = mos.pop().expect("d + 1 draws");
        let mos_head = MosHead {
            weight: mos,
            bias: mos_bias,
        };
        let listener_head = match mode {
            TrainingMode::SslMos => None,
            TrainingMode::LeSslMos => {
                if listeners.is_empty() {
                    return Err(Error::invalid(
                        "listener-enhanced mode needs a listener registry",
                    ));
                }
                let e = cfg.embedding_dim;
                let bound = 1.0 / ((d + e) as f64).sqrt();
                let mut w = uniform(bound, d + e + 1);
                let bias = w.pop().expect("d + e + 1 draws");
                let embeddings = (0..listeners.len()).map(|_| uniform(0.1, e)).collect();
                Some(ListenerHead {
                    embeddings,
                    weight: w,
                    bias,
                })
            }
        };
        Ok(Self {
            adapter,
            mos_head,
            listener_head,
            listeners: listeners.to_vec(),
        })
    }

    pub fn mode(&self) -> TrainingMode {
        if self.listener_head.is_some() {
            TrainingMode::LeSslMos
        } else {
            TrainingMode::SslMos
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.adapter.input_dim
    }

    fn check_input(&self, v: &[f64]) -> Result<()> {
        check_len(self.adapter.input_dim, v.len())
    }

    /// MOS branch: `w · (Wᵀv) + b`.
    pub fn forward_mos(&self, v: &UtteranceVector) -> Result<f64> {
        self.check_input(v.as_slice())?;
        Ok(self.mos_head.apply(&self.adapter.apply(v.as_slice())))
    }

    /// Listener branch for the registry listener at `listener_index`.
    pub fn forward_listener(&self, v: &UtteranceVector, listener_index: usize) -> Result<f64> {
        self.check_input(v.as_slice())?;
        let head = self
            .listener_head
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no listener head"))?;
        if listener_index >= head.embeddings.len() {
            return Err(Error::invalid(format!(
                "listener index {listener_index} out of range (L = {})",
                head.embeddings.len()
            )));
        }
        Ok(head.apply(&self.adapter.apply(v.as_slice()), listener_index))
    }

    /// Inference: the MOS branch only.
    pub fn predict(&self, v: &UtteranceVector) -> Result<f64> {
        self.forward_mos(v)
    }

    /// All trainable scalars in a fixed order: adapter, MOS weight, MOS bias,
    /// then (if present) listener weight, listener bias, embeddings row-major.
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = self.adapter.weight.iter_mut().collect();
        out.extend(self.mos_head.weight.iter_mut());
        out.push(&mut self.mos_head.bias);
        if let Some(head) = self.listener_head.as_mut() {
            out.extend(head.weight.iter_mut());
            out.push(&mut head.bias);
            for row in head.embeddings.iter_mut() {
                out.extend(row.iter_mut());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        let base = self.adapter.weight.len() + self.mos_head.weight.len() + 1;
        base + self.listener_head.as_ref().map_or(0, |h| {
            h.weight.len() + 1 + h.embeddings.iter().map(Vec::len).sum::<usize>()
        })
    }
}

/// Mean absolute error, the MOS-branch objective.
pub fn loss_ssl(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_len(targets.len(), predictions.len())?;
    if predictions.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p).abs())
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Mean absolute error over every (utterance, listener) rating pair. Rows
/// may be ragged but must match between predictions and targets.
pub fn loss_le(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    check_len(targets.len(), predictions.len())?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, t) in predictions.iter().zip(targets) {
        check_len(t.len(), p.len())?;
        sum += p.iter().zip(t).map(|(a, b)| (b - a).abs()).sum::<f64>();
        count += p.len();
    }
    if count == 0 {
        return Err(Error::invalid("loss over an empty rating set"));
    }
    Ok(sum / count as f64)
}

pub fn loss_total(l_ssl: f64, l_le: f64, cfg: &TrainingConfig) -> f64 {
    cfg.alpha * l_ssl + cfg.beta * l_le
}
