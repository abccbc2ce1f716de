use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderAdapter, ListenerHead, MosHead, PredictorModel, TrainingConfig, TrainingMode};
use crate::dataset::Listener;
use crate::error::{Error, Result};
use crate::io::{check_version, read_json, write_json};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// JSON model file. Weights are written as shortest round-trip decimals, so
/// loading reproduces every `f64` bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub mode: TrainingMode,
    #[serde(rename = "F")]
    pub feature_dim: usize,
    #[serde(rename = "D")]
    pub adapter_dim: usize,
    #[serde(rename = "E_dim")]
    pub embedding_dim: usize,
    pub listeners: Vec<Listener>,
    /// `F` rows of `D` values.
    pub adapter: Vec<Vec<f64>>,
    pub mos_head: MosHead,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listener_head: Option<ListenerHead>,
    pub training_config: Option<TrainingConfig>,
    pub best_val_loss: Option<f64>,
}

impl ModelFile {
    pub fn from_model(
        model: &PredictorModel,
        cfg: Option<&TrainingConfig>,
        best_val_loss: Option<f64>,
    ) -> Self {
        let d = model.adapter.output_dim();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            mode: model.mode(),
            feature_dim: model.adapter.input_dim(),
            adapter_dim: d,
            embedding_dim: model
                .listener_head
                .as_ref()
                .map_or(0, ListenerHead::embedding_dim),
            listeners: model.listeners.clone(),
            adapter: model
                .adapter
                .weight()
                .chunks(d)
                .map(<[f64]>::to_vec)
                .collect(),
            mos_head: model.mos_head.clone(),
            listener_head: model.listener_head.clone(),
            training_config: cfg.cloned(),
            best_val_loss,
        }
    }

    pub fn into_model(self) -> Result<PredictorModel> {
        let bad = |m: &str| Error::invalid(format!("model file: {m}"));
        if self.adapter.len() != self.feature_dim
            || self.adapter.iter().any(|r| r.len() != self.adapter_dim)
        {
            return Err(bad("adapter shape does not match F x D"));
        }
        if self.mos_head.weight.len() != self.adapter_dim {
            return Err(bad("mos_head weight length does not match D"));
        }
        if let Some(head) = &self.listener_head {
            if head.embeddings.len() != self.listeners.len() {
                return Err(bad("embedding rows do not match the listener registry"));
            }
            if head
                .embeddings
                .iter()
                .any(|r| r.len() != self.embedding_dim)
                || head.weight.len() != self.adapter_dim + self.embedding_dim
            {
                return Err(bad("listener head shape does not match D + E_dim"));
            }
        }
        if (self.mode == TrainingMode::LeSslMos) != self.listener_head.is_some() {
            return Err(bad("mode and listener head disagree"));
        }
        let weights = self.adapter.concat();
        if weights
            .iter()
            .chain(&self.mos_head.weight)
            .any(|w| !w.is_finite())
        {
            return Err(bad("non-finite weight"));
        }
        Ok(PredictorModel {
            adapter: EncoderAdapter::new(self.feature_dim, self.adapter_dim, weights)?,
            mos_head: self.mos_head,
            listener_head: self.listener_head,
            listeners: self.listeners,
        })
    }
}

pub fn save_model(
    path: &Path,
    model: &PredictorModel,
    cfg: Option<&TrainingConfig>,
    best_val_loss: Option<f64>,
) -> Result<()> {
    write_json(path, &ModelFile::from_model(model, cfg, best_val_loss))
}

pub fn load_model(path: &Path) -> Result<PredictorModel> {
    let file: ModelFile = read_json(path)?;
    check_version(path, file.format_version, MODEL_FORMAT_VERSION)?;
    file.into_model()
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::UtteranceVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_predictions_are_identical() {
        let listeners: Vec<Listener> = (0..3)
            .map(|i| Listener {
                listener_id: format!("l{i}"),
                index: i,
            })
            .collect();
        let cfg = TrainingConfig {
            adapter_dim: 7,
            embedding_dim: 5,
            seed: 21,
            ..TrainingConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        for mode in [TrainingMode::SslMos, TrainingMode::LeSslMos] {
            let model = PredictorModel::init(6, &listeners, mode, &cfg).unwrap();
            let path = dir.path().join(format!("{mode}.json"));
            save_model(&path, &model, Some(&cfg), Some(0.25)).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, model);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..100 {
                let v = UtteranceVector((0..6).map(|_| rng.random_range(-40.0..5.0)).collect());
                assert_eq!(
                    back.predict(&v).unwrap().to_bits(),
                    model.predict(&v).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn rejects_inconsistent_files() {
        let cfg = TrainingConfig {
            adapter_dim: 2,
            ..TrainingConfig::default()
        };
        let model = PredictorModel::init(3, &[], TrainingMode::SslMos, &cfg).unwrap();
        let mut file = ModelFile::from_model(&model, None, None);
        file.adapter.pop();
        assert!(file.into_model().is_err());
        let mut file = ModelFile::from_model(&model, None, None);
        file.mode = TrainingMode::LeSslMos;
        assert!(file.into_model().is_err());
    }
}
