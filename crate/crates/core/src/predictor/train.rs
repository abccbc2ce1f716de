use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    batch_losses, gradients, loss_ssl, sgd_step, PredictorModel, TrainingConfig, TrainingMode,
};
use crate::dataset::MosDataset;
use crate::error::{Error, Result};
use crate::features::{FeatureStore, UtteranceVector};
use crate::training::{stream_seed, BatchSampler, EarlyStopping, Verdict};

/// One utterance as seen by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub features: Vec<f64>,
    pub mos: f64,
    /// `(listener index, rating)` pairs.
    pub ratings: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss_ssl: f64,
    /// Absent in SSL-MOS mode.
    pub train_loss_le: Option<f64>,
    pub val_loss_ssl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    /// CSV `epoch,train_loss_ssl,train_loss_le,val_loss_ssl`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss_ssl,train_loss_le,val_loss_ssl\n");
        for e in &self.log {
            let le = e.train_loss_le.map(|v| v.to_string()).unwrap_or_default();
            s += &format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss_ssl, le, e.val_loss_ssl
            );
        }
        s
    }
}

/// Pairs each utterance with its pooled features, MOS and registry-indexed ratings.
pub fn examples_from_dataset(
    d: &MosDataset,
    pooled: &[UtteranceVector],
) -> Result<Vec<TrainExample>> {
    if pooled.len() != d.len() {
        return Err(Error::Shape {
            expected: d.len(),
            got: pooled.len(),
        });
    }
    d.utterances()
        .iter()
        .zip(pooled)
        .map(|(u, v)| {
            let ratings = u
                .ratings
                .iter()
                .map(|r| {
                    d.listener_index(&r.listener_id)
                        .map(|l| (l, f64::from(r.score)))
                        .ok_or_else(|| {
                            Error::invalid(format!("listener `{}` not in registry", r.listener_id))
                        })
                })
                .collect::<Result<_>>()?;
            Ok(TrainExample {
                features: v.0.clone(),
                mos: u.mean_opinion_score(),
                ratings,
            })
        })
        .collect()
}

fn validation_loss(model: &PredictorModel, val: &[TrainExample]) -> f64 {
    let preds: Vec<f64> = val
        .iter()
        .map(|ex| model.mos_head.apply(&model.adapter.apply(&ex.features)))
        .collect();
    let targets: Vec<f64> = val.iter().map(|ex| ex.mos).collect();
    loss_ssl(&preds, &targets).expect("validation set is non-empty")
}

/// Minibatch SGD with early stopping on validation `L_ssl`; returns the
/// weights of the best validation epoch.
pub fn train_examples(
    initial: PredictorModel,
    train: &[TrainExample],
    val: &[TrainExample],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if val.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let dim = initial.feature_dim();
    for ex in train.iter().chain(val) {
        crate::error::check_len(dim, ex.features.len())?;
    }
    if let Some(head) = &initial.listener_head {
        if train
            .iter()
            .flat_map(|ex| &ex.ratings)
            .any(|&(l, _)| l >= head.embeddings.len())
        {
            return Err(Error::invalid("rating listener index outside the registry"));
        }
    }

    let mut model = initial;
    let mut sampler = BatchSampler::new(train.len(), cfg.batch_size, stream_seed(cfg.seed, 2));
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut log = Vec::new();
    let with_le = model.listener_head.is_some();

    for epoch in 1..=cfg.max_epochs {
        let (mut ssl_sum, mut le_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for idx in sampler.epoch() {
            let batch: Vec<&TrainExample> = idx.iter().map(|&i| &train[i]).collect();
            let (ssl, le) = batch_losses(&model, &batch);
            ssl_sum += ssl;
            le_sum += le;
            n_batches += 1;
            let g = gradients(&model, &batch, cfg);
            sgd_step(&mut model, &g, cfg.learning_rate);
        }
        let val_loss = validation_loss(&model, val);
        log.push(EpochLog {
            epoch,
            train_loss_ssl: ssl_sum / n_batches as f64,
            train_loss_le: with_le.then(|| le_sum / n_batches as f64),
            val_loss_ssl: val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
    })
}

/// Trains a predictor from cached features.
pub fn train(
    train_set: &MosDataset,
    val_set: &MosDataset,
    store: &FeatureStore,
    cfg: &TrainingConfig,
    mode: TrainingMode,
) -> Result<TrainOutcome> {
    let train_pooled = store.pooled(train_set)?;
    let val_pooled = store.pooled(val_set)?;
    if mode == TrainingMode::LeSslMos && train_set.listeners() != val_set.listeners() {
        return Err(Error::invalid(
            "train and validation must share the listener registry",
        ));
    }
    let train_ex = examples_from_dataset(train_set, &train_pooled)?;
    let val_ex = examples_from_dataset(val_set, &val_pooled)?;
    let dim = train_ex[0].features.len();
    let model = PredictorModel::init(dim, train_set.listeners(), mode, cfg)?;
    train_examples(model, &train_ex, &val_ex, cfg)
}

/// K-fold out-of-fold predictions for every utterance of `examples`.
///
/// Fold `i` is predicted by a model trained on the remaining folds except
/// fold `i + 1`, which serves as its early-stopping set.
pub fn out_of_fold(
    examples: &[TrainExample],
    listeners: &[crate::dataset::Listener],
    cfg: &TrainingConfig,
    mode: TrainingMode,
    folds: usize,
) -> Result<Vec<f64>> {
    if folds < 3 {
        return Err(Error::invalid(
            "out-of-fold prediction needs at least 3 folds",
        ));
    }
    if examples.len() < folds {
        return Err(Error::invalid("fewer utterances than folds"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 3)));
    let mut fold_of = vec![0; examples.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let dim = examples[0].features.len();
    let mut out = vec![0.0; examples.len()];
    for k in 0..folds {
        let stop_fold = (k + 1) % folds;
        let pick = |f: usize| -> Vec<TrainExample> {
            examples
                .iter()
                .zip(&fold_of)
                .filter(|(_, &fo)| fo == f)
                .map(|(e, _)| e.clone())
                .collect()
        };
        let fit: Vec<TrainExample> = examples
            .iter()
            .zip(&fold_of)
            .filter(|(_, &fo)| fo != k && fo != stop_fold)
            .map(|(e, _)| e.clone())
            .collect();
        let model = PredictorModel::init(dim, listeners, mode, cfg)?;
        let trained = train_examples(model, &fit, &pick(stop_fold), cfg)?.model;
        for (i, ex) in examples.iter().enumerate() {
            if fold_of[i] == k {
                out[i] = trained.mos_head.apply(&trained.adapter.apply(&ex.features));
            }
        }
    }
    Ok(out)
}
