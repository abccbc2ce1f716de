use std::path::Path;

use anyhow::Context;
use mosfuse_core::dataset::load_manifest;
use mosfuse_core::features::FeatureStore;
use mosfuse_core::io::write_atomic;
use mosfuse_core::predictor::{
    examples_from_dataset, load_model, out_of_fold, save_model, train as train_predictor,
    TrainingConfig, TrainingMode,
};
use mosfuse_core::scores::{write_scores, ScoreTable};
use mosfuse_core::{Error, MosDataset};
use rayon::prelude::*;

use super::{manifest, shared_registry, thread_pool, usage_if_invalid};
use crate::args::{PredictArgs, TrainArgs};
use crate::error::{CliError, CliResult};

/// A manifest without listener ids cannot drive the listener branch; that
/// is a usage error rather than a data error.
fn training_manifest(path: &Path, mode: TrainingMode) -> CliResult<MosDataset> {
    match load_manifest(path) {
        Err(Error::MissingColumn { column, .. })
            if column == "listener_id" && mode == TrainingMode::LeSslMos =>
        {
            Err(CliError::Usage(format!(
                "--mode le_ssl_mos needs per-listener ratings, but {} has no listener_id column",
                path.display()
            )))
        }
        other => Ok(other?),
    }
}

pub fn train(a: &TrainArgs) -> CliResult {
    let cfg = TrainingConfig {
        alpha: a.alpha,
        beta: a.beta,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        adapter_dim: a.adapter_dim,
        embedding_dim: a.embedding_dim,
    };
    cfg.validate().map_err(usage_if_invalid)?;
    if let Some(k) = a.oof {
        if k < 3 {
            return Err(CliError::Usage("--oof needs at least 3 folds".into()));
        }
    }
    let train_set = training_manifest(&a.train, a.mode)?;
    let val_set = training_manifest(&a.val, a.mode)?;
    let (train_set, val_set) = shared_registry(&train_set, &val_set)?;
    let store = FeatureStore::new(&a.features);

    let outcome = train_predictor(&train_set, &val_set, &store, &cfg, a.mode)?;
    save_model(
        &a.out,
        &outcome.model,
        Some(&cfg),
        Some(outcome.best_val_loss),
    )?;
    if let Some(log) = &a.log {
        write_atomic(log, outcome.log_csv().as_bytes())?;
    }
    println!(
        "{}: best epoch {} of {}, validation L1 {:.4}",
        a.mode,
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_val_loss
    );

    if let (Some(k), Some(path)) = (a.oof, &a.oof_out) {
        let examples = examples_from_dataset(&train_set, &store.pooled(&train_set)?)?;
        let preds = out_of_fold(&examples, train_set.listeners(), &cfg, a.mode, k)
            .context("out-of-fold predictions")?;
        write_scores(path, &ScoreTable::for_dataset(&train_set, preds)?)?;
        println!(
            "{k}-fold out-of-fold predictions written to {}",
            path.display()
        );
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CliResult {
    let pool = thread_pool(a.jobs)?;
    let model = load_model(&a.model)?;
    let d = manifest(&a.manifest)?;
    let pooled = FeatureStore::new(&a.features).pooled(&d)?;
    let preds = pool.install(|| {
        pooled
            .par_iter()
            .map(|v| model.predict(v))
            .collect::<Result<Vec<f64>, _>>()
    })?;
    write_scores(&a.out, &ScoreTable::for_dataset(&d, preds)?)?;
    println!("scored {} utterances with {} model", d.len(), model.mode());
    Ok(())
}
