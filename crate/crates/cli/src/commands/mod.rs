mod data;
mod evaluate;
mod fuse;
mod model;
mod speechlm;

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::Context;
use mosfuse_core::dataset::{load_manifest, Listener};
use mosfuse_core::{Error, MosDataset};

use crate::args::{Command, FuseCommand, SpeechlmCommand};
use crate::error::{CliError, CliResult};

pub fn dispatch(cmd: &Command) -> CliResult {
    match cmd {
        Command::Synth(a) => data::synth(a),
        Command::Prepare(a) => data::prepare(a),
        Command::Features(a) => data::features(a),
        Command::Train(a) => model::train(a),
        Command::Predict(a) => model::predict(a),
        Command::Speechlm(SpeechlmCommand::Fit(a)) => speechlm::fit(a),
        Command::Speechlm(SpeechlmCommand::Finetune(a)) => speechlm::finetune(a),
        Command::Speechlm(SpeechlmCommand::Score(a)) => speechlm::score(a),
        Command::Confidence(a) => speechlm::confidence(a),
        Command::Select(a) => fuse::select(a),
        Command::Fuse(FuseCommand::Assemble(a)) => fuse::assemble(a),
        Command::Fuse(FuseCommand::Train(a)) => fuse::train(a),
        Command::Fuse(FuseCommand::Apply(a)) => fuse::apply(a),
        Command::Eval(a) => evaluate::eval(a),
    }
}

fn manifest(path: &Path) -> CliResult<MosDataset> {
    Ok(load_manifest(path)?)
}

/// Rebuilds both datasets over the union of their listeners so embedding
/// indices agree between them.
fn shared_registry(a: &MosDataset, b: &MosDataset) -> CliResult<(MosDataset, MosDataset)> {
    let ids: BTreeSet<&str> = a
        .listeners()
        .iter()
        .chain(b.listeners())
        .map(|l| l.listener_id.as_str())
        .collect();
    let registry: Vec<Listener> = ids
        .into_iter()
        .enumerate()
        .map(|(index, id)| Listener {
            listener_id: id.to_string(),
            index,
        })
        .collect();
    Ok((
        MosDataset::with_registry(a.utterances().to_vec(), registry.clone())?,
        MosDataset::with_registry(b.utterances().to_vec(), registry)?,
    ))
}

/// Splits `NAME=PATH`.
fn name_and_path<'a>(spec: &'a str, flag: &str) -> CliResult<(&'a str, &'a Path)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name, Path::new(path))),
        _ => Err(CliError::Usage(format!(
            "{flag} expects NAME=PATH, got `{spec}`"
        ))),
    }
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker threads")
        .map_err(CliError::from)
}

fn usage_if_invalid(e: Error) -> CliError {
    match e {
        Error::Invalid(m) => CliError::Usage(m),
        other => other.into(),
    }
}
