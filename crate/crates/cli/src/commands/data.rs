use std::path::Path;

use mosfuse_core::dataset::{split, write_split, SplitParams};
use mosfuse_core::features::cache_features;
use mosfuse_core::synth::{generate, write_corpus, SynthSpec};

use super::{manifest, usage_if_invalid};
use crate::args::{FeaturesArgs, PrepareArgs, SynthArgs};
use crate::error::{CliError, CliResult};

pub fn synth(a: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        n_systems: a.n_systems,
        utterances_per_system: a.utterances_per_system,
        n_listeners: a.n_listeners,
        listener_bias_std: a.listener_bias_std,
        noise_std: a.noise_std,
        feature_dim: a.feature_dim,
        seed: a.seed,
    };
    spec.validate().map_err(usage_if_invalid)?;
    let corpus = generate(&spec)?;
    write_corpus(&a.out, &corpus)?;
    println!(
        "wrote {} ratings for {} utterances from {} systems to {}",
        corpus.dataset.num_ratings(),
        corpus.dataset.len(),
        corpus.dataset.systems().len(),
        a.out.display()
    );
    Ok(())
}

pub fn prepare(a: &PrepareArgs) -> CliResult {
    let d = manifest(&a.manifest)?;
    let params = SplitParams {
        seed: a.seed,
        val_fraction: a.val_fraction,
        system_disjoint: a.system_disjoint,
    };
    let (train, val) = split(&d, params).map_err(usage_if_invalid)?;
    write_split(&a.out, &a.manifest, params, &train, &val)?;
    println!(
        "{} utterances, {} listeners, {} systems: train {} / val {}",
        d.len(),
        d.listeners().len(),
        d.systems().len(),
        train.len(),
        val.len()
    );
    Ok(())
}

pub fn features(a: &FeaturesArgs) -> CliResult {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let d = manifest(&a.manifest)?;
    let root = match &a.audio_root {
        Some(r) => r.clone(),
        None => a.manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    let report = cache_features(&d, &root, &a.out, a.target_rms_db, a.jobs)?;
    println!(
        "cached {} utterances ({} up to date) in {}",
        report.written,
        report.skipped,
        a.out.display()
    );
    Ok(())
}
