use mosfuse_core::features::{FeatureStore, FrameFeatures};
use mosfuse_core::scores::{write_scores, ScoreTable};
use mosfuse_core::unsupervised::{
    confidence_score, kmeans_fit, load_posteriors, load_quantizer, load_ulm, save_quantizer,
    save_ulm, speechlm_score, ulm_finetune, ulm_train, KMeansQuantizer, UnitSequence,
};
use mosfuse_core::MosDataset;
use rayon::prelude::*;

use super::{manifest, thread_pool, usage_if_invalid};
use crate::args::{ConfidenceArgs, SpeechlmFinetuneArgs, SpeechlmFitArgs, SpeechlmScoreArgs};
use crate::error::{CliError, CliResult};

fn unit_sequences(
    d: &MosDataset,
    store: &FeatureStore,
    q: &KMeansQuantizer,
    dedup: bool,
) -> CliResult<Vec<UnitSequence>> {
    let mut out = Vec::with_capacity(d.len());
    for u in d.utterances() {
        out.push(q.quantize(&store.frames(&u.utterance_id)?, dedup)?);
    }
    Ok(out)
}

pub fn fit(a: &SpeechlmFitArgs) -> CliResult {
    if a.clusters < 2 || a.order == 0 {
        return Err(CliError::Usage(
            "--clusters must be at least 2 and --order at least 1".into(),
        ));
    }
    let d = manifest(&a.manifest)?;
    let store = FeatureStore::new(&a.features);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for u in d.utterances() {
        rows.extend(store.frames(&u.utterance_id)?.rows().map(<[f64]>::to_vec));
    }
    let total = rows.len();
    if let Some(max) = a.max_frames {
        if max == 0 {
            return Err(CliError::Usage("--max-frames must be positive".into()));
        }
        let stride = total.div_ceil(max);
        rows = rows.into_iter().step_by(stride.max(1)).collect();
    }
    let fit = kmeans_fit(&FrameFeatures::from_rows(&rows)?, a.clusters, a.seed)?;
    let seqs = unit_sequences(&d, &store, &fit.quantizer, !a.no_dedup)?;
    let lm = ulm_train(&seqs, a.order, a.clusters)?;
    save_quantizer(&a.quantizer_out, &fit.quantizer)?;
    save_ulm(&a.lm_out, &lm)?;
    println!(
        "k-means on {} of {} frames: K = {}, {} iterations, inertia {:.4}; order-{} unit LM over {} utterances",
        rows.len(),
        total,
        a.clusters,
        fit.iterations,
        fit.inertia,
        a.order,
        seqs.len()
    );
    Ok(())
}

pub fn finetune(a: &SpeechlmFinetuneArgs) -> CliResult {
    let lm = load_ulm(&a.lm)?;
    let q = load_quantizer(&a.quantizer)?;
    let d = manifest(&a.manifest)?;
    let domain = d
        .filter(|u| u.mean_opinion_score() > a.min_mos)
        .map_err(|_| {
            CliError::Runtime(anyhow::anyhow!(
                "{}: no utterances with MOS above {}",
                a.manifest.display(),
                a.min_mos
            ))
        })?;
    let seqs = unit_sequences(&domain, &FeatureStore::new(&a.features), &q, !a.no_dedup)?;
    let tuned = ulm_finetune(&lm, &seqs, a.mix).map_err(usage_if_invalid)?;
    save_ulm(&a.out, &tuned)?;
    println!(
        "fine-tuned on {} of {} utterances with MOS > {} (mix {})",
        domain.len(),
        d.len(),
        a.min_mos,
        a.mix
    );
    Ok(())
}

pub fn score(a: &SpeechlmScoreArgs) -> CliResult {
    let pool = thread_pool(a.jobs)?;
    let lm = load_ulm(&a.lm)?;
    let q = load_quantizer(&a.quantizer)?;
    let d = manifest(&a.manifest)?;
    let seqs = unit_sequences(&d, &FeatureStore::new(&a.features), &q, !a.no_dedup)?;
    let scores = pool.install(|| {
        seqs.par_iter()
            .map(|s| speechlm_score(&lm, s))
            .collect::<Result<Vec<f64>, _>>()
    })?;
    write_scores(&a.out, &ScoreTable::for_dataset(&d, scores)?)?;
    println!("scored {} utterances", d.len());
    Ok(())
}

pub fn confidence(a: &ConfidenceArgs) -> CliResult {
    let records = load_posteriors(&a.posteriors)?;
    let table = ScoreTable::new(
        records.iter().map(|r| r.utterance_id.clone()).collect(),
        records.iter().map(confidence_score).collect(),
    )?;
    let table = match &a.manifest {
        Some(m) => {
            let d = manifest(m)?;
            let name = a.posteriors.display().to_string();
            ScoreTable::for_dataset(&d, table.aligned(&d, &name)?)?
        }
        None => table,
    };
    write_scores(&a.out, &table)?;
    println!("scored {} utterances", table.len());
    Ok(())
}
