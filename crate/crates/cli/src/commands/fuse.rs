use mosfuse_core::fusion::{
    assemble as assemble_matrix, load_fusion_model, rank_candidates, read_score_matrix,
    save_fusion_model, train_fuser, write_score_matrix, Column, ColumnKind, FuserConfig,
    FusionConfig, RankedCandidate,
};
use mosfuse_core::io::{write_atomic, write_json};
use mosfuse_core::scores::{read_scores, write_scores, ScoreTable};
use serde::Serialize;

use super::{manifest, name_and_path, usage_if_invalid};
use crate::args::{FuseApplyArgs, FuseAssembleArgs, FuseTrainArgs, SelectArgs};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct SelectionReport<'a> {
    q: usize,
    ranking: &'a [RankedCandidate],
    selected: Vec<&'a str>,
}

pub fn select(a: &SelectArgs) -> CliResult {
    let d = manifest(&a.manifest)?;
    let mut candidates = Vec::new();
    for spec in &a.candidates {
        let (name, path) = name_and_path(spec, "--candidate")?;
        candidates.push((name.to_string(), read_scores(path)?.aligned(&d, name)?));
    }
    if a.q > candidates.len() {
        return Err(CliError::Usage(format!(
            "--q {} exceeds the {} candidates",
            a.q,
            candidates.len()
        )));
    }
    let ranking = rank_candidates(&candidates, &d.mos_labels()).map_err(usage_if_invalid)?;
    let report = SelectionReport {
        q: a.q,
        ranking: &ranking,
        selected: ranking[..a.q].iter().map(|r| r.name.as_str()).collect(),
    };
    write_json(&a.out, &report)?;
    println!(
        "{:<4} {:<24} {:>8} {:>8}",
        "rank", "candidate", "SRCC", "LCC"
    );
    for (i, r) in ranking.iter().enumerate() {
        let mark = if i < a.q { "*" } else { " " };
        println!(
            "{:<4} {:<24} {:>8} {:>8}",
            format!("{}{mark}", i + 1),
            r.name,
            r.srcc.to_string(),
            r.lcc.to_string()
        );
    }
    Ok(())
}

fn parse_column(spec: &str) -> CliResult<(Column, &str)> {
    let bad = || CliError::Usage(format!("--column expects KIND:NAME=PATH, got `{spec}`"));
    let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
    let kind: ColumnKind = kind.parse().map_err(usage_if_invalid)?;
    let (name, path) = rest.split_once('=').ok_or_else(bad)?;
    if name.is_empty() || path.is_empty() {
        return Err(bad());
    }
    Ok((Column::new(name, kind), path))
}

pub fn assemble(a: &FuseAssembleArgs) -> CliResult {
    let d = manifest(&a.manifest)?;
    let mut subsystems = Vec::new();
    for spec in &a.columns {
        let (column, path) = parse_column(spec)?;
        subsystems.push((column, read_scores(path.as_ref())?));
    }
    let (m, _) = assemble_matrix(&subsystems, &d)?;
    write_score_matrix(&a.out, &m)?;
    println!(
        "{} x {} score matrix written to {}",
        m.n_rows(),
        m.n_cols(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: &FuseTrainArgs) -> CliResult {
    let cfg = FuserConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        max_epochs: a.max_epochs,
        patience: a.patience,
        rmsprop_decay: a.rmsprop_decay,
        rmsprop_epsilon: a.rmsprop_epsilon,
        seed: a.seed,
    };
    cfg.validate().map_err(usage_if_invalid)?;
    let train_d = manifest(&a.train_manifest)?;
    let val_d = manifest(&a.val_manifest)?;
    let train_m = read_score_matrix(&a.train_matrix)?.aligned(&train_d)?;
    let val_m = read_score_matrix(&a.val_matrix)?.aligned(&val_d)?;
    let fusion = FusionConfig::for_columns(train_m.columns(), a.p).map_err(usage_if_invalid)?;
    let outcome = train_fuser(
        &train_m,
        &train_d.mos_labels(),
        &val_m,
        &val_d.mos_labels(),
        &cfg,
        a.standardize,
    )?;
    save_fusion_model(
        &a.out,
        &outcome.model,
        Some(&fusion),
        Some(&cfg),
        Some(outcome.best_val_mse),
    )?;
    if let Some(log) = &a.log {
        write_atomic(log, outcome.log_csv().as_bytes())?;
    }
    println!(
        "fuser over Q={} R={} S={}: best epoch {} of {}, validation MSE {:.4}",
        fusion.q,
        fusion.r,
        fusion.s,
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_val_mse
    );
    for (c, w) in outcome.model.columns.iter().zip(&outcome.model.weights) {
        println!("  {:<24} {:<10} {w:+.6}", c.name, c.kind.to_string());
    }
    Ok(())
}

pub fn apply(a: &FuseApplyArgs) -> CliResult {
    let model = load_fusion_model(&a.model)?;
    let m = read_score_matrix(&a.matrix)?;
    let preds = model.predict(&m)?;
    write_scores(&a.out, &ScoreTable::new(m.utterance_ids().to_vec(), preds)?)?;
    println!("fused {} utterances", m.n_rows());
    Ok(())
}
