//! The study stages behind each subcommand. Every stage reads its inputs
//! from the data files or the output directory and writes its artifacts
//! back there, recording hashes in the manifest.

use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;

use flustack_core::components::{external_load, loso_predictions, test_phase_predictions};
use flustack_core::ensemble::{apply_models, training_tables, CvLoss, EnsembleModel, Scheme, TrainingTable};
use flustack_core::evaluation::{
    consistency_summary, read_scores, read_weights, score_all, seasonal_rank, write_rankings, write_scores,
    write_weights,
};
use flustack_core::season::{ingest_wili, synthesize_seasons, write_thresholds, write_wili};
use flustack_core::{DataSplit, PredictionSet, Provenance, SeasonCollection};

use crate::config::Study;
use crate::manifest::Manifest;
use crate::Invalid;

pub const CV_DENSITIES: &str = "cv/densities.csv";
pub const CV_REALIZED: &str = "cv/realized.csv";
pub const TEST_DENSITIES: &str = "test/densities.csv";
pub const TEST_REALIZED: &str = "test/realized.csv";
pub const ENSEMBLE_DENSITIES: &str = "test/ensemble_densities.csv";
pub const ENSEMBLE_REALIZED: &str = "test/ensemble_realized.csv";
pub const WEIGHTS: &str = "test/weights.csv";
pub const CV_LOSSES: &str = "models/cv_losses.csv";
pub const GRID_LOSSES: &str = "grid/cv_losses.csv";
pub const SCORES: &str = "eval/scores.csv";
pub const RANKINGS: &str = "eval/rankings.csv";
pub const CONSISTENCY: &str = "eval/consistency.csv";

fn model_file(scheme: Scheme) -> String {
    format!("models/{scheme}.json")
}

/// Runs `stage` with the study's manifest and saves the manifest afterwards.
fn with_manifest(study: &Study, stage: impl FnOnce(&mut Manifest) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let mut manifest = Manifest::open(&study.out, &study.config_sha256, study.seed)?;
    stage(&mut manifest)?;
    manifest.save(&study.out)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> flustack_core::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn load_data(study: &Study) -> anyhow::Result<(SeasonCollection, DataSplit)> {
    study.check_inputs()?;
    let data = ingest_wili(&study.wili, study.thresholds.as_deref())?;
    let split = study.split(&data)?;
    Ok((data, split))
}

fn read_set(study: &Study, provenance: Provenance, densities: &str, realized: &str) -> anyhow::Result<PredictionSet> {
    let open = |rel: &str| {
        let path = study.out.join(rel);
        std::fs::File::open(&path).with_context(|| format!("missing {}; run the earlier stage first", path.display()))
    };
    Ok(PredictionSet::read(provenance, open(densities)?, open(realized)?)?)
}

fn write_set(
    manifest: &mut Manifest,
    out: &Path,
    set: &PredictionSet,
    densities: &str,
    realized: &str,
) -> anyhow::Result<()> {
    manifest.write_artifact(out, densities, &csv_bytes(|b| set.write_densities(b))?)?;
    manifest.write_artifact(out, realized, &csv_bytes(|b| set.write_realized(b))?)
}

/// Writes synthetic data to the configured data paths.
pub fn simulate(study: &Study) -> anyhow::Result<()> {
    let generator = study
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| Invalid("config has no [simulate] section".into()))?;
    let thresholds = study
        .thresholds
        .as_ref()
        .ok_or_else(|| Invalid("simulate needs data.thresholds to be set".into()))?;
    let data = synthesize_seasons(generator)?;
    for path in [&study.wili, thresholds] {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_wili(std::fs::File::create(&study.wili)?, data.values())?;
    write_thresholds(std::fs::File::create(thresholds)?, data.values())?;
    Ok(())
}

fn add_external(study: &Study, set: &mut PredictionSet, provenance: Provenance) -> anyhow::Result<()> {
    for ext in &study.config.components.external {
        let path = match provenance {
            Provenance::CrossValidated => &ext.cv,
            Provenance::TestPhase => &ext.test,
        };
        set.merge(external_load(path, &ext.id, provenance)?)?;
    }
    Ok(())
}

/// Leave-one-season-out predictions over the training seasons.
pub fn cv_predict(study: &Study) -> anyhow::Result<()> {
    let (data, split) = load_data(study)?;
    let mut set = loso_predictions(
        &study.builtin_components(),
        &data,
        split.training(),
        &study.targets,
        study.seed,
    )?;
    add_external(study, &mut set, Provenance::CrossValidated)?;
    with_manifest(study, |m| write_set(m, &study.out, &set, CV_DENSITIES, CV_REALIZED))
}

fn cv_tables(study: &Study) -> anyhow::Result<Vec<TrainingTable>> {
    let (data, _) = load_data(study)?;
    let set = read_set(study, Provenance::CrossValidated, CV_DENSITIES, CV_REALIZED)?;
    let tables = training_tables(&set, &data, &study.roster(), &study.config.ensemble.uncertainty_components)?;
    if tables.is_empty() {
        return Err(Invalid("cross-validated predictions give no training rows".into()).into());
    }
    Ok(tables)
}

fn write_cv_losses(rows: &[(Scheme, String, String, CvLoss)]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scheme", "region", "target", "iterations", "lambda_leaf", "lambda_value", "loss"])?;
    for (scheme, region, target, cv) in rows {
        w.write_record([
            scheme.to_string(),
            region.clone(),
            target.clone(),
            cv.iterations.to_string(),
            cv.lambda_leaf.to_string(),
            cv.lambda_value.to_string(),
            cv.loss.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// Grid search alone, for inspecting cross-validated losses.
pub fn grid_search(study: &Study) -> anyhow::Result<()> {
    let tables = cv_tables(study)?;
    let options = &study.config.ensemble.train;
    let schemes: Vec<Scheme> = study.config.ensemble.schemes.iter().copied().filter(|s| s.is_searched()).collect();
    if schemes.is_empty() {
        return Err(Invalid("no grid-searched schemes configured".into()).into());
    }
    let jobs: Vec<(Scheme, &TrainingTable)> =
        schemes.iter().flat_map(|s| tables.iter().map(move |t| (*s, t))).collect();
    let results: Vec<Vec<(Scheme, String, String, CvLoss)>> = jobs
        .par_iter()
        .map(|(scheme, table)| {
            let layout = scheme
                .layout(&study.config.ensemble.uncertainty_components)
                .expect("searched schemes have layouts");
            let rows = table.stacking_rows(&layout)?;
            let result = flustack_core::ensemble::grid_search(&rows, &options.base, &options.grid)?;
            Ok(result
                .losses
                .into_iter()
                .map(|cv| (*scheme, table.region.clone(), table.target.to_string(), cv))
                .collect())
        })
        .collect::<flustack_core::Result<_>>()?;
    let rows: Vec<_> = results.into_iter().flatten().collect();
    with_manifest(study, |m| m.write_artifact(&study.out, GRID_LOSSES, &write_cv_losses(&rows)?))
}

/// Trains every configured scheme for every region and target.
pub fn train_ensemble(study: &Study) -> anyhow::Result<()> {
    let tables = cv_tables(study)?;
    let options = &study.config.ensemble.train;
    let unc = &study.config.ensemble.uncertainty_components;
    let schemes = &study.config.ensemble.schemes;
    let jobs: Vec<(Scheme, &TrainingTable)> =
        schemes.iter().flat_map(|s| tables.iter().map(move |t| (*s, t))).collect();
    let trained: Vec<_> = jobs
        .par_iter()
        .map(|(scheme, table)| flustack_core::ensemble::train_model(*scheme, table, unc, options))
        .collect::<flustack_core::Result<_>>()?;
    with_manifest(study, |m| {
        let mut losses = Vec::new();
        for scheme in schemes {
            let models: Vec<&EnsembleModel> =
                trained.iter().map(|t| &t.model).filter(|mo| mo.scheme == *scheme).collect();
            let mut text = serde_json::to_string_pretty(&models)?;
            text.push('\n');
            m.write_artifact(&study.out, &model_file(*scheme), text.as_bytes())?;
        }
        for t in &trained {
            for cv in &t.cv_losses {
                losses.push((t.model.scheme, t.model.region.clone(), t.model.target.to_string(), cv.clone()));
            }
        }
        m.write_artifact(&study.out, CV_LOSSES, &write_cv_losses(&losses)?)
    })
}

pub fn load_models(study: &Study) -> anyhow::Result<Vec<EnsembleModel>> {
    let mut models = Vec::new();
    for scheme in &study.config.ensemble.schemes {
        let path = study.out.join(model_file(*scheme));
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("missing {}; run train-ensemble first", path.display()))?;
        let values: Vec<serde_json::Value> = serde_json::from_str(&text)?;
        for v in values {
            models.push(EnsembleModel::from_json(&v.to_string())?);
        }
    }
    Ok(models)
}

/// Test-phase component predictions and ensemble mixtures, made once.
pub fn predict(study: &Study) -> anyhow::Result<()> {
    let (data, split) = load_data(study)?;
    if split.test().is_empty() {
        return Err(Invalid("split has no test seasons".into()).into());
    }
    let models = load_models(study)?;
    let mut set = test_phase_predictions(&study.builtin_components(), &data, &split, &study.targets, study.seed)?;
    add_external(study, &mut set, Provenance::TestPhase)?;
    let applied = apply_models(&models, &set, &data)?;
    with_manifest(study, |m| {
        write_set(m, &study.out, &set, TEST_DENSITIES, TEST_REALIZED)?;
        write_set(m, &study.out, &applied.predictions, ENSEMBLE_DENSITIES, ENSEMBLE_REALIZED)?;
        m.write_artifact(&study.out, WEIGHTS, &csv_bytes(|b| write_weights(&applied.weights, b))?)
    })
}

/// Scores test-phase predictions of components and ensembles.
pub fn evaluate(study: &Study) -> anyhow::Result<()> {
    let (data, _) = load_data(study)?;
    let mut set = read_set(study, Provenance::TestPhase, TEST_DENSITIES, TEST_REALIZED)?;
    set.merge(read_set(study, Provenance::TestPhase, ENSEMBLE_DENSITIES, ENSEMBLE_REALIZED)?)?;
    let table = score_all(&set, &data)?;
    let ranks = seasonal_rank(&table);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "target", "mean_log_score", "worst_season_mean", "worst_rank"])?;
    for r in consistency_summary(&table) {
        w.write_record([
            r.model,
            r.target.to_string(),
            r.mean_log_score.to_string(),
            r.worst_season_mean.to_string(),
            r.worst_rank.to_string(),
        ])?;
    }
    let consistency = w.into_inner()?;
    with_manifest(study, |m| {
        m.write_artifact(&study.out, SCORES, &csv_bytes(|b| write_scores(&table, b))?)?;
        m.write_artifact(&study.out, RANKINGS, &csv_bytes(|b| write_rankings(&ranks, b))?)?;
        m.write_artifact(&study.out, CONSISTENCY, &consistency)
    })
}

/// Copies the figure inputs into `figures/`, re-validated against their formats.
pub fn export_figures(study: &Study) -> anyhow::Result<()> {
    let read = |rel: &str| {
        let path = study.out.join(rel);
        std::fs::read(&path).with_context(|| format!("missing {}; run evaluate and predict first", path.display()))
    };
    let table = read_scores(read(SCORES)?.as_slice())?;
    let weights = read_weights(read(WEIGHTS)?.as_slice())?;
    with_manifest(study, |m| {
        m.write_artifact(&study.out, "figures/scores.csv", &csv_bytes(|b| write_scores(&table, b))?)?;
        m.write_artifact(
            &study.out,
            "figures/rankings.csv",
            &csv_bytes(|b| write_rankings(&seasonal_rank(&table), b))?,
        )?;
        m.write_artifact(&study.out, "figures/weights.csv", &csv_bytes(|b| write_weights(&weights, b))?)
    })
}

/// Every stage after data preparation, in order.
pub fn run_all(study: &Study) -> anyhow::Result<()> {
    cv_predict(study)?;
    train_ensemble(study)?;
    predict(study)?;
    evaluate(study)?;
    export_figures(study)
}
