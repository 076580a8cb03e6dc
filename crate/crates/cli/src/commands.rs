use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use wmx_core::attribution::{explain_samples, write_attribution_csv, zoned_aggregate};
use wmx_core::data::{
    read_catalog, read_dataset, sample_catalog, synth_catalog, synth_generate, write_catalog, write_dataset,
    Dataset, Deficit,
};
use wmx_core::metrics::{stratified_report, write_report_csv, MetricsBundle};
use wmx_core::model::{read_checkpoint, write_checkpoint, ParamStore, WaveletMixer};
use wmx_core::report::write_json;
use wmx_core::tensor::{Precision, Scalar};
use wmx_core::trainer::{predict_indices, train, write_training_log, NormalizationStats, TrackedMetric};
use wmx_core::uncertainty::{
    discard_test, ensemble_over, outcome_stratified_uncertainty, uncertainty_correlations, write_discard_csv,
    write_uncertainty_csv, Measure, UncertaintySummary,
};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.wmxd";
pub const CATALOG_FILE: &str = "catalog.csv";
pub const STATS_FILE: &str = "normalization.json";

/// Checkpoint file for one tracked metric inside a train run directory.
pub fn checkpoint_file(dir: &Path, metric: TrackedMetric) -> PathBuf {
    dir.join(format!("checkpoint_{}.wmxc", metric.name()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Sample,
    Train,
    Eval,
    Predict,
    Uq,
    Discard,
    Shap,
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir()?;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    match cfg.train.precision {
        Precision::F64 => dispatch::<f64>(cmd, cfg, out),
        Precision::F32 => dispatch::<f32>(cmd, cfg, out),
    }
}

fn dispatch<F: Scalar>(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    match cmd {
        Command::Synth => synth(cfg, out),
        Command::Sample => sample(cfg, out),
        Command::Train => train_cmd::<F>(cfg, out),
        Command::Eval => eval::<F>(cfg, out),
        Command::Predict => predict::<F>(cfg, out),
        Command::Uq => uq::<F>(cfg, out),
        Command::Discard => discard::<F>(cfg, out),
        Command::Shap => shap::<F>(cfg, out),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| anyhow!("invalid configuration at `{key}`: this command needs it"))?;
    if !p.exists() {
        bail!("input `{key}` not found: {}", p.display());
    }
    Ok(p)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = required(&cfg.data.dataset, "data.dataset")?;
    read_dataset(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = synth_generate(&cfg.data.synth)?;
    write_dataset(&out.join(DATASET_FILE), &ds)?;
    let catalog = synth_catalog(cfg.data.catalog_size, cfg.data.catalog_fire_rate, cfg.seed());
    write_catalog(&out.join(CATALOG_FILE), &catalog, Some(cfg.seed()))?;
    Ok(())
}

#[derive(Serialize)]
struct SamplingSummary {
    candidates: usize,
    positives: usize,
    negatives: usize,
    deficits: Vec<Deficit>,
}

fn sample(cfg: &RunConfig, out: &Path) -> Result<()> {
    let path = required(&cfg.data.catalog, "data.catalog")?;
    let catalog = read_catalog(path).with_context(|| format!("cannot read catalog {}", path.display()))?;
    let sel = sample_catalog(&catalog, &cfg.data.sampler)?;
    let mut chosen: Vec<usize> = sel.positives.iter().chain(&sel.negatives).copied().collect();
    chosen.sort_unstable();
    let rows: Vec<_> = chosen.iter().map(|&i| catalog[i].clone()).collect();
    write_catalog(&out.join("selection.csv"), &rows, Some(cfg.seed()))?;
    write_json(
        &out.join("sampling.json"),
        &SamplingSummary {
            candidates: catalog.len(),
            positives: sel.positives.len(),
            negatives: sel.negatives.len(),
            deficits: sel.deficits,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CheckpointSummary {
    metric: &'static str,
    epoch: usize,
    value: f64,
    file: String,
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: usize,
    stopped_early: bool,
    checkpoints: Vec<CheckpointSummary>,
}

fn train_cmd<F: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    if cfg.model.seq_len != ds.manifest.seq_len {
        bail!(
            "invalid configuration at `model.seq_len`: {} does not match the dataset window length {}",
            cfg.model.seq_len,
            ds.manifest.seq_len
        );
    }
    let model = WaveletMixer::new(cfg.model.clone(), ds.manifest.schema()?)?;
    let result = train::<F>(&model, &ds, &cfg.train, cfg.seed())?;
    write_training_log(&out.join("training_log.csv"), &result.log, Some(cfg.seed()))?;
    write_json(&out.join(STATS_FILE), &result.stats)?;
    let mut summary = TrainSummary {
        epochs_run: result.log.len(),
        stopped_early: result.stopped_early,
        checkpoints: Vec::new(),
    };
    for entry in result.checkpoints.entries() {
        let path = checkpoint_file(out, entry.metric);
        write_checkpoint(&path, &model, &entry.params, entry.selection())?;
        summary.checkpoints.push(CheckpointSummary {
            metric: entry.metric.name(),
            epoch: entry.epoch,
            value: entry.value,
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
        });
    }
    write_json(&out.join("train_summary.json"), &summary)?;
    Ok(())
}

/// Normalized dataset, the evaluated split and its model inputs.
struct EvalContext {
    ds: Dataset,
    idx: Vec<usize>,
    labels: Vec<f64>,
}

fn eval_context(cfg: &RunConfig) -> Result<(EvalContext, PathBuf)> {
    let mut ds = load_dataset(cfg)?;
    let dir = required(&cfg.data.checkpoints, "data.checkpoints")?.to_path_buf();
    let stats_path = dir.join(STATS_FILE);
    let stats: NormalizationStats = serde_json::from_str(
        &std::fs::read_to_string(&stats_path).with_context(|| format!("cannot read {}", stats_path.display()))?,
    )?;
    if stats.min.len() != ds.manifest.n_channels() {
        bail!(
            "normalization statistics cover {} channels, dataset has {}",
            stats.min.len(),
            ds.manifest.n_channels()
        );
    }
    stats.apply(&mut ds);
    let idx = ds.splits()?.get(cfg.data.split).to_vec();
    if idx.is_empty() {
        bail!("invalid configuration at `data.split`: split {:?} holds no samples", cfg.data.split);
    }
    let labels = ds.labels(&idx);
    Ok((EvalContext { ds, idx, labels }, dir))
}

fn load_model<F: Scalar>(dir: &Path, metric: TrackedMetric) -> Result<(WaveletMixer, ParamStore<F>)> {
    let path = checkpoint_file(dir, metric);
    if !path.exists() {
        bail!("checkpoint for `{}` not found: {}", metric.name(), path.display());
    }
    let (model, params, _) = read_checkpoint::<F>(&path)?;
    Ok((model, params))
}

const CHUNK: usize = 256;

fn eval<F: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ctx, dir) = eval_context(cfg)?;
    let (model, params) = load_model::<F>(&dir, cfg.data.checkpoint)?;
    let probs = predict_indices(&model, &params, &ctx.ds, &ctx.idx, CHUNK)?;
    let threshold = cfg.uncertainty.threshold;
    let report = stratified_report(
        &probs,
        &ctx.labels,
        &ctx.ds.zones(&ctx.idx),
        &ctx.ds.years(&ctx.idx),
        threshold,
    )?;
    write_report_csv(&out.join("metrics.csv"), &report, Some(cfg.seed()))?;
    write_json(&out.join("metrics.json"), &MetricsBundle::compute(&probs, &ctx.labels, threshold)?)?;
    Ok(())
}

fn predict<F: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ctx, dir) = eval_context(cfg)?;
    let (model, params) = load_model::<F>(&dir, cfg.data.checkpoint)?;
    let probs = predict_indices(&model, &params, &ctx.ds, &ctx.idx, CHUNK)?;
    let path = out.join("predictions.csv");
    let mut w = wmx_core::report::csv_writer(&path, Some(cfg.seed()))?;
    w.write_record(["sample_id", "date", "zone", "label", "probability"])?;
    for (&i, p) in ctx.idx.iter().zip(&probs) {
        let s = ctx.ds.sample(i);
        w.write_record([
            s.id.clone(),
            s.date.to_string(),
            s.zone.to_string(),
            s.label.to_string(),
            p.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn ensemble<F: Scalar>(cfg: &RunConfig) -> Result<(EvalContext, wmx_core::uncertainty::EnsembleDistribution)> {
    let (ctx, dir) = eval_context(cfg)?;
    let mut model = None;
    let mut snapshots = Vec::new();
    for &m in &cfg.uncertainty.members {
        let (mm, p) = load_model::<F>(&dir, m)?;
        model.get_or_insert(mm);
        snapshots.push(p);
    }
    let model = model.expect("at least one member");
    let refs: Vec<&ParamStore<F>> = snapshots.iter().collect();
    let dist = ensemble_over(&model, &refs, &ctx.ds, &ctx.idx, CHUNK)?;
    Ok((ctx, dist))
}

fn uq<F: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ctx, dist) = ensemble::<F>(cfg)?;
    let threshold = cfg.uncertainty.threshold;
    write_uncertainty_csv(
        &out.join("uncertainty.csv"),
        &ctx.ds.ids(&ctx.idx),
        &dist,
        &ctx.labels,
        threshold,
        Some(cfg.seed()),
    )?;
    let corr = uncertainty_correlations(&dist)?;
    let outcomes = outcome_stratified_uncertainty(&dist, &ctx.labels, threshold)?;
    write_json(
        &out.join("uncertainty_summary.json"),
        &UncertaintySummary::new(&dist, &corr, outcomes),
    )?;
    Ok(())
}

fn discard<F: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ctx, dist) = ensemble::<F>(cfg)?;
    let curves = Measure::ALL
        .into_iter()
        .map(|m| discard_test(&dist, &ctx.labels, m, &cfg.uncertainty.coverage_grid, cfg.uncertainty.threshold))
        .collect::<wmx_core::Result<Vec<_>>>()?;
    write_discard_csv(&out.join("discard.csv"), &curves, Some(cfg.seed()))?;
    Ok(())
}

fn shap<F: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ctx, dir) = eval_context(cfg)?;
    let (model, params) = load_model::<F>(&dir, cfg.data.checkpoint)?;
    let a = &cfg.attribution;
    let mut explain: Vec<usize> = ctx
        .idx
        .iter()
        .copied()
        .filter(|&i| !a.positives_only || ctx.ds.sample(i).label == 1)
        .collect();
    if let Some(max) = a.max_samples {
        explain.truncate(max);
    }
    if explain.is_empty() {
        bail!("no samples to explain in split {:?}", cfg.data.split);
    }
    let pool = ctx.ds.splits()?.get(a.background_split).to_vec();
    if pool.is_empty() {
        bail!("invalid configuration at `attribution.background_split`: split is empty");
    }
    let samples = explain_samples(&model, &params, &ctx.ds, &explain, &pool, &a.shap(), cfg.seed())?;
    let phi: Vec<Vec<f64>> = samples.iter().map(|s| s.phi.clone()).collect();
    let zones: Vec<u8> = samples.iter().map(|s| s.zone).collect();
    let years: Vec<i32> = samples.iter().map(|s| s.year).collect();
    let agg = zoned_aggregate(&phi, &zones, &years, &ctx.ds.manifest.channels)?;
    write_attribution_csv(&out.join("attribution.csv"), &agg, Some(cfg.seed()))?;
    write_json(&out.join("attribution_samples.json"), &samples)?;
    Ok(())
}
