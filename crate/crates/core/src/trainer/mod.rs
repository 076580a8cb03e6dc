//! Training loop: min-max normalization, BCE loss, Adam, early stopping on
//! validation F1 and per-metric checkpoint retention.

mod adam;
mod checkpoints;

pub use adam::Adam;
pub use checkpoints::{CheckpointEntry, CheckpointSet, EarlyStopping, TrackedMetric};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::metrics::MetricsBundle;
use crate::model::{ChannelRole, ParamStore, WaveletMixer};
use crate::report::{cell, csv_writer};
use crate::tensor::{Graph, Precision, Scalar};

/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Per-channel min and max over the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Channels left untouched (the categorical land-cover code).
    pub skip: Vec<bool>,
}

impl NormalizationStats {
    pub fn fit(ds: &Dataset, train: &[usize]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let n = ds.manifest.n_channels();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for &i in train {
            for row in ds.window(i).chunks_exact(n) {
                for (c, &v) in row.iter().enumerate() {
                    min[c] = min[c].min(v as f64);
                    max[c] = max[c].max(v as f64);
                }
            }
        }
        let skip = ds.manifest.roles.iter().map(|r| *r == ChannelRole::Landcover).collect();
        Ok(NormalizationStats { min, max, skip })
    }

    /// `(x - min) / (max - min)`; constant channels map to 0; no clipping.
    pub fn scale(&self, c: usize, v: f64) -> f64 {
        if self.skip[c] {
            return v;
        }
        let range = self.max[c] - self.min[c];
        if range > 0.0 {
            (v - self.min[c]) / range
        } else {
            0.0
        }
    }

    pub fn apply_window(&self, w: &mut [f32]) {
        let n = self.min.len();
        for row in w.chunks_exact_mut(n) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.scale(c, *v as f64) as f32;
            }
        }
    }

    pub fn apply(&self, ds: &mut Dataset) {
        self.apply_window(&mut ds.windows);
    }
}

/// Fits statistics on `train` and returns a normalized copy of the whole dataset.
pub fn minmax_fit_apply(ds: &Dataset, train: &[usize]) -> Result<(Dataset, NormalizationStats)> {
    let stats = NormalizationStats::fit(ds, train)?;
    let mut out = ds.clone();
    stats.apply(&mut out);
    Ok((out, stats))
}

/// Mean of `-[y ln p + (1-y) ln(1-p)]` with `p` clamped to `[ε, 1-ε]`.
pub fn binary_cross_entropy(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch(p.len(), y.len()));
    }
    if p.is_empty() {
        return Err(Error::Config("loss over an empty batch".into()));
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub threshold: f64,
    pub precision: Precision,
    pub checkpoint_metrics: Vec<TrackedMetric>,
    /// Samples per forward pass when scoring an evaluation split.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 50,
            patience: 10,
            batch_size: 16,
            threshold: 0.5,
            precision: Precision::F64,
            checkpoint_metrics: TrackedMetric::ALL.to_vec(),
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("train.patience must be >= 1".into()));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.eval_batch_size < 1 {
            return Err(Error::Config(
                "train.epochs, train.batch_size and train.eval_batch_size must be >= 1".into(),
            ));
        }
        if self.checkpoint_metrics.is_empty() {
            return Err(Error::Config("train.checkpoint_metrics must not be empty".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub metrics: MetricsBundle,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub checkpoints: CheckpointSet<F>,
    pub log: Vec<EpochLog>,
    pub stats: NormalizationStats,
    /// Parameters after the last completed epoch.
    pub last: ParamStore<F>,
    pub stopped_early: bool,
}

/// Fire probabilities for `idx`, scored in chunks.
pub fn predict_indices<F: Scalar>(
    model: &WaveletMixer,
    params: &ParamStore<F>,
    ds: &Dataset,
    idx: &[usize],
    chunk: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(idx.len());
    for part in idx.chunks(chunk.max(1)) {
        let seqs: Vec<_> = part.iter().map(|&i| ds.sequence(i)).collect();
        let batch = model.batch::<F>(&seqs)?;
        out.extend(model.predict(params, &batch)?.iter().map(|p| p.to_f64_lossy()));
    }
    Ok(out)
}

/// Trains on the chronological training split of a raw dataset; validation
/// drives early stopping and checkpoint selection. `ds` is normalized inside.
pub fn train<F: Scalar>(
    model: &WaveletMixer,
    ds: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let splits = ds.splits()?;
    train_on_splits(model, ds, &splits, cfg, seed)
}

pub fn train_on_splits<F: Scalar>(
    model: &WaveletMixer,
    raw: &Dataset,
    splits: &Splits,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and validation splits (got {} and {})",
            splits.train.len(),
            splits.validation.len()
        )));
    }
    let (ds, stats) = minmax_fit_apply(raw, &splits.train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: ParamStore<F> = model.init_params(rng.random());
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut checkpoints = CheckpointSet::new(&cfg.checkpoint_metrics);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let val_labels = ds.labels(&splits.validation);
    let eps = F::from_f64_lossy(BCE_EPS);

    let mut order = splits.train.clone();
    let mut log = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for part in order.chunks(cfg.batch_size) {
            let seqs: Vec<_> = part.iter().map(|&i| ds.sequence(i)).collect();
            let batch = model.batch::<F>(&seqs)?;
            let labels: Vec<F> = part
                .iter()
                .map(|&i| F::from_f64_lossy(ds.sample(i).label as f64))
                .collect();
            let mut g = Graph::training(rng);
            let p = params.bind(&mut g, true);
            let out = model.forward(&mut g, &p, &batch)?;
            let loss = g.bce_mean(out.probability, &labels, eps)?;
            loss_sum += g.value(loss).item().to_f64_lossy() * part.len() as f64;
            let mut grads = g.backward(loss)?;
            let grads: Vec<Vec<F>> = p.0.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut params, &grads)?;
            rng = g.into_rng().expect("training graph owns the generator");
        }
        let probs = predict_indices(model, &params, &ds, &splits.validation, cfg.eval_batch_size)?;
        let metrics = MetricsBundle::compute(&probs, &val_labels, cfg.threshold)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss: binary_cross_entropy(&probs, &val_labels)?,
            metrics,
        };
        checkpoints.observe(epoch, &entry.metrics, &params);
        let stop = stopper.update(entry.metrics.f1);
        log.push(entry);
        if stop {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoints,
        log,
        stats,
        last: params,
        stopped_early,
    })
}

pub fn write_training_log(path: &Path, log: &[EpochLog], seed: Option<u64>) -> Result<()> {
    let mut w = csv_writer(path, seed)?;
    w.write_record([
        "epoch",
        "train_loss",
        "val_loss",
        "precision",
        "recall",
        "f1",
        "pr_auc",
        "roc_auc",
        "fpr",
        "mse",
        "mae",
    ])?;
    for e in log {
        let m = &e.metrics;
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.to_string(),
            cell(m.precision),
            cell(m.recall),
            cell(m.f1),
            cell(m.pr_auc),
            cell(m.roc_auc),
            cell(m.fpr),
            cell(m.mse),
            cell(m.mae),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
