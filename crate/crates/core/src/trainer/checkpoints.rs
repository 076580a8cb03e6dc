use serde::{Deserialize, Serialize};

use crate::metrics::MetricsBundle;
use crate::model::{ParamStore, Selection};

/// Validation quantity a checkpoint can be selected on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackedMetric {
    F1,
    Recall,
    PrAuc,
    Mae,
    Mse,
}

impl TrackedMetric {
    pub const ALL: [TrackedMetric; 5] = [
        TrackedMetric::F1,
        TrackedMetric::Recall,
        TrackedMetric::PrAuc,
        TrackedMetric::Mae,
        TrackedMetric::Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrackedMetric::F1 => "f1",
            TrackedMetric::Recall => "recall",
            TrackedMetric::PrAuc => "pr_auc",
            TrackedMetric::Mae => "mae",
            TrackedMetric::Mse => "mse",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, TrackedMetric::Mae | TrackedMetric::Mse)
    }

    pub fn value(self, m: &MetricsBundle) -> Option<f64> {
        match self {
            TrackedMetric::F1 => m.f1,
            TrackedMetric::Recall => m.recall,
            TrackedMetric::PrAuc => m.pr_auc,
            TrackedMetric::Mae => m.mae,
            TrackedMetric::Mse => m.mse,
        }
    }

    /// Strictly better; an undefined candidate never wins.
    pub fn improves(self, candidate: Option<f64>, best: Option<f64>) -> bool {
        match (candidate, best) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(c), Some(b)) => {
                if self.higher_is_better() {
                    c > b
                } else {
                    c < b
                }
            }
        }
    }
}

impl std::str::FromStr for TrackedMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrackedMetric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown checkpoint metric `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct CheckpointEntry<F> {
    pub metric: TrackedMetric,
    pub epoch: usize,
    pub value: f64,
    pub params: ParamStore<F>,
}

impl<F> CheckpointEntry<F> {
    pub fn selection(&self) -> Selection {
        Selection {
            metric: Some(self.metric.name().to_string()),
            value: Some(self.value),
            epoch: Some(self.epoch),
        }
    }
}

/// Best snapshot per tracked metric; ties keep the earliest epoch.
#[derive(Debug, Clone)]
pub struct CheckpointSet<F> {
    metrics: Vec<TrackedMetric>,
    best: Vec<Option<CheckpointEntry<F>>>,
}

impl<F: Clone> CheckpointSet<F> {
    pub fn new(metrics: &[TrackedMetric]) -> Self {
        let mut metrics = metrics.to_vec();
        metrics.sort();
        metrics.dedup();
        let best = metrics.iter().map(|_| None).collect();
        CheckpointSet { metrics, best }
    }

    pub fn observe(&mut self, epoch: usize, m: &MetricsBundle, params: &ParamStore<F>) {
        for (k, &metric) in self.metrics.iter().enumerate() {
            let candidate = metric.value(m);
            let current = self.best[k].as_ref().map(|e| e.value);
            if metric.improves(candidate, current) {
                self.best[k] = Some(CheckpointEntry {
                    metric,
                    epoch,
                    value: candidate.expect("improving value is defined"),
                    params: params.clone(),
                });
            }
        }
    }

    pub fn get(&self, metric: TrackedMetric) -> Option<&CheckpointEntry<F>> {
        let k = self.metrics.iter().position(|&m| m == metric)?;
        self.best[k].as_ref()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CheckpointEntry<F>> {
        self.best.iter().flatten()
    }

    pub fn metrics(&self) -> &[TrackedMetric] {
        &self.metrics
    }
}

/// Stops once the monitored value has gone `patience` epochs without a strict
/// improvement over the best seen.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records one epoch (higher is better) and reports whether to stop.
    pub fn update(&mut self, value: Option<f64>) -> bool {
        if TrackedMetric::F1.improves(value, self.best) {
            self.best = value;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}
