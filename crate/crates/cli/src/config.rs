//! Run configuration: defaults, file merge, dotted overrides and strict parsing.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use wmx_core::attribution::{Estimator, ShapConfig};
use wmx_core::data::{SamplerConfig, SplitName, SynthConfig};
use wmx_core::model::ModelConfig;
use wmx_core::tensor::Precision;
use wmx_core::trainer::{TrackedMetric, TrainConfig};
use wmx_core::uncertainty::default_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required; every random draw in a run derives from it.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub uncertainty: UncertaintyConfig,
    pub attribution: AttributionConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset read by train, eval, predict, uq, discard and shap.
    pub dataset: Option<PathBuf>,
    /// Candidate catalog read by `sample`.
    pub catalog: Option<PathBuf>,
    /// Directory written by an earlier `train` run.
    pub checkpoints: Option<PathBuf>,
    /// Checkpoint used by single-model commands.
    pub checkpoint: TrackedMetric,
    /// Split scored by eval, predict, uq, discard and shap.
    pub split: SplitName,
    pub synth: SynthConfig,
    /// Size of the candidate catalog `synth` writes next to the dataset.
    pub catalog_size: usize,
    pub catalog_fire_rate: f64,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// Checkpoints forming the ensemble.
    pub members: Vec<TrackedMetric>,
    pub threshold: f64,
    pub coverage_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionConfig {
    pub estimator: Estimator,
    pub n_permutations: usize,
    pub background_size: usize,
    pub background_split: SplitName,
    /// Explain only fire-positive samples of the evaluated split.
    pub positives_only: bool,
    pub max_samples: Option<usize>,
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let shap = ShapConfig::default();
        RunConfig {
            seed: None,
            data: DataConfig {
                dataset: None,
                catalog: None,
                checkpoints: None,
                checkpoint: TrackedMetric::F1,
                split: SplitName::Test,
                synth: SynthConfig::default(),
                catalog_size: 10_000,
                catalog_fire_rate: 0.03,
                sampler: SamplerConfig::default(),
            },
            // desk-scale network; the optimizer settings keep their published values
            model: ModelConfig {
                seq_len: 32,
                scales: 3,
                hidden: 256,
                layers: 1,
                patch_len: 8,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                batch_size: 2,
                ..TrainConfig::default()
            },
            uncertainty: UncertaintyConfig {
                members: TrackedMetric::ALL.to_vec(),
                threshold: 0.5,
                coverage_grid: default_grid(),
            },
            attribution: AttributionConfig {
                estimator: shap.estimator,
                n_permutations: shap.n_permutations,
                background_size: shap.background_size,
                background_split: SplitName::Train,
                positives_only: true,
                max_samples: None,
                chunk: shap.chunk,
            },
            output: OutputConfig { dir: None },
        }
    }
}

impl AttributionConfig {
    pub fn shap(&self) -> ShapConfig {
        ShapConfig {
            estimator: self.estimator,
            n_permutations: self.n_permutations,
            background_size: self.background_size,
            chunk: self.chunk,
        }
    }
}

/// Command-line inputs that shape the configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub set: Vec<String>,
    pub precision: Option<Precision>,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is JSON when it parses as JSON, else a string.
fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got `{assignment}`"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for part in key.rsplit('.') {
        if part.is_empty() {
            bail!("--set key `{key}` has an empty path segment");
        }
        let mut m = Map::new();
        m.insert(part.to_string(), patch);
        patch = Value::Object(m);
    }
    merge(root, patch);
    Ok(())
}

fn parse_strict(value: Value) -> Result<RunConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("invalid configuration at `{path}`: {}", e.into_inner())
    })
}

impl RunConfig {
    /// Defaults, then the config file, then `--set`, then the dedicated flags.
    pub fn resolve(ov: &Overrides) -> Result<RunConfig> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = &ov.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            let file: Value = serde_json::from_str(&text)
                .with_context(|| format!("config file {} is not valid JSON", path.display()))?;
            if !file.is_object() {
                bail!("config file {} must hold a JSON object", path.display());
            }
            merge(&mut tree, file);
        }
        for s in &ov.set {
            apply_set(&mut tree, s)?;
        }
        let mut cfg = parse_strict(tree)?;
        if let Some(seed) = ov.seed {
            cfg.seed = Some(seed);
        }
        if let Some(p) = ov.precision {
            cfg.train.precision = p;
        }
        if let Some(out) = &ov.out {
            cfg.output.dir = Some(out.clone());
        }
        let seed = cfg
            .seed
            .ok_or_else(|| anyhow!("invalid configuration at `seed`: a seed is required (config or --seed)"))?;
        cfg.data.synth.seed = seed;
        cfg.data.sampler.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("resolved configs carry a seed")
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.output
            .dir
            .as_deref()
            .ok_or_else(|| anyhow!("invalid configuration at `output.dir`: an output directory is required (config or --out)"))
    }

    fn validate(&self) -> Result<()> {
        let key = |k: &str, e: wmx_core::Error| anyhow!("invalid configuration at `{k}`: {e}");
        self.train.validate().map_err(|e| key("train", e))?;
        self.data.sampler.validate().map_err(|e| key("data.sampler", e))?;
        if !(0.0..=1.0).contains(&self.uncertainty.threshold) {
            bail!("invalid configuration at `uncertainty.threshold`: must lie in [0, 1]");
        }
        if self.uncertainty.members.is_empty() {
            bail!("invalid configuration at `uncertainty.members`: at least one checkpoint is required");
        }
        if let Some(c) = self.uncertainty.coverage_grid.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            bail!("invalid configuration at `uncertainty.coverage_grid`: coverage {c} outside [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.data.catalog_fire_rate) {
            bail!("invalid configuration at `data.catalog_fire_rate`: must lie in [0, 1]");
        }
        if self.attribution.background_size == 0 || self.attribution.n_permutations == 0 {
            bail!("invalid configuration at `attribution`: background_size and n_permutations must be >= 1");
        }
        Ok(())
    }
}
