//! Channel-level Shapley values for samples of a dataset under a trained model.

use chrono::Datelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{background_indices, channel_groups, shapley_exact, shapley_sampled, SampleAttribution};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{DriverSequence, ParamStore, WaveletMixer};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapConfig {
    pub estimator: Estimator,
    pub n_permutations: usize,
    pub background_size: usize,
    /// Coalition rows per forward pass.
    pub chunk: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            estimator: Estimator::Sampled,
            n_permutations: 10,
            background_size: 8,
            chunk: 512,
        }
    }
}

/// Explains each sample in `explain` against a background drawn from
/// `background_pool`. `ds` must already be normalized.
pub fn explain_samples<F: Scalar>(
    model: &WaveletMixer,
    params: &ParamStore<F>,
    ds: &Dataset,
    explain: &[usize],
    background_pool: &[usize],
    cfg: &ShapConfig,
    seed: u64,
) -> Result<Vec<SampleAttribution>> {
    if cfg.background_size == 0 || cfg.chunk == 0 {
        return Err(Error::Config(
            "attribution.background_size and attribution.chunk must be >= 1".into(),
        ));
    }
    let (t, n) = (ds.manifest.seq_len, ds.manifest.n_channels());
    let groups = channel_groups(t, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool_zones = ds.zones(background_pool);
    let background: Vec<Vec<f64>> = background_indices(&pool_zones, None, cfg.background_size, rng.random())
        .into_iter()
        .map(|k| ds.window(background_pool[k]).iter().map(|&v| v as f64).collect())
        .collect();

    let mut out = Vec::with_capacity(explain.len());
    for &i in explain {
        let meta = ds.sample(i);
        let date = meta.date;
        let x: Vec<f64> = ds.window(i).iter().map(|&v| v as f64).collect();
        let mut value = |rows: &[f64], n_rows: usize| -> Result<Vec<f64>> {
            let stride = t * n;
            let windows: Vec<f32> = rows.iter().map(|&v| v as f32).collect();
            let mut probs = Vec::with_capacity(n_rows);
            for part in windows.chunks(cfg.chunk * stride) {
                let seqs: Vec<DriverSequence<'_>> = part
                    .chunks_exact(stride)
                    .map(|w| DriverSequence {
                        window: w,
                        target_date: date,
                    })
                    .collect();
                let batch = model.batch::<F>(&seqs)?;
                probs.extend(model.predict(params, &batch)?.iter().map(|p| p.to_f64_lossy()));
            }
            Ok(probs)
        };
        let sv = match cfg.estimator {
            Estimator::Exact => shapley_exact(&mut value, &x, &background, &groups)?,
            Estimator::Sampled => {
                shapley_sampled(&mut value, &x, &background, &groups, cfg.n_permutations, rng.random())?
            }
        };
        out.push(SampleAttribution {
            sample_id: meta.id.clone(),
            zone: meta.zone,
            year: date.year(),
            max_std_err: sv
                .std_err
                .as_ref()
                .map(|se| se.iter().copied().fold(0.0, f64::max)),
            phi: sv.phi,
        });
    }
    Ok(out)
}
