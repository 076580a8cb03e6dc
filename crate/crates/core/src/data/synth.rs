//! Synthetic driver sequences with a known fire mechanism.
//!
//! Every channel is a seasonal sinusoid plus AR(1) noise. Three per-sample
//! latents drive the label: a warming trend across the window (t2m), a dryness
//! level (vpd) and the wetness of the final week (precip).

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{igbp_classes, CatalogEntry, Dataset, DatasetManifest, SampleMeta, SplitBoundaries};
use crate::error::{Error, Result};
use crate::model::ChannelRole;

/// The channel whose within-window trend raises fire odds.
pub const TREND_CHANNEL: &str = "t2m";

const BASE_CHANNELS: [(&str, ChannelRole); 12] = [
    ("t2m", ChannelRole::Dynamic),
    ("vpd", ChannelRole::Dynamic),
    ("precip", ChannelRole::Dynamic),
    ("wind", ChannelRole::Dynamic),
    ("humidity", ChannelRole::Dynamic),
    ("soil_moisture", ChannelRole::Dynamic),
    ("ndvi", ChannelRole::Dynamic),
    ("elevation", ChannelRole::Bypass),
    ("slope", ChannelRole::Bypass),
    ("road_distance", ChannelRole::Bypass),
    ("landcover", ChannelRole::Landcover),
    ("active_fire", ChannelRole::Bypass),
];

/// Everything needed to regenerate a synthetic dataset; stored in its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    /// Logit weight on the t2m trend latent (a).
    pub trend_coef: f64,
    /// Logit weight on the vpd dryness latent (b).
    pub dryness_coef: f64,
    /// Logit weight on final-week wetness, entering with a minus sign (c).
    pub precip_coef: f64,
    pub bias: f64,
    /// Logit offset per land-cover code; unlisted codes use `other_zone_offset`.
    pub zone_offsets: BTreeMap<u8, f64>,
    pub other_zone_offset: f64,
    /// Sampling weight per land-cover code.
    pub zone_weights: BTreeMap<u8, f64>,
    /// t2m change across the window per unit of trend latent.
    pub trend_amplitude: f64,
    pub ar_coef: f64,
    /// Stationary standard deviation of the AR(1) noise, relative to each channel's scale.
    pub noise_scale: f64,
    /// Days of the window counted as "recent" for precipitation.
    pub recent_days: usize,
    pub active_fire_rate: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub extent_km: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            trend_coef: 8.0,
            dryness_coef: 8.0,
            precip_coef: 8.0,
            bias: -6.0,
            zone_offsets: [(1, 0.6), (5, -0.6), (8, 1.0), (9, 0.4), (10, 0.0)].into(),
            other_zone_offset: -0.4,
            zone_weights: [
                (1, 0.16),
                (5, 0.16),
                (8, 0.16),
                (9, 0.16),
                (10, 0.16),
                (2, 0.04),
                (4, 0.04),
                (7, 0.04),
                (12, 0.04),
                (16, 0.04),
            ]
            .into(),
            trend_amplitude: 4.0,
            ar_coef: 0.7,
            noise_scale: 0.15,
            recent_days: 7,
            active_fire_rate: 0.03,
            first_year: 2014,
            last_year: 2024,
            extent_km: 1000.0,
        }
    }
}

impl GeneratorParams {
    pub fn zone_offset(&self, zone: u8) -> f64 {
        self.zone_offsets.get(&zone).copied().unwrap_or(self.other_zone_offset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_year > self.last_year {
            return Err(Error::Config("synth.first_year is after synth.last_year".into()));
        }
        if self.zone_weights.is_empty() || self.zone_weights.values().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("synth.zone_weights must be non-empty and non-negative".into()));
        }
        if let Some(z) = self.zone_weights.keys().find(|z| !(1..=17).contains(*z)) {
            return Err(Error::Config(format!("synth.zone_weights has invalid land-cover code {z}")));
        }
        if !(0.0..1.0).contains(&self.ar_coef) {
            return Err(Error::Config("synth.ar_coef must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.active_fire_rate) {
            return Err(Error::Config("synth.active_fire_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seq_len: usize,
    /// At least 12; channels past the base twelve are pure-noise distractors.
    pub n_channels: usize,
    pub seed: u64,
    pub params: GeneratorParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 5000,
            seq_len: 32,
            n_channels: 12,
            seed: 0,
            params: GeneratorParams::default(),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Stationary AR(1) path with the given standard deviation.
fn ar1(rng: &mut ChaCha8Rng, len: usize, phi: f64, sd: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let innov = sd * (1.0 - phi * phi).sqrt();
    let mut e = sd * normal.sample(rng);
    (0..len)
        .map(|_| {
            let out = e;
            e = phi * e + innov * normal.sample(rng);
            out
        })
        .collect()
}

struct Channel {
    mean: f64,
    season: f64,
    scale: f64,
}

fn channel_shape(name: &str) -> Channel {
    let (mean, season, scale) = match name {
        "t2m" => (15.0, 3.0, 1.0),
        "vpd" => (1.5, 0.3, 0.5),
        "precip" => (2.0, 0.5, 1.0),
        "wind" => (3.0, 0.8, 1.0),
        "humidity" => (60.0, -8.0, 5.0),
        "soil_moisture" => (0.3, 0.05, 0.03),
        "ndvi" => (0.5, 0.15, 0.05),
        _ => (0.0, 0.5, 1.0),
    };
    Channel { mean, season, scale }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    let p = &cfg.params;
    p.validate()?;
    if cfg.n_channels < BASE_CHANNELS.len() {
        return Err(Error::Config(format!(
            "synthetic data needs at least {} channels, got {}",
            BASE_CHANNELS.len(),
            cfg.n_channels
        )));
    }
    if cfg.seq_len < p.recent_days.max(2) {
        return Err(Error::Config(format!(
            "synth.seq_len must be at least {}",
            p.recent_days.max(2)
        )));
    }
    let (t_len, n_ch) = (cfg.seq_len, cfg.n_channels);
    let mut names: Vec<String> = BASE_CHANNELS.iter().map(|c| c.0.to_string()).collect();
    let mut roles: Vec<ChannelRole> = BASE_CHANNELS.iter().map(|c| c.1).collect();
    for k in 0..n_ch - BASE_CHANNELS.len() {
        names.push(format!("aux{k}"));
        roles.push(ChannelRole::Dynamic);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let first = NaiveDate::from_ymd_opt(p.first_year, 1, 1).unwrap();
    let last = NaiveDate::from_ymd_opt(p.last_year, 12, 31).unwrap();
    let span = (last - first).num_days();
    let zones: Vec<(u8, f64)> = p.zone_weights.iter().map(|(&z, &w)| (z, w)).collect();
    let total_w: f64 = zones.iter().map(|z| z.1).sum();
    let extent = Uniform::new(0.0, p.extent_km).map_err(|e| Error::Config(e.to_string()))?;
    let road = Exp::new(0.1).unwrap();

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut windows = vec![0f32; cfg.n_samples * t_len * n_ch];
    for i in 0..cfg.n_samples {
        let date = first + Duration::days(rng.random_range(0..=span));
        let mut u = rng.random::<f64>() * total_w;
        let mut zone = zones[zones.len() - 1].0;
        for &(z, w) in &zones {
            if u < w {
                zone = z;
                break;
            }
            u -= w;
        }
        let trend: f64 = normal.sample(&mut rng);
        let dryness: f64 = normal.sample(&mut rng);
        let wet: f64 = normal.sample(&mut rng);
        let logit = p.trend_coef * trend + p.dryness_coef * dryness - p.precip_coef * wet
            + p.zone_offset(zone)
            + p.bias;
        let label = (rng.random::<f64>() < sigmoid(logit)) as u8;

        let phase: Vec<f64> = (0..t_len)
            .map(|t| {
                let d = date - Duration::days((t_len - t) as i64);
                (2.0 * std::f64::consts::PI * d.ordinal0() as f64 / 365.25).sin()
            })
            .collect();
        let w = &mut windows[i * t_len * n_ch..(i + 1) * t_len * n_ch];
        let statics = [
            rng.random_range(0.0..2000.0),
            rng.random_range(0.0..30.0),
            road.sample(&mut rng),
        ];
        for (c, name) in names.iter().enumerate() {
            let series: Vec<f64> = match name.as_str() {
                "elevation" => vec![statics[0]; t_len],
                "slope" => vec![statics[1]; t_len],
                "road_distance" => vec![statics[2]; t_len],
                "landcover" => vec![zone as f64; t_len],
                "active_fire" => (0..t_len)
                    .map(|_| (rng.random::<f64>() < p.active_fire_rate) as u8 as f64)
                    .collect(),
                _ => {
                    let shape = channel_shape(name);
                    let noise = ar1(&mut rng, t_len, p.ar_coef, p.noise_scale * shape.scale);
                    (0..t_len)
                        .map(|t| {
                            let ramp = t as f64 / (t_len - 1) as f64 - 0.5;
                            let signal = match name.as_str() {
                                "t2m" => p.trend_amplitude * trend * ramp,
                                "vpd" => shape.scale * dryness,
                                "precip" if t >= t_len - p.recent_days => shape.scale * wet,
                                _ => 0.0,
                            };
                            shape.mean + shape.season * phase[t] + signal + noise[t]
                        })
                        .collect()
                }
            };
            for (t, v) in series.into_iter().enumerate() {
                w[t * n_ch + c] = v as f32;
            }
        }
        samples.push(SampleMeta {
            id: format!("s{i:06}"),
            x_km: extent.sample(&mut rng),
            y_km: extent.sample(&mut rng),
            date,
            zone,
            label,
        });
    }

    let manifest = DatasetManifest {
        channels: names,
        roles,
        fire_channel: Some("active_fire".into()),
        seq_len: t_len,
        horizon: 1,
        zone_codes: igbp_classes(),
        splits: SplitBoundaries::default(),
        provenance: format!(
            "synthetic: seasonal sinusoid + AR(1) drivers, seed {}; label ~ Bernoulli(sigmoid(a*trend + b*dryness - c*recent_precip + zone_offset + bias))",
            cfg.seed
        ),
        generator: Some(p.clone()),
        samples,
    };
    Dataset::new(manifest, windows)
}

/// Uniform random candidate catalog on a 1000 km square over 2021-2022.
pub fn synth_catalog(n: usize, fire_rate: f64, seed: u64) -> Vec<CatalogEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    let codes = [1u8, 5, 8, 9, 10, 2, 4, 7, 12, 16];
    (0..n)
        .map(|i| CatalogEntry {
            id: format!("c{i:06}"),
            x_km: rng.random_range(0.0..1000.0),
            y_km: rng.random_range(0.0..1000.0),
            date: start + Duration::days(rng.random_range(0..730)),
            zone: codes[rng.random_range(0..codes.len())],
            fire_flag: (rng.random::<f64>() < fire_rate) as u8,
        })
        .collect()
}
