//! Negative sampling over a candidate catalog: a space-time exclusion buffer
//! around fires, then a fixed negative:positive ratio per land-cover zone.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One catalog row: a candidate pixel-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub x_km: f64,
    pub y_km: f64,
    pub date: NaiveDate,
    pub zone: u8,
    pub fire_flag: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub negative_ratio: usize,
    pub exclusion_radius_km: f64,
    pub exclusion_days: i64,
    /// Enforce the ratio inside each zone rather than only globally.
    pub zone_parity: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            negative_ratio: 2,
            exclusion_radius_km: 60.0,
            exclusion_days: 3,
            zone_parity: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negative_ratio < 1 {
            return Err(Error::Config("sampler.negative_ratio must be >= 1".into()));
        }
        if !(self.exclusion_radius_km >= 0.0) {
            return Err(Error::Config("sampler.exclusion_radius_km must be >= 0".into()));
        }
        if self.exclusion_days < 0 {
            return Err(Error::Config("sampler.exclusion_days must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn read_catalog(path: &Path) -> Result<Vec<CatalogEntry>> {
    let mut r = crate::report::csv_reader(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_catalog(path: &Path, entries: &[CatalogEntry], seed: Option<u64>) -> Result<()> {
    let mut w = crate::report::csv_writer(path, seed)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Indices of `candidates` with no fire within the radius (planar km) and the
/// day window. Both bounds are inclusive.
pub fn exclusion_filter(
    candidates: &[CatalogEntry],
    fires: &[CatalogEntry],
    cfg: &SamplerConfig,
) -> Vec<usize> {
    let mut by_day: BTreeMap<NaiveDate, Vec<(f64, f64)>> = BTreeMap::new();
    for f in fires {
        by_day.entry(f.date).or_default().push((f.x_km, f.y_km));
    }
    let r2 = cfg.exclusion_radius_km * cfg.exclusion_radius_km;
    let days = Duration::days(cfg.exclusion_days);
    (0..candidates.len())
        .filter(|&i| {
            let c = &candidates[i];
            let (lo, hi) = (c.date - days, c.date + days);
            !by_day.range(lo..=hi).any(|(_, pts)| {
                pts.iter().any(|&(x, y)| {
                    let (dx, dy) = (c.x_km - x, c.y_km - y);
                    dx * dx + dy * dy <= r2
                })
            })
        })
        .collect()
}

/// A zone that could not supply `required` negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Deficit {
    pub zone: u8,
    pub positives: usize,
    pub required: usize,
    pub available: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SampleSelection {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub deficits: Vec<Deficit>,
}

/// Draws `ratio × |positives|` admitted negatives without replacement, per
/// zone when `zone_parity` is on. Short zones give up everything they have and
/// are reported as deficits.
pub fn stratified_sample(
    catalog: &[CatalogEntry],
    positives: &[usize],
    admitted: &[usize],
    cfg: &SamplerConfig,
) -> Result<SampleSelection> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let key = |i: usize| if cfg.zone_parity { catalog[i].zone } else { 0 };

    let mut pos_by: BTreeMap<u8, usize> = BTreeMap::new();
    for &i in positives {
        *pos_by.entry(key(i)).or_default() += 1;
    }
    let mut neg_by: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for &i in admitted {
        neg_by.entry(key(i)).or_default().push(i);
    }

    let mut out = SampleSelection {
        positives: positives.to_vec(),
        ..Default::default()
    };
    for (&zone, &n_pos) in &pos_by {
        let mut pool = neg_by.remove(&zone).unwrap_or_default();
        let required = cfg.negative_ratio * n_pos;
        pool.shuffle(&mut rng);
        if pool.len() < required {
            out.deficits.push(Deficit {
                zone,
                positives: n_pos,
                required,
                available: pool.len(),
            });
        }
        pool.truncate(required);
        out.negatives.extend(pool);
    }
    out.negatives.sort_unstable();
    Ok(out)
}

/// Exclusion filter followed by stratified sampling over one catalog.
pub fn sample_catalog(catalog: &[CatalogEntry], cfg: &SamplerConfig) -> Result<SampleSelection> {
    let positives: Vec<usize> = (0..catalog.len()).filter(|&i| catalog[i].fire_flag == 1).collect();
    let negatives: Vec<usize> = (0..catalog.len()).filter(|&i| catalog[i].fire_flag == 0).collect();
    let fires: Vec<CatalogEntry> = positives.iter().map(|&i| catalog[i].clone()).collect();
    let cands: Vec<CatalogEntry> = negatives.iter().map(|&i| catalog[i].clone()).collect();
    let admitted: Vec<usize> = exclusion_filter(&cands, &fires, cfg)
        .into_iter()
        .map(|k| negatives[k])
        .collect();
    stratified_sample(catalog, &positives, &admitted, cfg)
}
