//! Shapley attribution of the fire probability to groups of input features.
//!
//! Absent groups take background values; a coalition's value is the model
//! output averaged over the background set.

mod explain;

pub use explain::{explain_samples, Estimator, ShapConfig};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::Zone;
use crate::report::{csv_writer, serialize_opt};

pub const MAX_EXACT_GROUPS: usize = 12;

/// Evaluates the model on `n_rows` row-major inputs packed into one slice.
pub trait ValueFn {
    fn eval(&mut self, rows: &[f64], n_rows: usize) -> Result<Vec<f64>>;
}

impl<T: FnMut(&[f64], usize) -> Result<Vec<f64>>> ValueFn for T {
    fn eval(&mut self, rows: &[f64], n_rows: usize) -> Result<Vec<f64>> {
        self(rows, n_rows)
    }
}

/// Shared validation and coalition evaluation.
struct Game<'a> {
    x: &'a [f64],
    background: &'a [Vec<f64>],
    groups: &'a [Vec<usize>],
}

impl<'a> Game<'a> {
    fn new(x: &'a [f64], background: &'a [Vec<f64>], groups: &'a [Vec<usize>]) -> Result<Self> {
        if background.is_empty() {
            return Err(Error::Config("attribution background set is empty".into()));
        }
        if let Some(b) = background.iter().find(|b| b.len() != x.len()) {
            return Err(Error::LengthMismatch(x.len(), b.len()));
        }
        if let Some(&i) = groups.iter().flatten().find(|&&i| i >= x.len()) {
            return Err(Error::Config(format!("feature index {i} outside input of length {}", x.len())));
        }
        Ok(Game {
            x,
            background,
            groups,
        })
    }

    fn d(&self) -> usize {
        self.groups.len()
    }

    /// Values of several coalitions (bit masks over groups) in one model call.
    fn values(&self, f: &mut impl ValueFn, masks: &[u64]) -> Result<Vec<f64>> {
        let (len, nb) = (self.x.len(), self.background.len());
        let mut rows = Vec::with_capacity(masks.len() * nb * len);
        for &mask in masks {
            for b in self.background {
                let start = rows.len();
                rows.extend_from_slice(b);
                for (g, idx) in self.groups.iter().enumerate() {
                    if mask >> g & 1 == 1 {
                        for &i in idx {
                            rows[start + i] = self.x[i];
                        }
                    }
                }
            }
        }
        let out = f.eval(&rows, masks.len() * nb)?;
        if out.len() != masks.len() * nb {
            return Err(Error::LengthMismatch(masks.len() * nb, out.len()));
        }
        Ok(out.chunks(nb).map(|c| c.iter().sum::<f64>() / nb as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyValues {
    pub phi: Vec<f64>,
    /// Standard error per group; absent for exact values or a single permutation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_err: Option<Vec<f64>>,
    /// f(x) averaged the same way as coalitions (all groups present).
    pub full_value: f64,
    /// Mean model output over the background set.
    pub base_value: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact enumeration over all 2^d coalitions.
pub fn shapley_exact(
    f: &mut impl ValueFn,
    x: &[f64],
    background: &[Vec<f64>],
    groups: &[Vec<usize>],
) -> Result<ShapleyValues> {
    let game = Game::new(x, background, groups)?;
    let d = game.d();
    if d > MAX_EXACT_GROUPS {
        return Err(Error::TooManyGroups {
            got: d,
            max: MAX_EXACT_GROUPS,
        });
    }
    let masks: Vec<u64> = (0..1u64 << d).collect();
    let v = game.values(f, &masks)?;
    // weight(|S|) = |S|! (d - |S| - 1)! / d!
    let weight: Vec<f64> = (0..d).map(|s| 1.0 / (d as f64 * binomial(d - 1, s))).collect();
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for mask in masks.iter().filter(|&&m| m & bit == 0) {
            *p += weight[mask.count_ones() as usize] * (v[(mask | bit) as usize] - v[*mask as usize]);
        }
    }
    Ok(ShapleyValues {
        phi,
        std_err: None,
        full_value: v[(1usize << d) - 1],
        base_value: v[0],
    })
}

/// Permutation sampling: marginal contributions along random group orderings.
pub fn shapley_sampled(
    f: &mut impl ValueFn,
    x: &[f64],
    background: &[Vec<f64>],
    groups: &[Vec<usize>],
    n_permutations: usize,
    seed: u64,
) -> Result<ShapleyValues> {
    let game = Game::new(x, background, groups)?;
    if n_permutations == 0 {
        return Err(Error::Config("n_permutations must be >= 1".into()));
    }
    let d = game.d();
    if d > 64 {
        return Err(Error::TooManyGroups { got: d, max: 64 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..d).collect();
    let (mut sum, mut sum_sq) = (vec![0.0; d], vec![0.0; d]);
    let (mut full, mut base) = (0.0, 0.0);
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        let mut masks = Vec::with_capacity(d + 1);
        let mut mask = 0u64;
        masks.push(mask);
        for &g in &order {
            mask |= 1 << g;
            masks.push(mask);
        }
        let v = game.values(f, &masks)?;
        for (k, &g) in order.iter().enumerate() {
            let delta = v[k + 1] - v[k];
            sum[g] += delta;
            sum_sq[g] += delta * delta;
        }
        base = v[0];
        full = v[d];
    }
    let n = n_permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = (n_permutations > 1).then(|| {
        phi.iter()
            .zip(&sum_sq)
            .map(|(m, sq)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
            .collect()
    });
    Ok(ShapleyValues {
        phi,
        std_err,
        full_value: full,
        base_value: base,
    })
}

/// One group per channel of a row-major `[T, N]` window.
pub fn channel_groups(seq_len: usize, n_channels: usize) -> Vec<Vec<usize>> {
    (0..n_channels)
        .map(|c| (0..seq_len).map(|t| t * n_channels + c).collect())
        .collect()
}

/// Seeded subset of candidate rows, optionally restricted to one zone.
pub fn background_indices(zone_codes: &[u8], zone: Option<Zone>, size: usize, seed: u64) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..zone_codes.len())
        .filter(|&i| zone.map_or(true, |z| Zone::from_code(zone_codes[i]) == z))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(size);
    pool.sort_unstable();
    pool
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelAttribution {
    pub channel: String,
    pub signed_mean_shap: f64,
    pub mean_abs_shap: f64,
    /// 1 = largest mean |φ|.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneCell {
    pub zone: Zone,
    /// `None` aggregates every year.
    #[serde(serialize_with = "serialize_year")]
    pub year: Option<i32>,
    pub n_samples: usize,
    pub channels: Vec<ChannelAttribution>,
}

fn serialize_year<S: serde::Serializer>(y: &Option<i32>, s: S) -> Result<S::Ok, S::Error> {
    match y {
        Some(y) => s.serialize_i32(*y),
        None => s.serialize_str("all"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZonedAttribution {
    pub cells: Vec<ZoneCell>,
    /// Zones without any sample; their cells are absent.
    pub empty_zones: Vec<Zone>,
}

impl ZonedAttribution {
    pub fn cell(&self, zone: Zone, year: Option<i32>) -> Option<&ZoneCell> {
        self.cells.iter().find(|c| c.zone == zone && c.year == year)
    }
}

/// Sums in sorted order so the result does not depend on sample order.
fn order_free_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per (zone, year) and per zone over all years: signed and absolute mean φ
/// for every channel, ranked by magnitude.
pub fn zoned_aggregate(
    phi: &[Vec<f64>],
    zone_codes: &[u8],
    years: &[i32],
    channels: &[String],
) -> Result<ZonedAttribution> {
    let n = phi.len();
    for len in [zone_codes.len(), years.len()] {
        if len != n {
            return Err(Error::LengthMismatch(n, len));
        }
    }
    if let Some(row) = phi.iter().find(|r| r.len() != channels.len()) {
        return Err(Error::LengthMismatch(channels.len(), row.len()));
    }
    let zones: Vec<Zone> = zone_codes.iter().map(|&c| Zone::from_code(c)).collect();
    let mut year_set: Vec<i32> = years.to_vec();
    year_set.sort_unstable();
    year_set.dedup();

    let mut out = ZonedAttribution {
        cells: Vec::new(),
        empty_zones: Vec::new(),
    };
    for zone in Zone::ALL {
        if !zones.contains(&zone) {
            out.empty_zones.push(zone);
            continue;
        }
        for year in year_set.iter().map(|&y| Some(y)).chain([None]) {
            let members: Vec<usize> = (0..n)
                .filter(|&i| zones[i] == zone && year.map_or(true, |y| years[i] == y))
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut stats: Vec<ChannelAttribution> = channels
                .iter()
                .enumerate()
                .map(|(c, name)| ChannelAttribution {
                    channel: name.clone(),
                    signed_mean_shap: order_free_mean(members.iter().map(|&i| phi[i][c]).collect()),
                    mean_abs_shap: order_free_mean(members.iter().map(|&i| phi[i][c].abs()).collect()),
                    rank: 0,
                })
                .collect();
            let mut by_mag: Vec<usize> = (0..stats.len()).collect();
            by_mag.sort_by(|&a, &b| stats[b].mean_abs_shap.total_cmp(&stats[a].mean_abs_shap));
            for (r, &c) in by_mag.iter().enumerate() {
                stats[c].rank = r + 1;
            }
            out.cells.push(ZoneCell {
                zone,
                year,
                n_samples: members.len(),
                channels: stats,
            });
        }
    }
    Ok(out)
}

pub fn write_attribution_csv(path: &Path, agg: &ZonedAttribution, seed: Option<u64>) -> Result<()> {
    let mut w = csv_writer(path, seed)?;
    w.write_record([
        "zone",
        "year",
        "channel",
        "signed_mean_shap",
        "mean_abs_shap",
        "rank",
        "n_samples",
    ])?;
    for cell in &agg.cells {
        for ch in &cell.channels {
            w.write_record([
                cell.zone.name().to_string(),
                cell.year.map_or("all".into(), |y| y.to_string()),
                ch.channel.clone(),
                ch.signed_mean_shap.to_string(),
                ch.mean_abs_shap.to_string(),
                ch.rank.to_string(),
                cell.n_samples.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-sample attribution record for the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleAttribution {
    pub sample_id: String,
    pub zone: u8,
    pub year: i32,
    pub phi: Vec<f64>,
    #[serde(serialize_with = "serialize_opt")]
    pub max_std_err: Option<f64>,
}
