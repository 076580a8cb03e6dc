//! Dataset container, chronological splits, catalog sampling and synthetic drivers.

mod format;
mod sampler;
mod synth;

pub use format::{manifest_path, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use sampler::{
    exclusion_filter, read_catalog, sample_catalog, stratified_sample, write_catalog, CatalogEntry, Deficit,
    SampleSelection, SamplerConfig,
};
pub use synth::{synth_catalog, synth_generate, GeneratorParams, SynthConfig, TREND_CHANNEL};

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChannelRole, ChannelSchema, DriverSequence};

/// Per-sample metadata stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub id: String,
    pub x_km: f64,
    pub y_km: f64,
    /// Target (forecast) day; the window ends the day before.
    pub date: NaiveDate,
    pub zone: u8,
    pub label: u8,
}

/// Inclusive date range; an open end is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start.map_or(true, |s| d >= s) && self.end.map_or(true, |e| d <= e)
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitBoundaries {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl Default for SplitBoundaries {
    fn default() -> Self {
        SplitBoundaries {
            train: DateRange {
                start: None,
                end: Some(ymd(2020, 12, 31)),
            },
            validation: DateRange {
                start: Some(ymd(2021, 1, 1)),
                end: Some(ymd(2022, 12, 31)),
            },
            test: DateRange {
                start: Some(ymd(2023, 1, 1)),
                end: Some(ymd(2024, 12, 31)),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

/// Sample indices of each split, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

/// Assigns each record to the first split whose range holds its date.
pub fn chronological_split(samples: &[SampleMeta], bounds: &SplitBoundaries) -> Result<Splits> {
    let mut out = Splits::default();
    for (i, s) in samples.iter().enumerate() {
        if bounds.train.contains(s.date) {
            out.train.push(i);
        } else if bounds.validation.contains(s.date) {
            out.validation.push(i);
        } else if bounds.test.contains(s.date) {
            out.test.push(i);
        } else {
            return Err(Error::UnassignedRecord {
                id: s.id.clone(),
                date: s.date,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub channels: Vec<String>,
    pub roles: Vec<ChannelRole>,
    /// Name of the channel holding fire detections, if any.
    pub fire_channel: Option<String>,
    pub seq_len: usize,
    pub horizon: usize,
    /// Land-cover code → class name.
    pub zone_codes: BTreeMap<u8, String>,
    pub splits: SplitBoundaries,
    pub provenance: String,
    /// Synthetic generator settings, when the data are synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorParams>,
    pub samples: Vec<SampleMeta>,
}

impl DatasetManifest {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn schema(&self) -> Result<ChannelSchema> {
        let fire = match &self.fire_channel {
            Some(name) => Some(self.channels.iter().position(|c| c == name).ok_or_else(|| {
                Error::Config(format!("fire channel {name:?} is not a dataset channel"))
            })?),
            None => None,
        };
        ChannelSchema::new(self.channels.clone(), self.roles.clone(), fire)
    }
}

/// IGBP land-cover class names by code.
pub fn igbp_classes() -> BTreeMap<u8, String> {
    [
        (1, "Evergreen Needleleaf Forests"),
        (2, "Evergreen Broadleaf Forests"),
        (3, "Deciduous Needleleaf Forests"),
        (4, "Deciduous Broadleaf Forests"),
        (5, "Mixed Forests"),
        (6, "Closed Shrublands"),
        (7, "Open Shrublands"),
        (8, "Woody Savannas"),
        (9, "Savannas"),
        (10, "Grasslands"),
        (11, "Permanent Wetlands"),
        (12, "Croplands"),
        (13, "Urban and Built-up Lands"),
        (14, "Cropland/Natural Vegetation Mosaics"),
        (15, "Permanent Snow and Ice"),
        (16, "Barren"),
        (17, "Water Bodies"),
    ]
    .into_iter()
    .map(|(c, n)| (c, n.to_string()))
    .collect()
}

/// Windows `[n, T, N]` in row-major order plus their manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub windows: Vec<f32>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, windows: Vec<f32>) -> Result<Self> {
        let d = Dataset { manifest, windows };
        d.check()?;
        Ok(d)
    }

    pub(crate) fn check(&self) -> Result<()> {
        let m = &self.manifest;
        if m.roles.len() != m.channels.len() {
            return Err(Error::ShapeDisagreement(format!(
                "{} channels but {} roles",
                m.channels.len(),
                m.roles.len()
            )));
        }
        let expected = m.samples.len() * m.seq_len * m.channels.len();
        if self.windows.len() != expected {
            return Err(Error::ShapeDisagreement(format!(
                "manifest implies {} values ({} samples × T {} × N {}), payload holds {}",
                expected,
                m.samples.len(),
                m.seq_len,
                m.channels.len(),
                self.windows.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    fn stride(&self) -> usize {
        self.manifest.seq_len * self.manifest.channels.len()
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let s = self.stride();
        &self.windows[i * s..(i + 1) * s]
    }

    pub fn window_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.stride();
        &mut self.windows[i * s..(i + 1) * s]
    }

    pub fn sample(&self, i: usize) -> &SampleMeta {
        &self.manifest.samples[i]
    }

    pub fn sequence(&self, i: usize) -> DriverSequence<'_> {
        DriverSequence {
            window: self.window(i),
            target_date: self.manifest.samples[i].date,
        }
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.manifest.samples[i].label as f64).collect()
    }

    pub fn zones(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.manifest.samples[i].zone).collect()
    }

    pub fn years(&self, idx: &[usize]) -> Vec<i32> {
        idx.iter().map(|&i| self.manifest.samples[i].date.year()).collect()
    }

    pub fn ids(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.manifest.samples[i].id.clone()).collect()
    }

    pub fn splits(&self) -> Result<Splits> {
        chronological_split(&self.manifest.samples, &self.manifest.splits)
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut manifest = self.manifest.clone();
        manifest.samples = idx.iter().map(|&i| self.manifest.samples[i].clone()).collect();
        let mut windows = Vec::with_capacity(idx.len() * self.stride());
        for &i in idx {
            windows.extend_from_slice(self.window(i));
        }
        Dataset { manifest, windows }
    }
}

#[cfg(test)]
mod tests;
