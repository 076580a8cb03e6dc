use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Serialize, Serializer};

use super::MetricsBundle;
use crate::error::{Error, Result};
use crate::report::{cell, csv_writer};

/// Land-cover reporting groups: the five dominant IGBP classes and the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Zone {
    EvergreenNeedleleaf,
    MixedForest,
    WoodySavanna,
    Savanna,
    Grassland,
    Others,
}

impl Zone {
    pub const ALL: [Zone; 6] = [
        Zone::EvergreenNeedleleaf,
        Zone::MixedForest,
        Zone::WoodySavanna,
        Zone::Savanna,
        Zone::Grassland,
        Zone::Others,
    ];

    pub fn from_code(code: u8) -> Zone {
        match code {
            1 => Zone::EvergreenNeedleleaf,
            5 => Zone::MixedForest,
            8 => Zone::WoodySavanna,
            9 => Zone::Savanna,
            10 => Zone::Grassland,
            _ => Zone::Others,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::EvergreenNeedleleaf => "evergreen_needleleaf_forest",
            Zone::MixedForest => "mixed_forest",
            Zone::WoodySavanna => "woody_savanna",
            Zone::Savanna => "savanna",
            Zone::Grassland => "grassland",
            Zone::Others => "others",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Zone {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

/// A report cell key. `None` means "all zones" / "all years".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Stratum {
    pub zone: Option<Zone>,
    pub year: Option<i32>,
}

impl Stratum {
    pub const OVERALL: Stratum = Stratum {
        zone: None,
        year: None,
    };

    fn admits(&self, zone: Zone, year: i32) -> bool {
        self.zone.map_or(true, |z| z == zone) && self.year.map_or(true, |y| y == year)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedCell {
    #[serde(flatten)]
    pub stratum: Stratum,
    /// Set when the cell has no samples or a metric could not be computed.
    pub flagged: bool,
    #[serde(flatten)]
    pub metrics: MetricsBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedReport {
    pub threshold: f64,
    pub cells: Vec<StratifiedCell>,
}

impl StratifiedReport {
    pub fn overall(&self) -> &StratifiedCell {
        self.cell(Stratum::OVERALL).expect("overall cell is always present")
    }

    pub fn cell(&self, stratum: Stratum) -> Option<&StratifiedCell> {
        self.cells.iter().find(|c| c.stratum == stratum)
    }
}

/// Metrics for every (zone, year) pair over the years present, each zone over
/// all years, each year over all zones, and overall.
pub fn stratified_report(
    probs: &[f64],
    labels: &[f64],
    zone_codes: &[u8],
    years: &[i32],
    threshold: f64,
) -> Result<StratifiedReport> {
    let n = probs.len();
    for len in [labels.len(), zone_codes.len(), years.len()] {
        if len != n {
            return Err(Error::LengthMismatch(n, len));
        }
    }
    let zones: Vec<Zone> = zone_codes.iter().map(|&c| Zone::from_code(c)).collect();
    let year_set: BTreeSet<i32> = years.iter().copied().collect();

    let mut strata = Vec::new();
    for z in Zone::ALL.iter().map(|&z| Some(z)).chain([None]) {
        for y in year_set.iter().map(|&y| Some(y)).chain([None]) {
            strata.push(Stratum { zone: z, year: y });
        }
    }
    let mut cells = Vec::with_capacity(strata.len());
    for stratum in strata {
        let (mut p, mut l) = (Vec::new(), Vec::new());
        for i in 0..n {
            if stratum.admits(zones[i], years[i]) {
                p.push(probs[i]);
                l.push(labels[i]);
            }
        }
        let metrics = MetricsBundle::compute(&p, &l, threshold)?;
        let flagged = [
            metrics.precision,
            metrics.recall,
            metrics.f1,
            metrics.fpr,
            metrics.pr_auc,
            metrics.roc_auc,
            metrics.mse,
        ]
        .iter()
        .any(Option::is_none);
        cells.push(StratifiedCell {
            stratum,
            flagged,
            metrics,
        });
    }
    Ok(StratifiedReport { threshold, cells })
}

pub fn write_report_csv(path: &Path, report: &StratifiedReport, seed: Option<u64>) -> Result<()> {
    let mut w = csv_writer(path, seed)?;
    w.write_record([
        "zone", "year", "n", "tp", "fp", "tn", "fn", "precision", "recall", "f1", "fpr", "pr_auc",
        "roc_auc", "mse", "mae", "flagged",
    ])?;
    for c in &report.cells {
        let m = &c.metrics;
        w.write_record([
            c.stratum.zone.map_or("all".into(), |z| z.name().to_string()),
            c.stratum.year.map_or("all".into(), |y| y.to_string()),
            m.n.to_string(),
            m.counts.tp.to_string(),
            m.counts.fp.to_string(),
            m.counts.tn.to_string(),
            m.counts.fn_.to_string(),
            cell(m.precision),
            cell(m.recall),
            cell(m.f1),
            cell(m.fpr),
            cell(m.pr_auc),
            cell(m.roc_auc),
            cell(m.mse),
            cell(m.mae),
            c.flagged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
