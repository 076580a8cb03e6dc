//! Entropy decomposition over a checkpoint ensemble and selective-prediction curves.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{BatchInput, ParamStore, WaveletMixer};
use crate::report::{csv_writer, serialize_opt};
use crate::tensor::Scalar;
use crate::trainer::predict_indices;

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Distribution(format!("negative or non-finite entry in {p:?}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Distribution(format!("entries sum to {s}, not 1")));
    }
    Ok(-p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>())
}

/// Entropy of the two-class distribution `[1 - q, q]`.
fn binary_entropy(q: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    -(term(1.0 - q) + term(q))
}

/// Per-sample predictive distribution of an M-member ensemble of binary classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDistribution {
    /// `member_probs[i][m]`: fire probability of member m on sample i.
    pub member_probs: Vec<Vec<f64>>,
    pub p_mean: Vec<f64>,
    pub h_pred: Vec<f64>,
    pub h_data: Vec<f64>,
    pub mi: Vec<f64>,
}

impl EnsembleDistribution {
    /// `members[m][i]` is the fire probability of member m on sample i.
    pub fn from_members(members: &[Vec<f64>]) -> Result<Self> {
        let m = members.len();
        if m == 0 {
            return Err(Error::Config("uncertainty ensemble has no members".into()));
        }
        let n = members[0].len();
        for row in members {
            if row.len() != n {
                return Err(Error::LengthMismatch(n, row.len()));
            }
            if let Some(q) = row.iter().find(|q| !(0.0..=1.0).contains(*q)) {
                return Err(Error::Distribution(format!("member probability {q} outside [0, 1]")));
            }
        }
        let mut dist = EnsembleDistribution {
            member_probs: Vec::with_capacity(n),
            p_mean: Vec::with_capacity(n),
            h_pred: Vec::with_capacity(n),
            h_data: Vec::with_capacity(n),
            mi: Vec::with_capacity(n),
        };
        for i in 0..n {
            let raw: Vec<f64> = members.iter().map(|row| row[i]).collect();
            // Summing in sorted order makes the result independent of member order.
            let mut sorted = raw.clone();
            sorted.sort_by(f64::total_cmp);
            let p_mean = sorted.iter().sum::<f64>() / m as f64;
            let h_pred = binary_entropy(p_mean);
            let h_data = sorted.iter().map(|&q| binary_entropy(q)).sum::<f64>() / m as f64;
            dist.member_probs.push(raw);
            dist.p_mean.push(p_mean);
            dist.h_pred.push(h_pred);
            dist.h_data.push(h_data);
            dist.mi.push(h_pred - h_data);
        }
        Ok(dist)
    }

    pub fn len(&self) -> usize {
        self.p_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_mean.is_empty()
    }

    pub fn members(&self) -> usize {
        self.member_probs.first().map_or(0, Vec::len)
    }

    pub fn measure(&self, m: Measure) -> &[f64] {
        match m {
            Measure::Total => &self.h_pred,
            Measure::Aleatoric => &self.h_data,
            Measure::Epistemic => &self.mi,
        }
    }
}

/// Runs every parameter snapshot on the batch and decomposes the result.
pub fn ensemble_predict<F: Scalar>(
    model: &WaveletMixer,
    snapshots: &[&ParamStore<F>],
    batch: &BatchInput<F>,
) -> Result<EnsembleDistribution> {
    let members = snapshots
        .iter()
        .map(|p| {
            let probs = model.predict(p, batch)?;
            Ok(probs.iter().map(|q| q.to_f64_lossy()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    EnsembleDistribution::from_members(&members)
}

/// Ensemble over dataset samples `idx`, scored in chunks of `chunk`.
pub fn ensemble_over<F: Scalar>(
    model: &WaveletMixer,
    snapshots: &[&ParamStore<F>],
    ds: &Dataset,
    idx: &[usize],
    chunk: usize,
) -> Result<EnsembleDistribution> {
    let members = snapshots
        .iter()
        .map(|p| predict_indices(model, p, ds, idx, chunk))
        .collect::<Result<Vec<_>>>()?;
    EnsembleDistribution::from_members(&members)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// `(total, aleatoric, epistemic)` for sample `i`.
pub fn decompose(dist: &EnsembleDistribution, i: usize) -> Decomposition {
    Decomposition {
        total: dist.h_pred[i],
        aleatoric: dist.h_data[i],
        epistemic: dist.mi[i],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Total,
    Aleatoric,
    Epistemic,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Total, Measure::Aleatoric, Measure::Epistemic];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Total => "total",
            Measure::Aleatoric => "aleatoric",
            Measure::Epistemic => "epistemic",
        }
    }
}

/// Coverage levels 1.0, 0.95, ..., 0.05.
pub fn default_grid() -> Vec<f64> {
    (0..20).map(|k| (20 - k) as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub coverage: f64,
    pub retained: usize,
    pub risk: f64,
    pub mse: f64,
    pub mae: f64,
    pub bce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectiveCurve {
    pub measure: Measure,
    pub points: Vec<CurvePoint>,
    /// Grid levels whose retained set would be empty.
    pub skipped: Vec<f64>,
}

/// Keeps the `coverage` fraction of samples with the lowest uncertainty under
/// `measure` (ties in sample order) and scores the kept predictions.
pub fn discard_test(
    dist: &EnsembleDistribution,
    labels: &[f64],
    measure: Measure,
    grid: &[f64],
    threshold: f64,
) -> Result<SelectiveCurve> {
    let n = dist.len();
    if n == 0 {
        return Err(Error::Config("discard test needs at least one sample".into()));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch(n, labels.len()));
    }
    if let Some(c) = grid.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
        return Err(Error::Config(format!("coverage level {c} outside (0, 1]")));
    }
    let u = dist.measure(measure);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));

    let mut curve = SelectiveCurve {
        measure,
        points: Vec::new(),
        skipped: Vec::new(),
    };
    for &c in grid {
        let k = (c * n as f64 + 1e-9).floor() as usize;
        if k == 0 {
            curve.skipped.push(c);
            continue;
        }
        let (mut wrong, mut se, mut ae, mut bce) = (0usize, 0.0, 0.0, 0.0);
        for &i in &order[..k] {
            let (p, y) = (dist.p_mean[i], labels[i]);
            wrong += ((p >= threshold) != (y >= 0.5)) as usize;
            se += (p - y) * (p - y);
            ae += (p - y).abs();
            let pc = p.clamp(1e-7, 1.0 - 1e-7);
            bce -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        let kf = k as f64;
        curve.points.push(CurvePoint {
            coverage: c,
            retained: k,
            risk: wrong as f64 / kf,
            mse: se / kf,
            mae: ae / kf,
            bce: bce / kf,
        });
    }
    Ok(curve)
}

/// Pearson correlation from centred sums. `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Symmetric 3×3 matrices over (total, aleatoric, epistemic); `None` marks a
/// pair involving a constant component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlations {
    pub pearson: [[Option<f64>; 3]; 3],
    pub spearman: [[Option<f64>; 3]; 3],
}

impl Correlations {
    pub fn undefined_pairs(&self) -> Vec<(Measure, Measure)> {
        let mut out = Vec::new();
        for i in 0..3 {
            for j in i..3 {
                if self.pearson[i][j].is_none() {
                    out.push((Measure::ALL[i], Measure::ALL[j]));
                }
            }
        }
        out
    }
}

pub fn uncertainty_correlations(dist: &EnsembleDistribution) -> Result<Correlations> {
    if dist.len() < 3 {
        return Err(Error::Config(format!(
            "correlations need at least 3 samples, got {}",
            dist.len()
        )));
    }
    let cols = Measure::ALL.map(|m| dist.measure(m));
    let mut out = Correlations {
        pearson: [[None; 3]; 3],
        spearman: [[None; 3]; 3],
    };
    for i in 0..3 {
        for j in i..3 {
            let (p, s) = if i == j {
                let defined = pearson(cols[i], cols[i]).is_some();
                (defined.then_some(1.0), defined.then_some(1.0))
            } else {
                (pearson(cols[i], cols[j]), spearman(cols[i], cols[j]))
            };
            out.pearson[i][j] = p;
            out.pearson[j][i] = p;
            out.spearman[i][j] = s;
            out.spearman[j][i] = s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Outcome {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "TN")]
    TrueNegative,
    #[serde(rename = "FN")]
    FalseNegative,
}

impl Outcome {
    pub fn classify(pred: bool, label: bool) -> Outcome {
        match (pred, label) {
            (true, true) => Outcome::TruePositive,
            (true, false) => Outcome::FalsePositive,
            (false, false) => Outcome::TrueNegative,
            (false, true) => Outcome::FalseNegative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeMeans {
    pub n: usize,
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Mean uncertainty per confusion cell. Cells without samples are absent.
pub fn outcome_stratified_uncertainty(
    dist: &EnsembleDistribution,
    labels: &[f64],
    threshold: f64,
) -> Result<BTreeMap<Outcome, OutcomeMeans>> {
    if labels.len() != dist.len() {
        return Err(Error::LengthMismatch(dist.len(), labels.len()));
    }
    let mut acc: BTreeMap<Outcome, (usize, [f64; 3])> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        let cell = Outcome::classify(dist.p_mean[i] >= threshold, y >= 0.5);
        let e = acc.entry(cell).or_insert((0, [0.0; 3]));
        e.0 += 1;
        e.1[0] += dist.h_pred[i];
        e.1[1] += dist.h_data[i];
        e.1[2] += dist.mi[i];
    }
    Ok(acc
        .into_iter()
        .map(|(k, (n, s))| {
            let nf = n as f64;
            (
                k,
                OutcomeMeans {
                    n,
                    total: s[0] / nf,
                    aleatoric: s[1] / nf,
                    epistemic: s[2] / nf,
                },
            )
        })
        .collect())
}

/// Correlations and outcome means, as written to the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySummary {
    pub members: usize,
    pub samples: usize,
    pub pearson: Vec<Vec<CorrelationCell>>,
    pub spearman: Vec<Vec<CorrelationCell>>,
    pub outcomes: BTreeMap<Outcome, OutcomeMeans>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationCell {
    pub row: Measure,
    pub col: Measure,
    #[serde(serialize_with = "serialize_opt")]
    pub value: Option<f64>,
}

impl UncertaintySummary {
    pub fn new(
        dist: &EnsembleDistribution,
        corr: &Correlations,
        outcomes: BTreeMap<Outcome, OutcomeMeans>,
    ) -> Self {
        let table = |m: &[[Option<f64>; 3]; 3]| {
            (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| CorrelationCell {
                            row: Measure::ALL[i],
                            col: Measure::ALL[j],
                            value: m[i][j],
                        })
                        .collect()
                })
                .collect()
        };
        UncertaintySummary {
            members: dist.members(),
            samples: dist.len(),
            pearson: table(&corr.pearson),
            spearman: table(&corr.spearman),
            outcomes,
        }
    }
}

pub fn write_uncertainty_csv(
    path: &Path,
    ids: &[String],
    dist: &EnsembleDistribution,
    labels: &[f64],
    threshold: f64,
    seed: Option<u64>,
) -> Result<()> {
    if ids.len() != dist.len() || labels.len() != dist.len() {
        return Err(Error::LengthMismatch(dist.len(), ids.len().min(labels.len())));
    }
    let mut w = csv_writer(path, seed)?;
    w.write_record(["sample_id", "p_mean", "h_pred", "h_data", "mi", "label", "pred"])?;
    for i in 0..dist.len() {
        w.write_record([
            ids[i].clone(),
            dist.p_mean[i].to_string(),
            dist.h_pred[i].to_string(),
            dist.h_data[i].to_string(),
            dist.mi[i].to_string(),
            (labels[i] as u8).to_string(),
            ((dist.p_mean[i] >= threshold) as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_discard_csv(path: &Path, curves: &[SelectiveCurve], seed: Option<u64>) -> Result<()> {
    let mut w = csv_writer(path, seed)?;
    w.write_record(["measure", "coverage", "risk", "mse", "mae", "bce"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.measure.name().to_string(),
                p.coverage.to_string(),
                p.risk.to_string(),
                p.mse.to_string(),
                p.mae.to_string(),
                p.bce.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
