//! End-to-end acceptance checks. Runs as a plain binary so that each
//! criterion prints exactly one PASS/FAIL line; any failure exits non-zero.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wmx_core::attribution::{explain_samples, shapley_exact, shapley_sampled, zoned_aggregate, ShapConfig};
use wmx_core::data::{exclusion_filter, sample_catalog, synth_catalog, synth_generate, Dataset, SamplerConfig, SynthConfig};
use wmx_core::metrics::{pr_auc, roc_auc, stratified_report, write_report_csv, Zone};
use wmx_core::model::{
    BoundParams, ChannelRole, ChannelSchema, DriverSequence, ModelConfig, ParamRegistry, ParamStore, WaveletBlock,
    WaveletMixer,
};
use wmx_core::tensor::gradcheck::{compare, numerical_gradient};
use wmx_core::tensor::{Graph, Tensor};
use wmx_core::trainer::{predict_indices, train, TrackedMetric, TrainConfig, TrainOutcome};
use wmx_core::uncertainty::{
    default_grid, discard_test, ensemble_over, entropy, write_uncertainty_csv, EnsembleDistribution, Measure,
};

/// Seed of the synthetic corpus and of the end-to-end training run.
const GENERATOR_SEED: u64 = 0;
const CPU_BUDGET: Duration = Duration::from_secs(300);

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn small_schema() -> ChannelSchema {
    let names = ["dyn0", "dyn1", "byp0", "landcover", "fire"].map(String::from).to_vec();
    let roles = vec![
        ChannelRole::Dynamic,
        ChannelRole::Dynamic,
        ChannelRole::Bypass,
        ChannelRole::Landcover,
        ChannelRole::Bypass,
    ];
    ChannelSchema::new(names, roles, Some(4)).unwrap()
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig {
        seq_len: 16,
        scales: 2,
        layers: 1,
        hidden: 8,
        patch_len: 4,
        dropout: 0.0,
        landcover_dim: 3,
        ..ModelConfig::default()
    };
    let schema = small_schema();
    let model = WaveletMixer::new(cfg, schema.clone()).unwrap();
    let numel = model.registry.numel();
    let params = model.init_params::<f64>(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let windows: Vec<Vec<f32>> = (0..3)
        .map(|_| {
            let code = rng.random_range(1..18) as f32;
            (0..16 * schema.len())
                .map(|i| if i % schema.len() == 3 { code } else { rng.random_range(-1.0f32..1.0) })
                .collect()
        })
        .collect();
    let date = NaiveDate::from_ymd_opt(2022, 8, 1).unwrap();
    let seqs: Vec<DriverSequence<'_>> = windows
        .iter()
        .map(|w| DriverSequence { window: w, target_date: date })
        .collect();
    let batch = model.batch::<f64>(&seqs).unwrap();
    let labels = [1.0, 0.0, 1.0];
    let loss_of = |g: &mut Graph<f64>, p: &BoundParams| {
        let out = model.forward(g, p, &batch).unwrap();
        g.bce_mean(out.probability, &labels, 1e-7).unwrap()
    };
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let l = loss_of(&mut g, &p);
    let grads = g.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = p.0.iter().map(|&v| grads.wrt(v).into_data()).collect();
    let mut tensors = params.tensors().to_vec();
    let numeric = numerical_gradient(&mut tensors, 1e-5, |ts| {
        let mut g = Graph::new();
        let p = BoundParams(ts.iter().map(|t| g.input(t.clone())).collect());
        let l = loss_of(&mut g, &p);
        g.value(l).item()
    });
    // relative error with a 1e-4 magnitude floor: below it, central
    // differences at h = 1e-5 are dominated by rounding noise
    let report = compare(&analytic, &numeric, 1e-4);
    let secs = start.elapsed().as_secs_f64();
    check(
        numel <= 5000 && report.passes(1e-6) && secs < 60.0,
        format!(
            "{numel} params, {} gradients, max rel err {:.2e}, max abs err {:.2e}, {secs:.1}s",
            report.checked, report.max_rel_error, report.max_abs_error
        ),
    )
}

// ---------------------------------------------------------------- 2

fn haar(x: &[f64]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let v = g.input(Tensor::from_vec(x.to_vec()));
    let y = g.haar_lowpass(v).unwrap();
    g.value(y).data().to_vec()
}

fn wavelet_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    let (mut worst_mean, mut n_even) = (0.0f64, 0);
    for k in 0..1000 {
        let len = rng.random_range(2..200);
        let c: f64 = rng.random_range(-1e3..1e3);
        if haar(&vec![c; len]).iter().any(|&v| v != c) {
            failures.push(format!("constant not preserved (len {len})"));
        }
        // dyadic values make every partial sum exact, so means must match bit for bit
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-4096i64..4096) as f64 / 64.0).collect();
        let y = haar(&x);
        if y.len() != len / 2 {
            failures.push(format!("length {len} -> {}", y.len()));
        }
        if len % 2 == 0 {
            n_even += 1;
            let mx = x.iter().sum::<f64>() / len as f64;
            let my = y.iter().sum::<f64>() / y.len() as f64;
            if mx != my {
                failures.push(format!("mean {mx} -> {my} (case {k})"));
            }
            let z: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = haar(&z);
            let d = (z.iter().sum::<f64>() / len as f64 - w.iter().sum::<f64>() / w.len() as f64).abs();
            worst_mean = worst_mean.max(d);
        }
    }
    if worst_mean > 1e-14 {
        failures.push(format!("general-float mean drift {worst_mean:.1e}"));
    }

    for (t, scales) in [(8, 3), (16, 2), (32, 3), (13, 3)] {
        let mut reg = ParamRegistry::default();
        let mut lens = vec![t];
        for _ in 0..scales {
            lens.push(lens.last().unwrap() / 2);
        }
        let block = WaveletBlock::register(&mut reg, "w", &lens, 6);
        let x: Vec<f64> = (0..2 * t * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Tensor::new(vec![2, t, 3], x).unwrap();
        let mut g = Graph::new();
        let p = reg.zeros::<f64>().bind(&mut g, false);
        let xv = g.input(x.clone());
        let y = block.forward(&mut g, &p, xv, 0.0).unwrap();
        if g.value(y) != &x {
            failures.push(format!("zero-weight block not identity at T={t}, S={scales}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("1000 sequences ({n_even} even), float mean drift {worst_mean:.1e}, 4 zero-weight blocks exact")
        } else {
            failures[..failures.len().min(3)].join("; ")
        },
    )
}

// ---------------------------------------------------------------- 3

fn uncertainty_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_identity, mut worst_oracle, mut min_epi) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut m1_nonzero = 0;
    for _ in 0..100_000 {
        let m = rng.random_range(1..=8);
        let members: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let p: f64 = match rng.random_range(0..4) {
                    0 => rng.random_range(0.0..1e-6),
                    1 => 1.0 - rng.random_range(0.0..1e-6),
                    _ => rng.random(),
                };
                vec![p]
            })
            .collect();
        let d = EnsembleDistribution::from_members(&members).unwrap();
        // independent evaluation: entropy of the mean, mean of entropies
        let h = |p: f64| entropy(&[p, 1.0 - p]).unwrap();
        let mean = members.iter().map(|v| v[0]).sum::<f64>() / m as f64;
        let total = h(mean);
        let aleatoric = members.iter().map(|v| h(v[0])).sum::<f64>() / m as f64;
        worst_identity = worst_identity.max((d.h_pred[0] - (d.h_data[0] + d.mi[0])).abs());
        worst_oracle = worst_oracle
            .max((d.h_pred[0] - total).abs())
            .max((d.h_data[0] - aleatoric).abs());
        min_epi = min_epi.min(d.mi[0]);
        if m == 1 && d.mi[0] != 0.0 {
            m1_nonzero += 1;
        }
    }
    let hand = EnsembleDistribution::from_members(&[vec![0.8], vec![0.6]]).unwrap();
    // H(0.7); mean of H(0.8), H(0.6); difference
    let ln = f64::ln;
    let t = -(0.7 * ln(0.7) + 0.3 * ln(0.3));
    let a = -(0.8 * ln(0.8) + 0.2 * ln(0.2) + 0.6 * ln(0.6) + 0.4 * ln(0.4)) / 2.0;
    let hand_ok = [(hand.h_pred[0], 0.6109, t), (hand.h_data[0], 0.5867, a), (hand.mi[0], 0.0242, t - a)]
        .iter()
        .all(|&(got, quoted, exact)| (got - quoted).abs() <= 5e-4 && (got - exact).abs() <= 1e-12);
    check(
        worst_identity <= 1e-12 && worst_oracle <= 1e-12 && min_epi >= -1e-12 && m1_nonzero == 0 && hand_ok,
        format!(
            "1e5 ensembles: identity gap {worst_identity:.1e}, oracle gap {worst_oracle:.1e}, min epistemic {min_epi:.1e}, M=1 nonzero {m1_nonzero}; hand case ({:.4}, {:.4}, {:.4})",
            hand.h_pred[0], hand.h_data[0], hand.mi[0]
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Small random tanh network on `d` inputs.
struct RandomNet {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    a: Vec<f64>,
}

impl RandomNet {
    fn new(rng: &mut ChaCha8Rng, d: usize) -> Self {
        let h = 6;
        RandomNet {
            w: (0..h).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            b: (0..h).map(|_| rng.random_range(-0.5..0.5)).collect(),
            a: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.w
            .iter()
            .zip(&self.b)
            .zip(&self.a)
            .map(|((w, b), a)| a * (w.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + b).tanh())
            .sum()
    }
}

fn rows_eval(f: impl Fn(&[f64]) -> f64) -> impl FnMut(&[f64], usize) -> wmx_core::Result<Vec<f64>> {
    move |rows: &[f64], n: usize| Ok(rows.chunks_exact(rows.len() / n).map(&f).collect())
}

fn singletons(d: usize) -> Vec<Vec<usize>> {
    (0..d).map(|i| vec![i]).collect()
}

fn shapley_axioms() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_eff = 0.0f64;
    for _ in 0..500 {
        let d = rng.random_range(1..=12);
        let net = RandomNet::new(&mut rng, d);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bg: Vec<Vec<f64>> = (0..rng.random_range(1..5))
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let sv = shapley_exact(&mut rows_eval(|r| net.eval(r)), &x, &bg, &singletons(d)).unwrap();
        let target = net.eval(&x) - bg.iter().map(|b| net.eval(b)).sum::<f64>() / bg.len() as f64;
        worst_eff = worst_eff.max((sv.phi.iter().sum::<f64>() - target).abs());
    }

    // dummy: feature 3 never enters; symmetry: features 0 and 1 enter only through their sum
    let d = 6;
    let f = |r: &[f64]| (r[0] + r[1]).tanh() * r[2] + (r[4] - r[5]).sin() * r[2] + r[4] * r[5];
    let x = [0.7, 0.7, -1.3, 5.0, 0.4, -0.9];
    let bg = vec![vec![0.1, 0.1, 0.5, -3.0, -0.2, 0.3], vec![-0.6, -0.6, 1.1, 2.0, 0.8, 0.0]];
    let sv = shapley_exact(&mut rows_eval(f), &x, &bg, &singletons(d)).unwrap();
    let dummy_ok = sv.phi[3] == 0.0;
    let sym_ok = sv.phi[0] == sv.phi[1];

    let mut worst_rel = 0.0f64;
    for k in 0..5 {
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lin = |r: &[f64]| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3;
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bg: Vec<Vec<f64>> = (0..4).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let exact = shapley_exact(&mut rows_eval(lin), &x, &bg, &singletons(8)).unwrap();
        let sampled = shapley_sampled(&mut rows_eval(lin), &x, &bg, &singletons(8), 10_000, k).unwrap();
        for (s, e) in sampled.phi.iter().zip(&exact.phi) {
            if e.abs() > 1e-9 {
                worst_rel = worst_rel.max((s - e).abs() / e.abs());
            }
        }
    }
    check(
        worst_eff <= 1e-9 && dummy_ok && sym_ok && worst_rel <= 0.05,
        format!(
            "efficiency gap {worst_eff:.1e} over 500 nets; dummy φ={:e}; symmetry {}; sampled-vs-exact rel err {worst_rel:.1e}",
            sv.phi[3],
            if sym_ok { "exact" } else { "broken" }
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Area under the step PR curve from first principles: one operating point per
/// distinct score.
fn ap_oracle(s: &[f64], y: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = y.iter().filter(|&&v| v == 1.0).count() as f64;
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = s.iter().zip(y).filter(|(&a, &b)| a >= t && b == 1.0).count() as f64;
        let k = s.iter().filter(|&&a| a >= t).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / k;
        prev_recall = recall;
    }
    ap
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
fn auc_oracle(s: &[f64], y: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1.0 && y[j] == 0.0 {
                pairs += 1.0;
                wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn metric_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_ap, mut worst_auc) = (0.0f64, 0.0f64);
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.random_range(2..=200);
        let coarse = rng.random_bool(0.5);
        let s: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random();
                if coarse {
                    (v * 20.0).floor() / 20.0
                } else {
                    v
                }
            })
            .collect();
        let rate: f64 = rng.random_range(0.05..0.95);
        let y: Vec<f64> = (0..n).map(|_| rng.random_bool(rate) as u8 as f64).collect();
        let p = y.iter().sum::<f64>();
        if p == 0.0 || p == n as f64 {
            continue;
        }
        worst_ap = worst_ap.max((pr_auc(&s, &y).unwrap() - ap_oracle(&s, &y)).abs());
        worst_auc = worst_auc.max((roc_auc(&s, &y).unwrap() - auc_oracle(&s, &y)).abs());
        cases += 1;
    }
    let fs = [0.9, 0.8, 0.7, 0.6];
    let fy = [1.0, 0.0, 1.0, 0.0];
    let (fap, fauc) = (pr_auc(&fs, &fy).unwrap(), roc_auc(&fs, &fy).unwrap());
    check(
        worst_ap <= 1e-10 && worst_auc <= 1e-10 && (fap - 5.0 / 6.0).abs() <= 1e-12 && (fauc - 0.75).abs() <= 1e-12,
        format!("1000 instances: AP gap {worst_ap:.1e}, AUC gap {worst_auc:.1e}; fixture PR-AUC {fap:.6}, ROC-AUC {fauc:.6}"),
    )
}

// ---------------------------------------------------------------- 6

fn sampler_protocol() -> Verdict {
    let catalog = synth_catalog(10_000, 0.03, 6);
    let cfg = SamplerConfig {
        seed: 6,
        ..SamplerConfig::default()
    };
    let fires: Vec<_> = catalog.iter().filter(|c| c.fire_flag == 1).cloned().collect();
    let negatives: Vec<_> = catalog.iter().filter(|c| c.fire_flag == 0).cloned().collect();
    let admitted = exclusion_filter(&negatives, &fires, &cfg);
    let violates = |c: &wmx_core::data::CatalogEntry| {
        fires.iter().any(|f| {
            let dist = ((c.x_km - f.x_km).powi(2) + (c.y_km - f.y_km).powi(2)).sqrt();
            dist <= 60.0 && (c.date - f.date).num_days().abs() <= 3
        })
    };
    let bad_admitted = admitted.iter().filter(|&&k| violates(&negatives[k])).count();
    let excluded = negatives.len() - admitted.len();
    let wrongly_excluded = (0..negatives.len())
        .filter(|k| !admitted.contains(k))
        .filter(|&k| !violates(&negatives[k]))
        .count();

    let sel = sample_catalog(&catalog, &cfg).unwrap();
    let bad_selected = sel.negatives.iter().filter(|&&i| violates(&catalog[i])).count();
    let mut pos_by: BTreeMap<u8, usize> = BTreeMap::new();
    let mut neg_by: BTreeMap<u8, usize> = BTreeMap::new();
    for &i in &sel.positives {
        *pos_by.entry(catalog[i].zone).or_default() += 1;
    }
    for &i in &sel.negatives {
        *neg_by.entry(catalog[i].zone).or_default() += 1;
    }
    let deficit_zones: Vec<u8> = sel.deficits.iter().map(|d| d.zone).collect();
    let zone_ratio_ok = pos_by
        .iter()
        .filter(|(z, _)| !deficit_zones.contains(z))
        .all(|(z, &p)| neg_by.get(z).copied().unwrap_or(0) == 2 * p);
    let global_ok = !sel.deficits.is_empty() || sel.negatives.len() == 2 * sel.positives.len();
    check(
        bad_admitted == 0 && bad_selected == 0 && wrongly_excluded == 0 && zone_ratio_ok && global_ok,
        format!(
            "{} fires, {excluded} excluded, {bad_admitted} violating admitted, {bad_selected} violating selected; {} neg : {} pos over {} zones, {} deficits",
            fires.len(),
            sel.negatives.len(),
            sel.positives.len(),
            pos_by.len(),
            sel.deficits.len()
        ),
    )
}

// ---------------------------------------------------------------- 7-9

struct Trained {
    raw: Dataset,
    model: WaveletMixer,
    outcome: TrainOutcome<f64>,
    elapsed: Duration,
}

fn desk_model(ds: &Dataset) -> WaveletMixer {
    let cfg = ModelConfig {
        seq_len: ds.manifest.seq_len,
        scales: 3,
        hidden: 256,
        layers: 1,
        patch_len: 8,
        ..ModelConfig::default()
    };
    WaveletMixer::new(cfg, ds.manifest.schema().unwrap()).unwrap()
}

fn train_synthetic() -> Trained {
    let raw = synth_generate(&SynthConfig {
        n_samples: 5000,
        seq_len: 32,
        n_channels: 12,
        seed: GENERATOR_SEED,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = desk_model(&raw);
    let cfg = TrainConfig {
        batch_size: 2,
        ..TrainConfig::default()
    };
    assert_eq!((cfg.learning_rate, cfg.patience, cfg.epochs), (1e-5, 10, 50));
    let start = Instant::now();
    let outcome = train::<f64>(&model, &raw, &cfg, GENERATOR_SEED).unwrap();
    Trained {
        raw,
        model,
        outcome,
        elapsed: start.elapsed(),
    }
}

fn normalized(t: &Trained) -> Dataset {
    let mut ds = t.raw.clone();
    t.outcome.stats.apply(&mut ds);
    ds
}

fn end_to_end(t: &Trained) -> Verdict {
    let best = t.outcome.checkpoints.get(TrackedMetric::F1).unwrap();
    let at_best = &t.outcome.log[best.epoch - 1].metrics;
    let (f1, ap) = (at_best.f1.unwrap_or(0.0), at_best.pr_auc.unwrap_or(0.0));
    let splits = t.raw.splits().unwrap();
    let labels = t.raw.labels(&splits.validation);
    let pos = labels.iter().sum::<f64>();
    let baseline = 2.0 * pos / (pos + labels.len() as f64);
    let secs = t.elapsed.as_secs_f64();
    check(
        f1 >= 0.85 && ap >= 0.90 && f1 > baseline && t.elapsed <= CPU_BUDGET,
        format!(
            "best val F1 {f1:.4} with PR-AUC {ap:.4} at epoch {} of {} run; all-positive F1 {baseline:.4}; training {secs:.0}s",
            best.epoch,
            t.outcome.log.len()
        ),
    )
}

fn discard_monotone(t: &Trained) -> Verdict {
    let ds = normalized(t);
    let test = ds.splits().unwrap().test;
    let snaps: Vec<&ParamStore<f64>> = t.outcome.checkpoints.entries().map(|e| &e.params).collect();
    let dist = ensemble_over(&t.model, &snaps, &ds, &test, 256).unwrap();
    let labels = ds.labels(&test);
    let mut ok = snaps.len() == 5;
    let mut parts = vec![format!("{} members, {} test samples", snaps.len(), test.len())];
    for m in [Measure::Total, Measure::Aleatoric, Measure::Epistemic] {
        let curve = discard_test(&dist, &labels, m, &default_grid(), 0.5).unwrap();
        let at = |c: f64| curve.points.iter().find(|p| (p.coverage - c).abs() < 1e-9).unwrap().risk;
        let (full, half) = (at(1.0), at(0.5));
        if m != Measure::Epistemic {
            ok &= half <= full;
        }
        parts.push(format!("{} risk {full:.4} -> {half:.4}", m.name()));
    }
    check(ok, parts.join("; "))
}

fn attribution_direction(t: &Trained) -> Verdict {
    let ds = normalized(t);
    let splits = ds.splits().unwrap();
    let explain: Vec<usize> = splits
        .validation
        .iter()
        .chain(&splits.test)
        .copied()
        .filter(|&i| ds.sample(i).label == 1)
        .collect();
    let params = &t.outcome.checkpoints.get(TrackedMetric::F1).unwrap().params;
    let cfg = ShapConfig {
        n_permutations: 5,
        background_size: 8,
        ..ShapConfig::default()
    };
    let samples = explain_samples(&t.model, params, &ds, &explain, &splits.train, &cfg, GENERATOR_SEED).unwrap();
    let phi: Vec<Vec<f64>> = samples.iter().map(|s| s.phi.clone()).collect();
    let zones: Vec<u8> = samples.iter().map(|s| s.zone).collect();
    let years: Vec<i32> = samples.iter().map(|s| s.year).collect();
    let agg = zoned_aggregate(&phi, &zones, &years, &ds.manifest.channels).unwrap();
    let trend = ds.manifest.channels.iter().position(|c| c == "t2m").unwrap();
    let (mut ok, mut tested) = (true, 0);
    let mut parts = Vec::new();
    for z in Zone::ALL {
        if let Some(cell) = agg.cell(z, None) {
            let v = cell.channels[trend].signed_mean_shap;
            if cell.n_samples >= 50 {
                tested += 1;
                ok &= v > 0.0;
            }
            parts.push(format!("{z} n={} {v:+.3}", cell.n_samples));
        }
    }
    check(ok && tested > 0, format!("{tested} zones tested; {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 10

fn small_run(dir: &std::path::Path) {
    let raw = synth_generate(&SynthConfig {
        n_samples: 600,
        seq_len: 16,
        seed: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let model = WaveletMixer::new(
        ModelConfig {
            seq_len: 16,
            scales: 2,
            hidden: 16,
            layers: 1,
            patch_len: 4,
            ..ModelConfig::default()
        },
        raw.manifest.schema().unwrap(),
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let out = train::<f64>(&model, &raw, &cfg, 10).unwrap();
    let mut ds = raw.clone();
    out.stats.apply(&mut ds);
    let test = ds.splits().unwrap().test;
    let params = &out.checkpoints.get(TrackedMetric::F1).unwrap().params;
    let probs = predict_indices(&model, params, &ds, &test, 64).unwrap();
    let labels = ds.labels(&test);
    let report = stratified_report(&probs, &labels, &ds.zones(&test), &ds.years(&test), 0.5).unwrap();
    write_report_csv(&dir.join("metrics.csv"), &report, Some(10)).unwrap();
    let snaps: Vec<&ParamStore<f64>> = out.checkpoints.entries().map(|e| &e.params).collect();
    let dist = ensemble_over(&model, &snaps, &ds, &test, 64).unwrap();
    write_uncertainty_csv(&dir.join("uncertainty.csv"), &ds.ids(&test), &dist, &labels, 0.5, Some(10)).unwrap();
}

fn determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_run(a.path());
    small_run(b.path());
    let mut parts = Vec::new();
    let mut ok = true;
    for f in ["metrics.csv", "uncertainty.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        ok &= x == y && !x.is_empty();
        parts.push(format!("{f} {} bytes {}", x.len(), if x == y { "identical" } else { "DIFFER" }));
    }
    check(ok, parts.join(", "))
}

// ----------------------------------------------------------------

fn report(n: usize, name: &str, verdict: Verdict, failed: &mut usize) {
    match verdict {
        Ok(d) => println!("[PASS] {n:>2} {name}: {d}"),
        Err(d) => {
            *failed += 1;
            println!("[FAIL] {n:>2} {name}: {d}");
        }
    }
}

fn main() {
    // `cargo test -- --list` and filtered runs should not trigger the full suite
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }

    let mut failed = 0;
    report(1, "gradient fidelity", gradient_fidelity(), &mut failed);
    report(2, "wavelet invariants", wavelet_invariants(), &mut failed);
    report(3, "uncertainty identities", uncertainty_identities(), &mut failed);
    report(4, "Shapley axioms", shapley_axioms(), &mut failed);
    report(5, "metric oracles", metric_oracles(), &mut failed);
    report(6, "sampler protocol", sampler_protocol(), &mut failed);
    let trained = train_synthetic();
    report(7, "end-to-end synthetic learning", end_to_end(&trained), &mut failed);
    report(8, "discard monotonicity", discard_monotone(&trained), &mut failed);
    report(9, "attribution direction", attribution_direction(&trained), &mut failed);
    report(10, "determinism", determinism(), &mut failed);
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
