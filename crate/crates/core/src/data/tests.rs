use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn small_synth(n: usize, seed: u64) -> Dataset {
    synth_generate(&SynthConfig {
        n_samples: n,
        seq_len: 16,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.wmxd");
    let mut ds = small_synth(20, 1);
    ds.windows[3] = f32::MIN_POSITIVE / 4.0;
    ds.windows[4] = -0.0;
    write_dataset(&path, &ds).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.windows), bits(&ds.windows));
    write_dataset(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert!(manifest_path(&path).ends_with("d.manifest.json"));
}

#[test]
fn format_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.wmxd");
    let ds = small_synth(4, 2);
    write_dataset(&path, &ds).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[1] = b'Z';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::BadMagic { .. })));

    let mut bad = good.clone();
    bad[4] = 9;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(
        read_dataset(&path),
        Err(Error::UnsupportedVersion { found: 9, .. })
    ));

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Truncated { .. })));

    // Manifest says N = 12 but the payload was written with stride 11.
    let mut bad = good[..32].to_vec();
    bad[24..32].copy_from_slice(&11u64.to_le_bytes());
    bad.extend(std::iter::repeat(0u8).take(4 * 4 * 16 * 11));
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::ShapeDisagreement(_))));
}

#[test]
fn manifest_with_wrong_channel_count_is_rejected() {
    let mut ds = small_synth(2, 3);
    ds.manifest.channels.pop();
    ds.manifest.roles.pop();
    let err = Dataset::new(ds.manifest.clone(), ds.windows.clone()).unwrap_err();
    assert!(matches!(err, Error::ShapeDisagreement(_)));
}

fn entry(id: &str, x: f64, y: f64, d: NaiveDate, zone: u8, fire: u8) -> CatalogEntry {
    CatalogEntry {
        id: id.into(),
        x_km: x,
        y_km: y,
        date: d,
        zone,
        fire_flag: fire,
    }
}

#[test]
fn exclusion_examples() {
    let day = date(2022, 7, 1);
    let fires = [entry("f", 0.0, 0.0, day, 8, 1)];
    let cands = [
        entry("a", 50.0, 0.0, day + Duration::days(1), 8, 0),
        entry("b", 61.0, 0.0, day, 8, 0),
        entry("c", 10.0, 0.0, day + Duration::days(4), 8, 0),
        entry("d", 36.0, 48.0, day - Duration::days(3), 8, 0),
    ];
    let admitted = exclusion_filter(&cands, &fires, &SamplerConfig::default());
    // "d" sits exactly 60 km away and 3 days before: both bounds inclusive.
    assert_eq!(admitted, vec![1, 2]);
}

fn violates(c: &CatalogEntry, fires: &[CatalogEntry], cfg: &SamplerConfig) -> bool {
    fires.iter().any(|f| {
        let dist = ((c.x_km - f.x_km).powi(2) + (c.y_km - f.y_km).powi(2)).sqrt();
        dist <= cfg.exclusion_radius_km && (c.date - f.date).num_days().abs() <= cfg.exclusion_days
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn exclusion_matches_all_pairs_scan(seed in any::<u64>(), days in 0i64..5, radius in 0.0f64..150.0) {
        let cat = synth_catalog(600, 0.1, seed);
        let cfg = SamplerConfig { exclusion_days: days, exclusion_radius_km: radius, ..Default::default() };
        let fires: Vec<CatalogEntry> = cat.iter().filter(|c| c.fire_flag == 1).cloned().collect();
        let admitted = exclusion_filter(&cat, &fires, &cfg);
        let brute: Vec<usize> = (0..cat.len()).filter(|&i| !violates(&cat[i], &fires, &cfg)).collect();
        prop_assert_eq!(admitted, brute);
    }
}

#[test]
fn stratified_examples() {
    let day = date(2022, 1, 1);
    let mut cat = Vec::new();
    for i in 0..10 {
        cat.push(entry(&format!("p{i}"), 0.0, 0.0, day, 8, 1));
    }
    for i in 0..30 {
        cat.push(entry(&format!("n{i}"), 0.0, 0.0, day, 8, 0));
    }
    for i in 0..5 {
        cat.push(entry(&format!("q{i}"), 0.0, 0.0, day, 9, 1));
    }
    for i in 0..7 {
        cat.push(entry(&format!("m{i}"), 0.0, 0.0, day, 9, 0));
    }
    for i in 0..4 {
        cat.push(entry(&format!("z{i}"), 0.0, 0.0, day, 10, 0));
    }
    let pos: Vec<usize> = (0..cat.len()).filter(|&i| cat[i].fire_flag == 1).collect();
    let neg: Vec<usize> = (0..cat.len()).filter(|&i| cat[i].fire_flag == 0).collect();
    let cfg = SamplerConfig::default();
    let sel = stratified_sample(&cat, &pos, &neg, &cfg).unwrap();
    let count = |zone| sel.negatives.iter().filter(|&&i| cat[i].zone == zone).count();
    assert_eq!(count(8), 20);
    assert_eq!(count(9), 7);
    assert_eq!(count(10), 0);
    assert_eq!(
        sel.deficits,
        vec![Deficit {
            zone: 9,
            positives: 5,
            required: 10,
            available: 7
        }]
    );
    assert_eq!(sel, stratified_sample(&cat, &pos, &neg, &cfg).unwrap());
    let mut uniq = sel.negatives.clone();
    uniq.dedup();
    assert_eq!(uniq.len(), sel.negatives.len());
}

#[test]
fn sampler_protocol_on_synthetic_catalog() {
    let cat = synth_catalog(4000, 0.05, 9);
    let cfg = SamplerConfig::default();
    let sel = sample_catalog(&cat, &cfg).unwrap();
    assert!(sel.deficits.is_empty());
    let fires: Vec<CatalogEntry> = sel.positives.iter().map(|&i| cat[i].clone()).collect();
    assert!(sel.negatives.iter().all(|&i| !violates(&cat[i], &fires, &cfg)));
    assert_eq!(sel.negatives.len(), 2 * sel.positives.len());
    let mut by_zone: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for &i in &sel.positives {
        by_zone.entry(cat[i].zone).or_default().0 += 1;
    }
    for &i in &sel.negatives {
        by_zone.entry(cat[i].zone).or_default().1 += 1;
    }
    assert!(by_zone.values().all(|&(p, n)| n == 2 * p));
}

#[test]
fn catalog_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cat.csv");
    let cat = synth_catalog(50, 0.2, 4);
    write_catalog(&path, &cat, Some(4)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().nth(1).unwrap() == "id,x_km,y_km,date,zone,fire_flag");
    assert_eq!(read_catalog(&path).unwrap(), cat);
}

fn meta(id: &str, d: NaiveDate) -> SampleMeta {
    SampleMeta {
        id: id.into(),
        x_km: 0.0,
        y_km: 0.0,
        date: d,
        zone: 1,
        label: 0,
    }
}

#[test]
fn split_boundaries() {
    let b = SplitBoundaries::default();
    let recs = vec![
        meta("a", date(2020, 12, 31)),
        meta("b", date(2021, 1, 1)),
        meta("c", date(2024, 12, 31)),
        meta("d", date(2001, 5, 5)),
        meta("e", date(2022, 12, 31)),
    ];
    let s = chronological_split(&recs, &b).unwrap();
    assert_eq!(s.train, vec![0, 3]);
    assert_eq!(s.validation, vec![1, 4]);
    assert_eq!(s.test, vec![2]);

    let late = vec![meta("z", date(2025, 1, 1))];
    let err = chronological_split(&late, &b).unwrap_err();
    assert!(matches!(err, Error::UnassignedRecord { ref id, .. } if id == "z"));
}

#[test]
fn split_assignment_ignores_input_order() {
    let ds = small_synth(200, 5);
    let recs = &ds.manifest.samples;
    let s = chronological_split(recs, &ds.manifest.splits).unwrap();
    let mut shuffled = recs.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let t = chronological_split(&shuffled, &ds.manifest.splits).unwrap();
    let ids = |recs: &[SampleMeta], idx: &[usize]| {
        let mut v: Vec<String> = idx.iter().map(|&i| recs[i].id.clone()).collect();
        v.sort();
        v
    };
    assert_eq!(ids(recs, &s.train), ids(&shuffled, &t.train));
    assert_eq!(ids(recs, &s.validation), ids(&shuffled, &t.validation));
    assert_eq!(ids(recs, &s.test), ids(&shuffled, &t.test));
    assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 200);
}

#[test]
fn synth_basics() {
    let empty = small_synth(0, 1);
    assert!(empty.is_empty());
    assert!(empty.manifest.schema().is_ok());
    assert_eq!(small_synth(30, 7), small_synth(30, 7));
    assert_ne!(small_synth(30, 7).windows, small_synth(30, 8).windows);

    let wide = synth_generate(&SynthConfig {
        n_samples: 3,
        n_channels: 14,
        ..SynthConfig::default()
    })
    .unwrap();
    assert_eq!(wide.manifest.channels[13], "aux1");
    assert!(synth_generate(&SynthConfig {
        n_channels: 11,
        ..SynthConfig::default()
    })
    .is_err());

    let ds = small_synth(50, 3);
    let schema = ds.manifest.schema().unwrap();
    let lc = schema.landcover_channel();
    for i in 0..ds.len() {
        let w = ds.window(i);
        assert!(w.chunks(12).all(|row| row[lc] == ds.sample(i).zone as f32));
    }
    assert_eq!(ds.manifest.generator, Some(GeneratorParams::default()));
}

#[test]
fn label_rate_rises_with_temperature_trend_deciles() {
    let ds = synth_generate(&SynthConfig {
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    let t = ds.manifest.seq_len;
    let n_ch = ds.manifest.n_channels();
    let ch = ds.manifest.channels.iter().position(|c| c == TREND_CHANNEL).unwrap();
    // Least-squares slope of t2m over the window.
    let tm = (t - 1) as f64 / 2.0;
    let slopes: Vec<f64> = (0..ds.len())
        .map(|i| {
            let w = ds.window(i);
            let ys: Vec<f64> = (0..t).map(|k| w[k * n_ch + ch] as f64).collect();
            let ym = ys.iter().sum::<f64>() / t as f64;
            let num: f64 = (0..t).map(|k| (k as f64 - tm) * (ys[k] - ym)).sum();
            let den: f64 = (0..t).map(|k| (k as f64 - tm).powi(2)).sum();
            num / den
        })
        .collect();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| slopes[a].total_cmp(&slopes[b]));
    let rates: Vec<f64> = order
        .chunks(ds.len() / 10)
        .take(10)
        .map(|c| c.iter().map(|&i| ds.sample(i).label as f64).sum::<f64>() / c.len() as f64)
        .collect();
    assert!(rates.windows(2).all(|w| w[0] < w[1]), "{rates:?}");
    let rate = ds.labels(&order).iter().sum::<f64>() / ds.len() as f64;
    assert!((0.25..0.45).contains(&rate), "{rate}");
}

#[test]
fn subset_keeps_rows_aligned() {
    let ds = small_synth(10, 4);
    let sub = ds.subset(&[7, 2]);
    assert_eq!(sub.len(), 2);
    assert_eq!(sub.window(0), ds.window(7));
    assert_eq!(sub.sample(1), ds.sample(2));
}
