//! Shared fixtures for the benchmarks.

use wmx_core::data::{synth_generate, Dataset, SynthConfig};
use wmx_core::model::{ModelConfig, WaveletMixer};

/// Synthetic dataset with `n` windows of length 32.
pub fn dataset(n: usize) -> Dataset {
    synth_generate(&SynthConfig {
        n_samples: n,
        ..Default::default()
    })
    .expect("synthetic dataset")
}

/// The desk-scale network used by the command-line defaults.
pub fn model(ds: &Dataset, hidden: usize) -> WaveletMixer {
    let cfg = ModelConfig {
        seq_len: ds.manifest.seq_len,
        scales: 3,
        hidden,
        layers: 1,
        patch_len: 8,
        ..Default::default()
    };
    WaveletMixer::new(cfg, ds.manifest.schema().expect("schema")).expect("model")
}
