use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Submodules that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Replace the land-cover embedding by the raw code as one continuous token.
    LulcEmbedding,
    /// Skip the wavelet block applied to the raw dynamic drivers.
    InputMsw,
    /// Skip the per-layer wavelet branch of the fusion layers.
    DynamicMsw,
    /// Skip the exponential end-of-window weighting.
    TransientHead,
    /// Skip the patch time/channel mixer branch.
    Tcmixer,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::LulcEmbedding,
        Component::InputMsw,
        Component::DynamicMsw,
        Component::TransientHead,
        Component::Tcmixer,
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ablations(pub BTreeSet<Component>);

impl Ablations {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn disabling(components: &[Component]) -> Self {
        Self(components.iter().copied().collect())
    }

    pub fn disabled(&self, c: Component) -> bool {
        self.0.contains(&c)
    }
}

/// WaveletMixer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input window length `T`.
    pub seq_len: usize,
    /// Forecast horizon `T_pred`.
    pub horizon: usize,
    /// Wavelet decomposition depth `S`.
    pub scales: usize,
    /// Hidden width of every two-layer MLP.
    pub hidden: usize,
    /// Number of stacked fusion layers `L`.
    pub layers: usize,
    pub patch_len: usize,
    pub dropout: f64,
    pub landcover_dim: usize,
    /// Embedding rows; row 0 is reserved for unknown codes.
    pub landcover_classes: usize,
    pub ln_eps: f64,
    pub disable: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 64,
            horizon: 1,
            scales: 3,
            hidden: 1024,
            layers: 2,
            patch_len: 16,
            dropout: 0.1,
            landcover_dim: 8,
            landcover_classes: 18,
            ln_eps: 1e-5,
            disable: Ablations::none(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.scales < 1 {
            return fail("model.scales must be >= 1");
        }
        if self.seq_len < (1 << self.scales) {
            return Err(Error::ScaleLength {
                scales: self.scales,
                len: self.seq_len,
            });
        }
        if self.layers < 1 {
            return fail("model.layers must be >= 1");
        }
        if self.patch_len < 1 {
            return fail("model.patch_len must be >= 1");
        }
        if self.hidden < 1 || self.horizon < 1 || self.landcover_dim < 1 {
            return fail("model.hidden, model.horizon and model.landcover_dim must be >= 1");
        }
        if self.landcover_classes < 18 {
            return fail("model.landcover_classes must cover codes 0..=17");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("model.dropout must lie in [0, 1)");
        }
        if self.ln_eps <= 0.0 {
            return fail("model.ln_eps must be positive");
        }
        Ok(())
    }

    /// Time lengths `L_0..=L_S` of the wavelet pyramid.
    pub fn scale_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.seq_len];
        for _ in 0..self.scales {
            lens.push(lens.last().unwrap() / 2);
        }
        lens
    }

    pub fn landcover_width(&self) -> usize {
        if self.disable.disabled(Component::LulcEmbedding) {
            1
        } else {
            self.landcover_dim
        }
    }
}
