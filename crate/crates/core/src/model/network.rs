//! The WaveletMixer forward pass.

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::calendar::{encode_calendar, MARK_WIDTH};
use crate::model::config::{Component, ModelConfig};
use crate::model::params::{normal, uniform, BoundParams, ParamId, ParamStore};
use crate::model::schema::{ChannelSchema, TokenLayout};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Highest valid land-cover code; anything outside `1..=17` maps to row 0.
pub const MAX_LANDCOVER_CODE: usize = 17;

/// Sanitized embedding row for a raw land-cover value.
pub fn landcover_row(raw: f64) -> usize {
    let r = raw.round();
    if raw.is_finite() && (1.0..=MAX_LANDCOVER_CODE as f64).contains(&r) {
        r as usize
    } else {
        0
    }
}

/// One sample as seen by the model: a `T×N` row-major driver window ending the
/// day before `target_date`.
#[derive(Debug, Clone, Copy)]
pub struct DriverSequence<'a> {
    pub window: &'a [f32],
    pub target_date: NaiveDate,
}

impl DriverSequence<'_> {
    /// Calendar day of window step `t` (the last step is the day before the target).
    pub fn step_date(&self, t: usize, seq_len: usize) -> NaiveDate {
        self.target_date - Duration::days((seq_len - t) as i64)
    }
}

/// Model-ready batch: continuous drivers, land-cover rows and calendar marks.
#[derive(Debug, Clone)]
pub struct BatchInput<F> {
    pub batch: usize,
    pub seq_len: usize,
    /// `[B, T, N_cont]`.
    pub continuous: Vec<F>,
    /// Sanitized embedding rows, `[B·T]`.
    pub landcover_rows: Vec<usize>,
    /// Raw land-cover values, `[B, T, 1]`.
    pub landcover_raw: Vec<F>,
    /// `[B, T, 7]`.
    pub marks: Vec<F>,
}

impl<F: Scalar> BatchInput<F> {
    pub fn new(schema: &ChannelSchema, seq_len: usize, samples: &[DriverSequence<'_>]) -> Result<Self> {
        let n = schema.len();
        let cont = schema.continuous();
        let lc = schema.landcover_channel();
        let b = samples.len();
        let mut out = Self {
            batch: b,
            seq_len,
            continuous: Vec::with_capacity(b * seq_len * cont.len()),
            landcover_rows: Vec::with_capacity(b * seq_len),
            landcover_raw: Vec::with_capacity(b * seq_len),
            marks: Vec::with_capacity(b * seq_len * MARK_WIDTH),
        };
        for s in samples {
            if s.window.len() != seq_len * n {
                return Err(Error::ChannelCount {
                    expected: n,
                    got: s.window.len() / seq_len.max(1),
                });
            }
            for (t, row) in s.window.chunks_exact(n).enumerate() {
                out.continuous
                    .extend(cont.iter().map(|&c| F::from_f64_lossy(row[c] as f64)));
                out.landcover_rows.push(landcover_row(row[lc] as f64));
                out.landcover_raw.push(F::from_f64_lossy(row[lc] as f64));
                let marks = encode_calendar(s.step_date(t, seq_len));
                out.marks.extend(marks.iter().map(|&m| F::from_f64_lossy(m)));
            }
        }
        Ok(out)
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len() / (self.batch * self.seq_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Ordered parameter declarations; the order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    specs: Vec<ParamSpec>,
}

impl ParamRegistry {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    /// Materializes every declared tensor with its initializer, in order.
    pub fn init<F: Scalar>(&self, seed: u64) -> ParamStore<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        for s in &self.specs {
            let t = match s.init {
                Init::Uniform(bound) => uniform(&mut rng, &s.shape, bound),
                Init::Normal(std) => normal(&mut rng, &s.shape, std),
                Init::Const(c) => Tensor::full(&s.shape, F::from_f64_lossy(c)),
            };
            store.push(s.name.clone(), t);
        }
        store
    }

    pub fn zeros<F: Scalar>(&self) -> ParamStore<F> {
        let mut store = ParamStore::default();
        for s in &self.specs {
            store.push(s.name.clone(), Tensor::zeros(&s.shape));
        }
        store
    }

    /// Verifies that `store` has exactly the declared names and shapes.
    pub fn check<F: Scalar>(&self, store: &ParamStore<F>) -> Result<()> {
        if store.len() != self.specs.len() {
            return Err(Error::ShapeDisagreement(format!(
                "expected {} parameter tensors, found {}",
                self.specs.len(),
                store.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(store.names().iter().zip(store.tensors())) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::ShapeDisagreement(format!(
                    "parameter {name} {:?} does not match declared {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn shapes(&self) -> impl Iterator<Item = &[usize]> {
        self.specs.iter().map(|s| s.shape.as_slice())
    }

    /// Declares a `[out, in]` linear layer with uniform ±1/√in initialization.
    pub fn linear(&mut self, prefix: &str, inp: usize, out: usize) -> (ParamId, ParamId) {
        let bound = 1.0 / (inp as f64).sqrt();
        let w = self.add(format!("{prefix}.weight"), vec![out, inp], Init::Uniform(bound));
        let b = self.add(format!("{prefix}.bias"), vec![out], Init::Uniform(bound));
        (w, b)
    }

    pub fn layer_norm(&mut self, prefix: &str, width: usize) -> LayerNormParams {
        LayerNormParams {
            gamma: self.add(format!("{prefix}.gamma"), vec![width], Init::Const(1.0)),
            beta: self.add(format!("{prefix}.beta"), vec![width], Init::Const(0.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    fn apply<F: Scalar>(&self, g: &mut Graph<F>, p: &BoundParams, x: Var, eps: f64) -> Result<Var> {
        g.layer_norm(
            x,
            Some(p.var(self.gamma)),
            Some(p.var(self.beta)),
            F::from_f64_lossy(eps),
        )
    }
}

/// Two-layer perceptron `in → hidden → out` with ReLU and dropout in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register(reg: &mut ParamRegistry, prefix: &str, width: usize, hidden: usize) -> Self {
        let (w1, b1) = reg.linear(&format!("{prefix}.fc1"), width, hidden);
        let (w2, b2) = reg.linear(&format!("{prefix}.fc2"), hidden, width);
        Self { w1, b1, w2, b2 }
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        x: Var,
        dropout: f64,
    ) -> Result<Var> {
        let h = g.linear(x, p.var(self.w1), Some(p.var(self.b1)))?;
        let h = g.relu(h);
        let h = g.dropout(h, dropout);
        g.linear(h, p.var(self.w2), Some(p.var(self.b2)))
    }

    fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Multi-scale Haar block: one residual MLP per scale `0..=S`, each acting along time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBlock {
    pub scale_mlps: Vec<Mlp>,
    pub lengths: Vec<usize>,
}

impl WaveletBlock {
    pub fn register(reg: &mut ParamRegistry, prefix: &str, lengths: &[usize], hidden: usize) -> Self {
        let scale_mlps = lengths
            .iter()
            .enumerate()
            .map(|(s, &len)| Mlp::register(reg, &format!("{prefix}.scale{s}"), len, hidden))
            .collect();
        Self {
            scale_mlps,
            lengths: lengths.to_vec(),
        }
    }

    pub fn scales(&self) -> usize {
        self.scale_mlps.len() - 1
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.scale_mlps.iter().flat_map(Mlp::ids).collect()
    }

    /// `[B, T, C] → [B, T, C]`: Haar pyramid, coarsest residual refinement, then
    /// bottom-up upsample-and-correct back to the input resolution.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        x: Var,
        dropout: f64,
    ) -> Result<Var> {
        let s_max = self.scales();
        let len = g.shape(x)[1];
        if len < (1 << s_max) {
            return Err(Error::ScaleLength { scales: s_max, len });
        }
        if len != self.lengths[0] {
            return Err(Error::Dimension {
                op: "wavelet block length",
                lhs: g.shape(x).to_vec(),
                rhs: self.lengths.clone(),
            });
        }
        let mut pyramid = vec![g.transpose_last2(x)?];
        for s in 0..s_max {
            let next = g.haar_lowpass(pyramid[s])?;
            pyramid.push(next);
        }
        let coarse = pyramid[s_max];
        let f = self.scale_mlps[s_max].forward(g, p, coarse, dropout)?;
        let mut refined = g.add(coarse, f)?;
        for s in (0..s_max).rev() {
            let up = g.upsample(refined, self.lengths[s])?;
            let f = self.scale_mlps[s].forward(g, p, up, dropout)?;
            refined = g.add(pyramid[s], f)?;
        }
        g.transpose_last2(refined)
    }
}

/// Patch-wise time mixing followed by channel mixing, each residual + layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TcMixer {
    pub patch_len: usize,
    pub time: Mlp,
    pub channel: Mlp,
    pub time_norm: LayerNormParams,
    pub channel_norm: LayerNormParams,
}

impl TcMixer {
    pub fn register(
        reg: &mut ParamRegistry,
        prefix: &str,
        patch_len: usize,
        n_tok: usize,
        hidden: usize,
    ) -> Self {
        Self {
            patch_len,
            time: Mlp::register(reg, &format!("{prefix}.time"), patch_len, hidden),
            channel: Mlp::register(reg, &format!("{prefix}.channel"), n_tok, hidden),
            time_norm: reg.layer_norm(&format!("{prefix}.time_norm"), n_tok),
            channel_norm: reg.layer_norm(&format!("{prefix}.channel_norm"), n_tok),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.time.ids().to_vec();
        ids.extend(self.channel.ids());
        ids.extend([
            self.time_norm.gamma,
            self.time_norm.beta,
            self.channel_norm.gamma,
            self.channel_norm.beta,
        ]);
        ids
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        x: Var,
        dropout: f64,
        eps: f64,
    ) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, t, c) = (s[0], s[1], s[2]);
        let n_patch = t.div_ceil(self.patch_len);
        let padded = n_patch * self.patch_len;
        let z = g.pad_time(x, padded)?;
        let z = g.reshape(z, vec![b, n_patch, self.patch_len, c])?;

        let zt = g.transpose_last2(z)?;
        let mixed = self.time.forward(g, p, zt, dropout)?;
        let mixed = g.transpose_last2(mixed)?;
        let z = g.add(z, mixed)?;
        let z = self.time_norm.apply(g, p, z, eps)?;

        let mixed = self.channel.forward(g, p, z, dropout)?;
        let z = g.add(z, mixed)?;
        let z = self.channel_norm.apply(g, p, z, eps)?;

        let z = g.reshape(z, vec![b, padded, c])?;
        g.crop_time(z, t)
    }
}

/// Parallel wavelet / mixer branches fused by addition and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionLayer {
    pub wavelet: WaveletBlock,
    pub mixer: TcMixer,
    pub norm: LayerNormParams,
}

/// The full WaveletMixer: architecture plus its parameter declarations.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletMixer {
    pub config: ModelConfig,
    pub schema: ChannelSchema,
    pub layout: TokenLayout,
    pub registry: ParamRegistry,
    pub embedding: ParamId,
    pub input_wavelet: WaveletBlock,
    pub layers: Vec<FusionLayer>,
    pub lambda_log: ParamId,
    pub proj_weight: ParamId,
    pub proj_bias: ParamId,
}

impl WaveletMixer {
    pub fn new(config: ModelConfig, schema: ChannelSchema) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let layout = TokenLayout::new(&schema, config.landcover_width());
        let lengths = config.scale_lengths();
        let mut reg = ParamRegistry::default();
        let embedding = reg.add(
            "landcover.embedding".into(),
            vec![config.landcover_classes, config.landcover_dim],
            Init::Normal(0.02),
        );
        let input_wavelet = WaveletBlock::register(&mut reg, "input_wavelet", &lengths, config.hidden);
        let layers = (0..config.layers)
            .map(|l| {
                let prefix = format!("layer{l}");
                FusionLayer {
                    wavelet: WaveletBlock::register(
                        &mut reg,
                        &format!("{prefix}.wavelet"),
                        &lengths,
                        config.hidden,
                    ),
                    mixer: TcMixer::register(
                        &mut reg,
                        &format!("{prefix}.mixer"),
                        config.patch_len,
                        layout.n_tok,
                        config.hidden,
                    ),
                    norm: reg.layer_norm(&format!("{prefix}.fusion_norm"), layout.n_tok),
                }
            })
            .collect();
        let lambda_log = reg.add("transient.lambda_log".into(), vec![1], Init::Const(0.0));
        let (proj_weight, proj_bias) = reg.linear("projection", config.seq_len, config.horizon);
        Ok(Self {
            config,
            schema,
            layout,
            registry: reg,
            embedding,
            input_wavelet,
            layers,
            lambda_log,
            proj_weight,
            proj_bias,
        })
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamStore<F> {
        self.registry.init(seed)
    }

    fn disabled(&self, c: Component) -> bool {
        self.config.disable.disabled(c)
    }

    pub fn batch<F: Scalar>(&self, samples: &[DriverSequence<'_>]) -> Result<BatchInput<F>> {
        BatchInput::new(&self.schema, self.config.seq_len, samples)
    }

    /// `[T] codes → [T, N_lc]` embedding rows.
    pub fn embed_landcover<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        rows: &[usize],
    ) -> Result<Var> {
        g.embedding(p.var(self.embedding), rows)
    }

    /// `[B, T, N_tok]` tokens ordered continuous → land cover → calendar marks.
    pub fn assemble_tokens<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        input: &BatchInput<F>,
    ) -> Result<Var> {
        let (b, t) = (input.batch, input.seq_len);
        if t != self.config.seq_len {
            return Err(Error::Dimension {
                op: "assemble_tokens",
                lhs: vec![b, t],
                rhs: vec![b, self.config.seq_len],
            });
        }
        if input.n_continuous() != self.layout.n_continuous() {
            return Err(Error::ChannelCount {
                expected: self.layout.n_continuous(),
                got: input.n_continuous(),
            });
        }
        let mut parts = Vec::with_capacity(3);
        if self.layout.n_continuous() > 0 {
            let cont = Tensor::new(vec![b, t, self.layout.n_continuous()], input.continuous.clone())?;
            parts.push(g.input(cont));
        }
        let lc = if self.disabled(Component::LulcEmbedding) {
            g.input(Tensor::new(vec![b, t, 1], input.landcover_raw.clone())?)
        } else {
            let e = self.embed_landcover(g, p, &input.landcover_rows)?;
            g.reshape(e, vec![b, t, self.config.landcover_dim])?
        };
        parts.push(lc);
        parts.push(g.input(Tensor::new(vec![b, t, MARK_WIDTH], input.marks.clone())?));
        g.concat_last(&parts)
    }

    /// Replaces the dynamic channels of `x` by their wavelet-refined version.
    fn refine_dynamic<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        block: &WaveletBlock,
        x: Var,
    ) -> Result<Var> {
        let dynamic = &self.layout.dynamic;
        if dynamic.is_empty() {
            return Ok(x);
        }
        let xd = g.select_last(x, dynamic)?;
        let refined = block.forward(g, p, xd, self.config.dropout)?;
        g.replace_last(x, dynamic, refined)
    }

    /// `H = LN(X_time + X_ms)`.
    pub fn fusion_layer<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        layer: &FusionLayer,
        x: Var,
    ) -> Result<Var> {
        let x_time = if self.disabled(Component::Tcmixer) {
            x
        } else {
            layer
                .mixer
                .forward(g, p, x, self.config.dropout, self.config.ln_eps)?
        };
        let x_ms = if self.disabled(Component::DynamicMsw) {
            x
        } else {
            self.refine_dynamic(g, p, &layer.wavelet, x)?
        };
        let sum = g.add(x_time, x_ms)?;
        layer.norm.apply(g, p, sum, self.config.ln_eps)
    }

    pub fn transient_head<F: Scalar>(&self, g: &mut Graph<F>, p: &BoundParams, h: Var) -> Result<Var> {
        g.transient(h, p.var(self.lambda_log))
    }

    /// Shared temporal projection per channel; returns `[B, T_pred, N_cont]` in driver order.
    pub fn project_horizon<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        h: Var,
    ) -> Result<Var> {
        let ht = g.transpose_last2(h)?;
        let z = g.linear(ht, p.var(self.proj_weight), Some(p.var(self.proj_bias)))?;
        let z = g.transpose_last2(z)?;
        g.select_last(z, &self.layout.forecast)
    }

    /// Full pipeline; the graph's mode decides whether dropout is active.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        input: &BatchInput<F>,
    ) -> Result<ForwardOutput> {
        let mut h = self.assemble_tokens(g, p, input)?;
        if !self.disabled(Component::InputMsw) {
            h = self.refine_dynamic(g, p, &self.input_wavelet, h)?;
        }
        for layer in &self.layers {
            h = self.fusion_layer(g, p, layer, h)?;
        }
        if !self.disabled(Component::TransientHead) {
            h = self.transient_head(g, p, h)?;
        }
        let forecast = self.project_horizon(g, p, h)?;
        let fire = self.layout.fire_forecast.ok_or_else(|| {
            Error::Config("schema declares no fire-detection channel".into())
        })?;
        let n_out = self.layout.n_continuous();
        let horizon = self.config.horizon;
        let idx: Vec<usize> = (0..input.batch)
            .map(|b| b * horizon * n_out + fire)
            .collect();
        let logits = g.gather(forecast, &idx)?;
        let probability = g.sigmoid(logits);
        Ok(ForwardOutput {
            forecast,
            logits,
            probability,
        })
    }

    /// Fire probabilities in evaluation mode.
    pub fn predict<F: Scalar>(&self, params: &ParamStore<F>, input: &BatchInput<F>) -> Result<Vec<F>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, input)?;
        Ok(g.value(out.probability).data().to_vec())
    }

    /// Parameters owned by an ablatable submodule.
    pub fn component_params(&self, c: Component) -> Vec<ParamId> {
        match c {
            Component::LulcEmbedding => vec![self.embedding],
            Component::InputMsw => self.input_wavelet.param_ids(),
            Component::DynamicMsw => self
                .layers
                .iter()
                .flat_map(|l| l.wavelet.param_ids())
                .collect(),
            Component::TransientHead => vec![self.lambda_log],
            Component::Tcmixer => self.layers.iter().flat_map(|l| l.mixer.param_ids()).collect(),
        }
    }
}

/// Graph handles produced by [`WaveletMixer::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[B, T_pred, N_cont]`.
    pub forecast: Var,
    /// `[B]` fire-channel forecast at horizon step 0.
    pub logits: Var,
    /// `[B]` sigmoid of `logits`.
    pub probability: Var,
}
