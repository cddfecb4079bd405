use super::config::{AttentionScale, ModelConfig, PatchEmbed};
use crate::error::{config_err, Error, Result};
use crate::preprocess::PatchGrid;
use crate::signal::Gaussian;
use crate::spectral::BandPowerTensor;
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

/// Initial value distribution of a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    /// `N(0, std²)`.
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn linear(specs: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![fan_in, fan_out],
        init: Init::Xavier { fan_in, fan_out },
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![fan_out],
        init: Init::Zeros,
    });
}

fn matrix(specs: &mut Vec<ParamSpec>, name: String, fan_in: usize, fan_out: usize) {
    specs.push(ParamSpec {
        name,
        shape: vec![fan_in, fan_out],
        init: Init::Xavier { fan_in, fan_out },
    });
}

fn norm(specs: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.gamma"),
        shape: vec![d],
        init: Init::Ones,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.beta"),
        shape: vec![d],
        init: Init::Zeros,
    });
}

fn block_specs(specs: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig) {
    let d = cfg.model_dim;
    let h = cfg.heads;
    norm(specs, &format!("{prefix}.ln1"), d);
    matrix(specs, format!("{prefix}.attn.wq"), d, h * cfg.head_dim_k);
    matrix(specs, format!("{prefix}.attn.wk"), d, h * cfg.head_dim_k);
    matrix(specs, format!("{prefix}.attn.wv"), d, h * cfg.head_dim_v);
    matrix(specs, format!("{prefix}.attn.wo"), h * cfg.head_dim_v, d);
    norm(specs, &format!("{prefix}.ln2"), d);
    linear(specs, &format!("{prefix}.ffn1"), d, cfg.ffn_dim);
    linear(specs, &format!("{prefix}.ffn2"), cfg.ffn_dim, d);
}

/// Every parameter the configuration implies, in creation order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.model_dim;
    let mut s = Vec::new();
    match cfg.patch_embed {
        PatchEmbed::Linear => linear(&mut s, "embed.patch", cfg.patch_len, d),
        PatchEmbed::Conv => {
            linear(&mut s, "embed.conv", cfg.conv_kernel, cfg.conv_channels);
            linear(
                &mut s,
                "embed.conv_proj",
                cfg.patch_len / cfg.conv_kernel * cfg.conv_channels,
                d,
            );
        }
    }
    if cfg.use_freq {
        linear(&mut s, "embed.freq", cfg.n_bands, d);
    }
    s.push(ParamSpec {
        name: "embed.pos".into(),
        shape: vec![cfg.max_patches, d],
        init: Init::Normal(0.02),
    });
    s.push(ParamSpec {
        name: "embed.mask".into(),
        shape: vec![d],
        init: Init::Normal(0.02),
    });
    for i in 0..cfg.temporal_layers {
        block_specs(&mut s, &format!("temporal.{i}"), cfg);
    }
    for i in 0..cfg.channel_layers {
        block_specs(&mut s, &format!("channel.{i}"), cfg);
    }
    norm(&mut s, "final_ln", d);
    linear(&mut s, "head.recon", d, cfg.patch_len);
    if let Some(k) = cfg.n_classes {
        s.extend(classifier_specs(cfg, k));
    }
    if let Some((p, h)) = cfg.forecast {
        linear(&mut s, "head.forecast", p * d, h);
    }
    s
}

fn classifier_specs(cfg: &ModelConfig, n_classes: usize) -> Vec<ParamSpec> {
    let d = cfg.model_dim;
    let mut s = Vec::new();
    linear(&mut s, "head.cls1", d, d / 2);
    linear(&mut s, "head.cls2", d / 2, d / 4);
    linear(&mut s, "head.cls3", d / 4, n_classes);
    s
}

fn materialize(spec: &ParamSpec, rng: &mut Gaussian) -> Tensor {
    match spec.init {
        Init::Zeros => Tensor::zeros(spec.shape.clone()),
        Init::Ones => Tensor::full(spec.shape.clone(), 1.0),
        Init::Normal(std) => Tensor::from_fn(spec.shape.clone(), |_| rng.normal(0.0, std)),
        Init::Xavier { fan_in, fan_out } => {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(spec.shape.clone(), |_| (2.0 * rng.uniform() - 1.0) * a)
        }
    }
}

/// Output of the encoder stack.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Final `C × P × D` embedding.
    pub output: Var,
    /// Attention probabilities of every block, in execution order; temporal
    /// blocks give `[C·h, P, P]`, channel blocks `[P·h, C, C]`.
    pub attention: Vec<Var>,
}

/// The model: configuration plus its named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Fome {
    cfg: ModelConfig,
    params: ParameterStore,
}

type Dropout<'a> = Option<&'a mut Gaussian>;

impl Fome {
    /// Fresh parameters: Xavier-uniform linears, zero biases, unit norms and
    /// `N(0, 0.02²)` positional table and mask vector.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Gaussian::new(seed);
        let mut params = ParameterStore::new();
        for spec in param_specs(&cfg) {
            let t = materialize(&spec, &mut rng);
            params.insert(spec.name, t)?;
        }
        Ok(Self { cfg, params })
    }

    /// Wraps loaded parameters, checking names and shapes against the configuration.
    pub fn from_parts(cfg: ModelConfig, params: ParameterStore) -> Result<Self> {
        cfg.validate()?;
        let expected = param_specs(&cfg);
        let actual = params.shapes();
        if expected.len() != actual.len() {
            return Err(config_err(format!(
                "configuration implies {} tensors, store has {}",
                expected.len(),
                actual.len()
            )));
        }
        for (spec, (name, shape)) in expected.iter().zip(&actual) {
            if &spec.name != name || &spec.shape != shape {
                return Err(config_err(format!(
                    "expected `{}` {:?}, found `{name}` {shape:?}",
                    spec.name, spec.shape
                )));
            }
        }
        Ok(Self { cfg, params })
    }

    /// Builds a model from checkpoint tensors.
    pub fn from_checkpoint(cfg: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut params = ParameterStore::new();
        for (name, t) in tensors {
            params.insert(name, t)?;
        }
        Self::from_parts(cfg, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    /// Adds a classification head if none is present.
    pub fn attach_classifier(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        if n_classes == 0 {
            return Err(config_err("need at least one class"));
        }
        match self.cfg.n_classes {
            Some(k) if k == n_classes => return Ok(()),
            Some(k) => return Err(config_err(format!("model already has a {k}-class head"))),
            None => {}
        }
        let mut rng = Gaussian::new(seed);
        for spec in classifier_specs(&self.cfg, n_classes) {
            let t = materialize(&spec, &mut rng);
            self.params.insert(spec.name, t)?;
        }
        self.cfg.n_classes = Some(n_classes);
        Ok(())
    }

    /// Adds a forecasting head mapping `context` patches to `horizon` samples per channel.
    pub fn attach_forecaster(&mut self, context: usize, horizon: usize, seed: u64) -> Result<()> {
        if context == 0 || horizon == 0 {
            return Err(config_err("forecast context and horizon must be positive"));
        }
        match self.cfg.forecast {
            Some(f) if f == (context, horizon) => return Ok(()),
            Some(f) => return Err(config_err(format!("model already has a forecast head {f:?}"))),
            None => {}
        }
        let mut specs = Vec::new();
        linear(&mut specs, "head.forecast", context * self.cfg.model_dim, horizon);
        let mut rng = Gaussian::new(seed);
        for spec in specs {
            let t = materialize(&spec, &mut rng);
            self.params.insert(spec.name, t)?;
        }
        self.cfg.forecast = Some((context, horizon));
        Ok(())
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<Var> {
        g.param_by_name(&self.params, name)
    }

    fn linear(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(g, &format!("{prefix}.weight"))?;
        let b = self.p(g, &format!("{prefix}.bias"))?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn check_inputs(&self, grid: &PatchGrid, bands: &BandPowerTensor) -> Result<()> {
        if grid.patches() > self.cfg.max_patches {
            return Err(Error::Capacity {
                patches: grid.patches(),
                max: self.cfg.max_patches,
            });
        }
        if grid.patch_len() != self.cfg.patch_len {
            return Err(Error::Shape {
                op: "embed",
                lhs: vec![grid.channels(), grid.patches(), grid.patch_len()],
                rhs: vec![self.cfg.patch_len],
            });
        }
        if bands.channels() != grid.channels() || bands.patches() != grid.patches() || bands.bands() != self.cfg.n_bands {
            return Err(Error::Shape {
                op: "embed",
                lhs: vec![grid.channels(), grid.patches()],
                rhs: vec![bands.channels(), bands.patches(), bands.bands()],
            });
        }
        Ok(())
    }

    /// Patch embedding `[C·P, D]` (linear or convolutional).
    fn patch_embedding(&self, g: &mut Graph, grid: &PatchGrid) -> Result<Var> {
        let rows = grid.channels() * grid.patches();
        let l = self.cfg.patch_len;
        let x = g.constant(Tensor::new([rows, l], grid.values().to_vec())?);
        match self.cfg.patch_embed {
            PatchEmbed::Linear => self.linear(g, x, "embed.patch"),
            PatchEmbed::Conv => {
                let k = self.cfg.conv_kernel;
                let frames = g.reshape(x, &[rows * (l / k), k])?;
                let conv = self.linear(g, frames, "embed.conv")?;
                let act = g.gelu(conv);
                let flat = g.reshape(act, &[rows, (l / k) * self.cfg.conv_channels])?;
                self.linear(g, flat, "embed.conv_proj")
            }
        }
    }

    /// Frequency embedding `Linear(Softmax(band powers))`, `[C·P, D]`.
    fn freq_embedding(&self, g: &mut Graph, bands: &BandPowerTensor) -> Result<Var> {
        let rows = bands.channels() * bands.patches();
        let b = g.constant(Tensor::new([rows, bands.bands()], bands.values().to_vec())?);
        let s = g.softmax(b)?;
        self.linear(g, s, "embed.freq")
    }

    /// Positional embedding `[C·P, D]`: row `c·P + p` is table row `p`.
    fn pos_embedding(&self, g: &mut Graph, channels: usize, patches: usize) -> Result<Var> {
        let table = self.p(g, "embed.pos")?;
        let idx: Vec<usize> = (0..channels).flat_map(|_| 0..patches).collect();
        g.embedding_lookup(table, &idx)
    }

    /// `E_input = E_patch + E_freq + E_pos`, shaped `[C, P, D]`.
    ///
    /// Rows flagged in `masked` (indexed `c·P + p`) have their patch and
    /// frequency content replaced by the mask vector; they keep `E_pos`.
    pub fn embed(&self, g: &mut Graph, grid: &PatchGrid, bands: &BandPowerTensor, masked: Option<&[bool]>) -> Result<Var> {
        self.check_inputs(grid, bands)?;
        let (c, p, d) = (grid.channels(), grid.patches(), self.cfg.model_dim);
        let mut content = self.patch_embedding(g, grid)?;
        if self.cfg.use_freq {
            let f = self.freq_embedding(g, bands)?;
            content = g.add(content, f)?;
        }
        if let Some(masked) = masked.filter(|m| m.iter().any(|&x| x)) {
            if masked.len() != c * p {
                return Err(Error::Index(format!("mask covers {} slots, grid has {}", masked.len(), c * p)));
            }
            let keep = Tensor::from_fn([c * p, d], |i| if masked[i / d] { 0.0 } else { 1.0 });
            let keep = g.constant(keep);
            content = g.mul(content, keep)?;
            let col = Tensor::from_fn([c * p, 1], |i| if masked[i] { 1.0 } else { 0.0 });
            let col = g.constant(col);
            let mask = self.p(g, "embed.mask")?;
            let row = g.reshape(mask, &[1, d])?;
            let fill = g.matmul(col, row)?;
            content = g.add(content, fill)?;
        }
        let pos = self.pos_embedding(g, c, p)?;
        let e = g.add(content, pos)?;
        g.reshape(e, &[c, p, d])
    }

    /// Multi-head self-attention over axis 1 of `y[B, S, D]`.
    ///
    /// Each head computes `softmax(Q Kᵀ / s) V` with `s = √D` (or `√D_k`);
    /// heads are concatenated and projected back to `D`. Returns the output
    /// and the `[B·h, S, S]` attention probabilities.
    pub fn multi_head_attention(&self, g: &mut Graph, prefix: &str, y: Var) -> Result<(Var, Var)> {
        let shape = g.shape(y).to_vec();
        let [b, s, d] = shape[..] else {
            return Err(Error::Shape {
                op: "multi_head_attention",
                lhs: shape,
                rhs: vec![3],
            });
        };
        let (h, dk, dv) = (self.cfg.heads, self.cfg.head_dim_k, self.cfg.head_dim_v);
        let wq = self.p(g, &format!("{prefix}.wq"))?;
        let wk = self.p(g, &format!("{prefix}.wk"))?;
        let wv = self.p(g, &format!("{prefix}.wv"))?;
        let wo = self.p(g, &format!("{prefix}.wo"))?;

        let q = g.matmul(y, wq)?;
        let q = g.reshape(q, &[b, s, h, dk])?;
        let q = g.permute(q, &[0, 2, 1, 3])?;
        let q = g.reshape(q, &[b * h, s, dk])?;

        let k = g.matmul(y, wk)?;
        let k = g.reshape(k, &[b, s, h, dk])?;
        let k = g.permute(k, &[0, 2, 3, 1])?;
        let k = g.reshape(k, &[b * h, dk, s])?;

        let v = g.matmul(y, wv)?;
        let v = g.reshape(v, &[b, s, h, dv])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;
        let v = g.reshape(v, &[b * h, s, dv])?;

        let scores = g.bmm(q, k)?;
        let denom = match self.cfg.attention_scale {
            AttentionScale::D => d as f64,
            AttentionScale::Dk => dk as f64,
        };
        let scores = g.scale(scores, 1.0 / denom.sqrt());
        let probs = g.softmax(scores)?;
        let heads = g.bmm(probs, v)?;
        let heads = g.reshape(heads, &[b, h, s, dv])?;
        let heads = g.permute(heads, &[0, 2, 1, 3])?;
        let heads = g.reshape(heads, &[b, s, h * dv])?;
        let out = g.matmul(heads, wo)?;
        Ok((out, probs))
    }

    /// Pre-norm transformer block over axis 1 of `x[B, S, D]`:
    /// `h = x + MHA(LN(x))`, `out = h + FFN(LN(h))` with a GELU FFN.
    pub fn attention_block(&self, g: &mut Graph, prefix: &str, x: Var, mut dropout: Dropout) -> Result<(Var, Var)> {
        let p = self.cfg.dropout;
        let gamma = self.p(g, &format!("{prefix}.ln1.gamma"))?;
        let beta = self.p(g, &format!("{prefix}.ln1.beta"))?;
        let normed = g.layer_norm(x, gamma, beta)?;
        let (att, probs) = self.multi_head_attention(g, &format!("{prefix}.attn"), normed)?;
        let att = match dropout.as_deref_mut() {
            Some(rng) => g.dropout(att, p, || rng.uniform())?,
            None => att,
        };
        let h = g.add(x, att)?;
        let gamma = self.p(g, &format!("{prefix}.ln2.gamma"))?;
        let beta = self.p(g, &format!("{prefix}.ln2.beta"))?;
        let normed = g.layer_norm(h, gamma, beta)?;
        let f = self.linear(g, normed, &format!("{prefix}.ffn1"))?;
        let f = g.gelu(f);
        let f = self.linear(g, f, &format!("{prefix}.ffn2"))?;
        let f = match dropout {
            Some(rng) => g.dropout(f, p, || rng.uniform())?,
            None => f,
        };
        Ok((g.add(h, f)?, probs))
    }

    /// Temporal block `layer`: attention across patches, independently per channel.
    pub fn temporal_attention(&self, g: &mut Graph, layer: usize, x: Var, dropout: Dropout) -> Result<(Var, Var)> {
        self.attention_block(g, &format!("temporal.{layer}"), x, dropout)
    }

    /// Channel block `layer`: attention across channels, independently per patch.
    pub fn channel_attention(&self, g: &mut Graph, layer: usize, x: Var, dropout: Dropout) -> Result<(Var, Var)> {
        let swapped = g.permute(x, &[1, 0, 2])?;
        let (y, probs) = self.attention_block(g, &format!("channel.{layer}"), swapped, dropout)?;
        Ok((g.permute(y, &[1, 0, 2])?, probs))
    }

    /// Embedding, encoder stack and final layer norm.
    ///
    /// `mask_slots` lists `(channel, patch)` slots whose embedding is replaced
    /// by the mask vector. Passing a generator enables dropout.
    pub fn encode(
        &self,
        g: &mut Graph,
        grid: &PatchGrid,
        bands: &BandPowerTensor,
        mask_slots: &[(usize, usize)],
        mut dropout: Dropout,
    ) -> Result<Encoded> {
        let (c, p) = (grid.channels(), grid.patches());
        let mut masked = vec![false; c * p];
        for &(ch, pa) in mask_slots {
            if ch >= c || pa >= p {
                return Err(Error::Index(format!("mask slot ({ch}, {pa}) outside {c}×{p} grid")));
            }
            masked[ch * p + pa] = true;
        }
        let mut x = self.embed(g, grid, bands, Some(&masked))?;
        let mut attention = Vec::new();
        let (nt, nc) = (self.cfg.temporal_layers, self.cfg.channel_layers);
        let order: Vec<(bool, usize)> = if self.cfg.interleave {
            (0..nt.max(nc))
                .flat_map(|i| [(true, i), (false, i)])
                .filter(|&(t, i)| if t { i < nt } else { i < nc })
                .collect()
        } else {
            (0..nt).map(|i| (true, i)).chain((0..nc).map(|i| (false, i))).collect()
        };
        for (temporal, i) in order {
            let (y, probs) = if temporal {
                self.temporal_attention(g, i, x, dropout.as_deref_mut())?
            } else {
                self.channel_attention(g, i, x, dropout.as_deref_mut())?
            };
            x = y;
            attention.push(probs);
        }
        let gamma = self.p(g, "final_ln.gamma")?;
        let beta = self.p(g, "final_ln.beta")?;
        let output = g.layer_norm(x, gamma, beta)?;
        Ok(Encoded { output, attention })
    }

    /// Linear `D → L` per slot: `[C, P, D] → [C, P, L]`.
    pub fn reconstruct(&self, g: &mut Graph, encoded: Var) -> Result<Var> {
        self.linear(g, encoded, "head.recon")
    }

    /// Class logits `[1, K]`: mean over channels and patches, then
    /// `D → D/2 → D/4 → K` with GELU between layers.
    pub fn classify_logits(&self, g: &mut Graph, encoded: Var) -> Result<Var> {
        if self.cfg.n_classes.is_none() {
            return Err(config_err("model has no classification head"));
        }
        let shape = g.shape(encoded).to_vec();
        let rows = shape[0] * shape[1];
        let flat = g.reshape(encoded, &[rows, shape[2]])?;
        let avg = g.constant(Tensor::full([1, rows], 1.0 / rows as f64));
        let pooled = g.matmul(avg, flat)?;
        let h = self.linear(g, pooled, "head.cls1")?;
        let h = g.gelu(h);
        let h = self.linear(g, h, "head.cls2")?;
        let h = g.gelu(h);
        self.linear(g, h, "head.cls3")
    }

    /// Per-channel forecast `[C, H]` from the flattened `P·D` embedding.
    pub fn forecast(&self, g: &mut Graph, encoded: Var) -> Result<Var> {
        let Some((context, _)) = self.cfg.forecast else {
            return Err(config_err("model has no forecasting head"));
        };
        let shape = g.shape(encoded).to_vec();
        if shape[1] != context {
            return Err(Error::Shape {
                op: "forecast",
                lhs: shape,
                rhs: vec![context],
            });
        }
        let flat = g.reshape(encoded, &[shape[0], shape[1] * shape[2]])?;
        self.linear(g, flat, "head.forecast")
    }

    /// Final embedding `[C, P, D]` as a plain tensor.
    pub fn forward(&self, grid: &PatchGrid, bands: &BandPowerTensor, mask_slots: &[(usize, usize)]) -> Result<Tensor> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, grid, bands, mask_slots, None)?;
        Ok(g.value(enc.output).clone())
    }

    /// Class probabilities for one sample.
    pub fn predict_proba(&self, grid: &PatchGrid, bands: &BandPowerTensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, grid, bands, &[], None)?;
        let logits = self.classify_logits(&mut g, enc.output)?;
        let probs = g.softmax(logits)?;
        Ok(g.value(probs).data().to_vec())
    }
}
