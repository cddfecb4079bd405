use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Divisor applied to attention scores before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionScale {
    /// `1/√D`, the model dimension.
    #[default]
    D,
    /// `1/√D_k`, the per-head key dimension.
    Dk,
}

/// How raw patches are mapped to model space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchEmbed {
    /// One linear map `L → D`.
    #[default]
    Linear,
    /// Non-overlapping 1-D convolution (kernel = stride = `conv_kernel`,
    /// `conv_channels` filters), GELU, then a linear map to `D`.
    Conv,
}

/// The four component-removal variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Freq,
    Temporal,
    Channel,
    ConvEmbed,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freq" => Ok(Ablation::Freq),
            "temporal" => Ok(Ablation::Temporal),
            "channel" => Ok(Ablation::Channel),
            "conv-embed" => Ok(Ablation::ConvEmbed),
            other => Err(config_err(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_len: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub head_dim_k: usize,
    pub head_dim_v: usize,
    pub ffn_dim: usize,
    pub temporal_layers: usize,
    pub channel_layers: usize,
    pub max_patches: usize,
    pub n_bands: usize,
    pub dropout: f64,
    pub attention_scale: AttentionScale,
    /// Alternate temporal and channel blocks instead of running all temporal
    /// blocks first.
    pub interleave: bool,
    pub use_freq: bool,
    pub patch_embed: PatchEmbed,
    pub conv_kernel: usize,
    pub conv_channels: usize,
    /// Classification head output size, when one is attached.
    pub n_classes: Option<usize>,
    /// Forecasting head `(context patches, horizon samples)`, when one is attached.
    pub forecast: Option<(usize, usize)>,
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            patch_len: 1500,
            model_dim: 16,
            heads: 2,
            head_dim_k: 8,
            head_dim_v: 8,
            ffn_dim: 32,
            temporal_layers: 1,
            channel_layers: 1,
            max_patches: 32,
            n_bands: 8,
            dropout: 0.0,
            attention_scale: AttentionScale::D,
            interleave: false,
            use_freq: true,
            patch_embed: PatchEmbed::Linear,
            conv_kernel: 10,
            conv_channels: 8,
            n_classes: None,
            forecast: None,
        }
    }

    pub fn base() -> Self {
        Self {
            model_dim: 768,
            heads: 12,
            head_dim_k: 64,
            head_dim_v: 64,
            ffn_dim: 3072,
            temporal_layers: 12,
            channel_layers: 4,
            max_patches: 64,
            dropout: 0.1,
            conv_channels: 64,
            ..Self::tiny()
        }
    }

    pub fn large() -> Self {
        Self {
            model_dim: 1024,
            heads: 16,
            ffn_dim: 7168,
            ..Self::base()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "base" => Ok(Self::base()),
            "large" => Ok(Self::large()),
            other => Err(config_err(format!("unknown preset `{other}`"))),
        }
    }

    /// Compact configuration for unit tests: `L` samples per patch, model width `d`.
    pub fn micro(patch_len: usize, d: usize, heads: usize) -> Self {
        Self {
            patch_len,
            model_dim: d,
            heads,
            head_dim_k: d / heads,
            head_dim_v: d / heads,
            ffn_dim: 2 * d,
            max_patches: 16,
            conv_kernel: 2,
            conv_channels: 4,
            ..Self::tiny()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Freq => self.use_freq = false,
            Ablation::Temporal => self.temporal_layers = 0,
            Ablation::Channel => self.channel_layers = 0,
            Ablation::ConvEmbed => self.patch_embed = PatchEmbed::Conv,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model_dim;
        if self.patch_len == 0 || d == 0 || self.heads == 0 || self.head_dim_k == 0 || self.head_dim_v == 0 {
            return Err(config_err("dimensions must be positive"));
        }
        if self.ffn_dim == 0 || self.max_patches == 0 || self.n_bands == 0 {
            return Err(config_err("ffn_dim, max_patches and n_bands must be positive"));
        }
        if d / 4 == 0 {
            return Err(config_err("model_dim must be at least 4 for the classification head"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.patch_embed == PatchEmbed::Conv
            && (self.conv_kernel == 0 || self.conv_channels == 0 || self.patch_len % self.conv_kernel != 0)
        {
            return Err(config_err(format!(
                "conv kernel {} must divide patch length {}",
                self.conv_kernel, self.patch_len
            )));
        }
        Ok(())
    }

    /// Plain `key=value` lines, one per field; `none` marks an absent head.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let scale = match self.attention_scale {
            AttentionScale::D => "d",
            AttentionScale::Dk => "dk",
        };
        let embed = match self.patch_embed {
            PatchEmbed::Linear => "linear",
            PatchEmbed::Conv => "conv",
        };
        let _ = writeln!(s, "patch_len={}", self.patch_len);
        let _ = writeln!(s, "model_dim={}", self.model_dim);
        let _ = writeln!(s, "heads={}", self.heads);
        let _ = writeln!(s, "head_dim_k={}", self.head_dim_k);
        let _ = writeln!(s, "head_dim_v={}", self.head_dim_v);
        let _ = writeln!(s, "ffn_dim={}", self.ffn_dim);
        let _ = writeln!(s, "temporal_layers={}", self.temporal_layers);
        let _ = writeln!(s, "channel_layers={}", self.channel_layers);
        let _ = writeln!(s, "max_patches={}", self.max_patches);
        let _ = writeln!(s, "n_bands={}", self.n_bands);
        let _ = writeln!(s, "dropout={}", self.dropout);
        let _ = writeln!(s, "scale={scale}");
        let _ = writeln!(s, "interleave={}", self.interleave);
        let _ = writeln!(s, "use_freq={}", self.use_freq);
        let _ = writeln!(s, "patch_embed={embed}");
        let _ = writeln!(s, "conv_kernel={}", self.conv_kernel);
        let _ = writeln!(s, "conv_channels={}", self.conv_channels);
        match self.n_classes {
            Some(k) => writeln!(s, "n_classes={k}"),
            None => writeln!(s, "n_classes=none"),
        }
        .ok();
        match self.forecast {
            Some((p, h)) => writeln!(s, "forecast={p}:{h}"),
            None => writeln!(s, "forecast=none"),
        }
        .ok();
        s
    }

    /// Parses `key=value` lines. A `preset=` line (if any) supplies the
    /// starting point; later keys override it. `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| config_err(format!("expected key=value, got `{l}`")))
            })
            .collect::<Result<_>>()?;
        let mut cfg = match pairs.iter().find(|(k, _)| *k == "preset") {
            Some((_, v)) => Self::preset(v)?,
            None => Self::tiny(),
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| config_err(format!("bad value `{v}` for `{k}`")))
        }
        for (k, v) in pairs {
            match k {
                "preset" => {}
                "patch_len" => cfg.patch_len = num(k, v)?,
                "model_dim" => cfg.model_dim = num(k, v)?,
                "heads" => cfg.heads = num(k, v)?,
                "head_dim_k" => cfg.head_dim_k = num(k, v)?,
                "head_dim_v" => cfg.head_dim_v = num(k, v)?,
                "ffn_dim" => cfg.ffn_dim = num(k, v)?,
                "temporal_layers" => cfg.temporal_layers = num(k, v)?,
                "channel_layers" => cfg.channel_layers = num(k, v)?,
                "max_patches" => cfg.max_patches = num(k, v)?,
                "n_bands" => cfg.n_bands = num(k, v)?,
                "dropout" => cfg.dropout = num(k, v)?,
                "interleave" => cfg.interleave = num(k, v)?,
                "use_freq" => cfg.use_freq = num(k, v)?,
                "conv_kernel" => cfg.conv_kernel = num(k, v)?,
                "conv_channels" => cfg.conv_channels = num(k, v)?,
                "scale" => {
                    cfg.attention_scale = match v {
                        "d" => AttentionScale::D,
                        "dk" => AttentionScale::Dk,
                        _ => return Err(config_err(format!("bad scale `{v}`"))),
                    }
                }
                "patch_embed" => {
                    cfg.patch_embed = match v {
                        "linear" => PatchEmbed::Linear,
                        "conv" => PatchEmbed::Conv,
                        _ => return Err(config_err(format!("bad patch_embed `{v}`"))),
                    }
                }
                "n_classes" => cfg.n_classes = if v == "none" { None } else { Some(num(k, v)?) },
                "forecast" => {
                    cfg.forecast = if v == "none" {
                        None
                    } else {
                        let (p, h) = v
                            .split_once(':')
                            .ok_or_else(|| config_err(format!("forecast expects P:H, got `{v}`")))?;
                        Some((num(k, p)?, num(k, h)?))
                    }
                }
                other => return Err(config_err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
