//! The network: time-frequency fusion embedding, a stack of temporal
//! attention blocks (attention across patches, per channel), a stack of
//! channel attention blocks (attention across channels, per patch), and the
//! reconstruction, classification and forecasting heads.
//!
//! No parameter is tied to a channel index, so one set of weights serves any
//! channel count and the network is equivariant to channel order.

mod config;
mod network;

pub use config::{Ablation, AttentionScale, ModelConfig, PatchEmbed};
pub use network::{param_specs, Encoded, Fome, Init, ParamSpec};
