//! An EEG foundation model built from scratch: signal conditioning,
//! time-frequency fusion embedding, temporal and adaptive multi-channel
//! attention encoders, masked-patch pre-training and downstream heads for
//! classification, forecasting and imputation.
//!
//! The crate is organized bottom-up:
//!
//! * [`signal`] holds raw recordings, their file formats and a synthetic generator.
//! * [`preprocess`] turns a recording into a [`preprocess::PatchGrid`].
//! * [`spectral`] computes per-patch band powers.
//! * [`tensor`] is a small dense-tensor engine with reverse-mode differentiation.
//! * [`model`] is the network and its parameter store.
//! * [`train`] holds the optimizer, schedule, masking, training loops and metrics.
//!
//! The guide in `book/` walks through each layer; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod error;
pub mod model;
pub mod preprocess;
pub mod signal;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/signals.md")]
    pub mod signals {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    pub mod preprocessing {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    pub mod spectral {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
