use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::signal::Gaussian;

/// How masked positions are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Independent `(channel, patch)` slots.
    #[default]
    Slot,
    /// Whole patch columns, across every channel.
    Column,
}

impl std::str::FromStr for MaskMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slot" => Ok(Self::Slot),
            "column" => Ok(Self::Column),
            _ => Err(config_err(format!("unknown mask mode `{s}`"))),
        }
    }
}

/// The `(channel, patch)` slots hidden from the encoder for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    slots: Vec<(usize, usize)>,
}

impl MaskPlan {
    /// Draws `round(ratio · C · P)` distinct slots uniformly (or
    /// `round(ratio · P)` columns in column mode). Slots come out sorted.
    pub fn sample(channels: usize, patches: usize, ratio: f64, mode: MaskMode, rng: &mut Gaussian) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(config_err(format!("mask ratio {ratio} outside (0, 1)")));
        }
        let mut slots = match mode {
            MaskMode::Slot => {
                let n = channels * patches;
                let k = (ratio * n as f64).round() as usize;
                index::sample(rng.rng(), n, k)
                    .into_iter()
                    .map(|i| (i / patches, i % patches))
                    .collect::<Vec<_>>()
            }
            MaskMode::Column => {
                let k = (ratio * patches as f64).round() as usize;
                index::sample(rng.rng(), patches, k)
                    .into_iter()
                    .flat_map(|p| (0..channels).map(move |c| (c, p)))
                    .collect()
            }
        };
        slots.sort_unstable();
        Ok(Self { slots })
    }

    /// A plan from explicit slots (deduplicated and sorted).
    pub fn from_slots(mut slots: Vec<(usize, usize)>) -> Self {
        slots.sort_unstable();
        slots.dedup();
        Self { slots }
    }

    pub fn slots(&self) -> &[(usize, usize)] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}
