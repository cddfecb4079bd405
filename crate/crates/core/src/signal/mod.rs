//! Multi-channel recordings, their on-disk formats and a seeded generator of
//! synthetic EEG-like test signals.

mod io;
mod synth;

pub use io::{read_recording, read_recording_from, write_recording, write_recording_to, RecordingFormat};
pub use synth::{generate_synthetic, Gaussian, SyntheticSpec, ToneComponent};

use crate::error::{Error, Result};

/// A raw `C × T` signal sampled at a common rate.
///
/// Samples are held in `f64`. The binary file format stores `f32`, so a
/// recording survives a write/read cycle bit-exactly whenever every sample is
/// representable as `f32` (which is always the case for recordings that were
/// read from disk or produced by [`generate_synthetic`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    id: String,
    sample_rate_hz: f64,
    data: Vec<Vec<f64>>,
    channel_labels: Option<Vec<String>>,
}

impl Recording {
    pub fn new(id: impl Into<String>, sample_rate_hz: f64, data: Vec<Vec<f64>>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidData(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if data.is_empty() {
            return Err(Error::InvalidData("recording needs at least one channel".into()));
        }
        let t = data[0].len();
        if t == 0 {
            return Err(Error::InvalidData("recording needs at least one sample".into()));
        }
        for (c, row) in data.iter().enumerate() {
            if row.len() != t {
                return Err(Error::InvalidData(format!(
                    "channel {c} has {} samples, channel 0 has {t}",
                    row.len()
                )));
            }
        }
        check_finite(&data)?;
        Ok(Self {
            id: id.into(),
            sample_rate_hz,
            data,
            channel_labels: None,
        })
    }

    /// A recording of `channels × samples` zeros.
    pub fn zeros(id: impl Into<String>, sample_rate_hz: f64, channels: usize, samples: usize) -> Result<Self> {
        Self::new(id, sample_rate_hz, vec![vec![0.0; samples]; channels])
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.channels() {
            return Err(Error::InvalidData(format!(
                "{} labels for {} channels",
                labels.len(),
                self.channels()
            )));
        }
        self.channel_labels = Some(labels);
        Ok(self)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn samples(&self) -> usize {
        self.data[0].len()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn channel_labels(&self) -> Option<&[String]> {
        self.channel_labels.as_deref()
    }

    pub fn into_data(self) -> Vec<Vec<f64>> {
        self.data
    }

    /// Builds a recording with the same metadata and new sample data.
    ///
    /// Used by the per-channel processing stages, which may change `T` and
    /// the rate but never the channel layout.
    pub fn map_data(&self, sample_rate_hz: f64, data: Vec<Vec<f64>>) -> Result<Self> {
        let mut out = Recording::new(self.id.clone(), sample_rate_hz, data)?;
        if out.channels() != self.channels() {
            return Err(Error::InvalidData("channel count changed".into()));
        }
        out.channel_labels = self.channel_labels.clone();
        Ok(out)
    }

    /// Reorders channels so that output channel `i` is input channel `perm[i]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.channels() {
            return Err(Error::Index(format!(
                "permutation of length {} for {} channels",
                perm.len(),
                self.channels()
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Index(format!("{perm:?} is not a permutation")));
            }
        }
        let data = perm.iter().map(|&p| self.data[p].clone()).collect();
        let labels = self
            .channel_labels
            .as_ref()
            .map(|l| perm.iter().map(|&p| l[p].clone()).collect());
        Ok(Self {
            id: self.id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            data,
            channel_labels: labels,
        })
    }
}

pub(crate) fn check_finite(data: &[Vec<f64>]) -> Result<()> {
    for (channel, row) in data.iter().enumerate() {
        if let Some(index) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data { channel, index });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_channels() {
        let err = Recording::new("r", 250.0, vec![vec![0.0; 3], vec![0.0; 2]]).unwrap_err();
        assert_eq!(err.kind(), "DataError");
    }

    #[test]
    fn reports_position_of_nan() {
        let err = Recording::new("r", 250.0, vec![vec![0.0; 3], vec![0.0, 0.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::Data { channel: 1, index: 2 }));
    }

    #[test]
    fn permutation_must_be_bijective() {
        let r = Recording::zeros("r", 100.0, 3, 4).unwrap();
        assert!(r.permute_channels(&[0, 0, 1]).is_err());
        assert!(r.permute_channels(&[2, 0, 1]).is_ok());
    }
}
