//! Signal conditioning ahead of the model: mains notch, band-pass, resampling
//! to a common rate, detrending, windowing, exponential moving
//! standardization and patching.
//!
//! [`preprocess_pipeline`] composes the stages in that order. Each stage is
//! also exposed on its own.

mod filter;
mod patch;
mod resample;
mod standardize;

pub use filter::{bandpass_design, bandpass_filter, notch_filter, Biquad, SosFilter};
pub use patch::PatchGrid;
pub use resample::{design_polyphase_lowpass, resample, resample_channel, Ratio};
pub use standardize::{standardize_ema, standardize_series, StandardizerState};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::signal::Recording;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Mains frequency, 50 or 60 Hz.
    pub notch_hz: f64,
    pub notch_q: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Butterworth order of each band edge; the band-pass has twice this order.
    pub band_order_per_edge: usize,
    pub target_rate_hz: f64,
    pub window_len_samples: usize,
    pub patch_len: usize,
    pub ema_alpha: f64,
    pub eps: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            notch_hz: 50.0,
            notch_q: 35.0,
            band_lo_hz: 0.5,
            band_hi_hz: 100.5,
            band_order_per_edge: 2,
            target_rate_hz: 250.0,
            window_len_samples: 1500,
            patch_len: 1500,
            ema_alpha: 0.05,
            eps: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.notch_hz != 50.0 && self.notch_hz != 60.0 {
            return Err(config_err(format!("notch must be 50 or 60 Hz, got {}", self.notch_hz)));
        }
        if !(self.band_lo_hz > 0.0 && self.band_lo_hz < self.band_hi_hz) {
            return Err(config_err(format!(
                "band ({}, {}) is empty",
                self.band_lo_hz, self.band_hi_hz
            )));
        }
        if self.window_len_samples < 2 {
            return Err(config_err("window must hold at least two samples"));
        }
        if self.patch_len == 0 || self.window_len_samples % self.patch_len != 0 {
            return Err(config_err(format!(
                "patch length {} must divide window length {}",
                self.patch_len, self.window_len_samples
            )));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(config_err(format!("ema_alpha {} outside (0, 1]", self.ema_alpha)));
        }
        if !(self.eps > 0.0) {
            return Err(config_err("eps must be positive"));
        }
        if !(self.target_rate_hz > 0.0) {
            return Err(config_err("target rate must be positive"));
        }
        Ok(())
    }
}

/// Least-squares line removal, per channel.
pub fn detrend(r: &Recording) -> Result<Recording> {
    if r.samples() < 2 {
        return Err(Error::Empty("detrend needs at least two samples".into()));
    }
    let data = r.data().iter().map(|row| detrend_series(row)).collect();
    r.map_data(r.sample_rate_hz(), data)
}

fn detrend_series(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let centre = (n - 1.0) / 2.0;
    let sxx: f64 = (0..x.len()).map(|t| (t as f64 - centre).powi(2)).sum();
    let mut y = x.to_vec();
    // A second pass removes what rounding left behind in the first.
    for _ in 0..2 {
        let mean = y.iter().sum::<f64>() / n;
        let sxy: f64 = y
            .iter()
            .enumerate()
            .map(|(t, v)| (t as f64 - centre) * (v - mean))
            .sum();
        let slope = sxy / sxx;
        for (t, v) in y.iter_mut().enumerate() {
            *v -= mean + slope * (t as f64 - centre);
        }
    }
    y
}

/// Splits into consecutive windows of `len` samples; a shorter tail is dropped.
pub fn windows(r: &Recording, len: usize) -> Result<Vec<Recording>> {
    if len == 0 {
        return Err(config_err("window length must be positive"));
    }
    (0..r.samples() / len)
        .map(|w| {
            let data = r.data().iter().map(|row| row[w * len..(w + 1) * len].to_vec()).collect();
            r.map_data(r.sample_rate_hz(), data)
        })
        .collect()
}

fn patch_windows(windows: &[Recording], patch_len: usize, rate: f64) -> Result<PatchGrid> {
    let Some(first) = windows.first() else {
        return Err(Error::Empty("no complete window".into()));
    };
    let per_window = first.samples() / patch_len;
    let channels = first.channels();
    let patches = windows.len() * per_window;
    let mut values = Vec::with_capacity(channels * patches * patch_len);
    for c in 0..channels {
        for w in windows {
            values.extend_from_slice(&w.channel(c)[..per_window * patch_len]);
        }
    }
    PatchGrid::new(channels, patches, patch_len, rate, values)
}

/// Windows the signal and cuts each window into patches, preserving time order.
///
/// `P = floor(T / window) · (window / L)`; with the window equal to the patch
/// this is `floor(T / L)`.
pub fn window_and_patch(r: &Recording, cfg: &PreprocessConfig, patch_len: usize) -> Result<PatchGrid> {
    if patch_len == 0 || cfg.window_len_samples % patch_len != 0 {
        return Err(config_err(format!(
            "patch length {patch_len} must divide window length {}",
            cfg.window_len_samples
        )));
    }
    if r.samples() < patch_len || r.samples() < cfg.window_len_samples {
        return Err(Error::Empty(format!(
            "{} samples cannot fill a {}-sample window of {patch_len}-sample patches",
            r.samples(),
            cfg.window_len_samples
        )));
    }
    patch_windows(&windows(r, cfg.window_len_samples)?, patch_len, r.sample_rate_hz())
}

/// notch → band-pass → resample → detrend → window → standardize each window → patch.
pub fn preprocess_pipeline(r: &Recording, cfg: &PreprocessConfig) -> Result<PatchGrid> {
    cfg.validate()?;
    let r = notch_filter(r, cfg.notch_hz, cfg.notch_q)?;
    let r = bandpass_design(cfg.band_lo_hz, cfg.band_hi_hz, r.sample_rate_hz(), cfg.band_order_per_edge)?
        .apply_recording(&r)?;
    let r = resample(&r, cfg.target_rate_hz)?;
    let r = detrend(&r)?;
    if r.samples() < cfg.window_len_samples {
        return Err(Error::Empty(format!(
            "{} samples after resampling, window needs {}",
            r.samples(),
            cfg.window_len_samples
        )));
    }
    let standardized = windows(&r, cfg.window_len_samples)?
        .iter()
        .map(|w| standardize_ema(w, cfg.ema_alpha, cfg.eps).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    patch_windows(&standardized, cfg.patch_len, r.sample_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detrend_removes_exact_line() {
        let x: Vec<f64> = (0..500).map(|t| 0.37 * t as f64 - 12.0).collect();
        let r = Recording::new("l", 250.0, vec![x, vec![5.5; 500]]).unwrap();
        let d = detrend(&r).unwrap();
        for row in d.data() {
            assert!(row.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn detrend_needs_two_samples() {
        let r = Recording::new("s", 250.0, vec![vec![1.0]]).unwrap();
        assert_eq!(detrend(&r).unwrap_err().kind(), "EmptyError");
    }

    #[test]
    fn patch_counts() {
        let cfg = PreprocessConfig::default();
        for (t, p) in [(1500, 1), (22_500, 15), (1600, 1)] {
            let r = Recording::zeros("z", 250.0, 2, t).unwrap();
            assert_eq!(window_and_patch(&r, &cfg, 1500).unwrap().patches(), p);
        }
        let r = Recording::zeros("z", 250.0, 2, 1499).unwrap();
        assert_eq!(window_and_patch(&r, &cfg, 1500).unwrap_err().kind(), "EmptyError");
    }

    #[test]
    fn patches_keep_time_order() {
        let cfg = PreprocessConfig {
            window_len_samples: 4,
            patch_len: 2,
            ..Default::default()
        };
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let g = window_and_patch(&Recording::new("o", 250.0, vec![x]).unwrap(), &cfg, 2).unwrap();
        assert_eq!(g.patches(), 4);
        assert_eq!(g.values(), (0..8).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn config_rejects_other_mains() {
        let cfg = PreprocessConfig {
            notch_hz: 55.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
