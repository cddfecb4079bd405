//! Fourier analysis of patches: discrete transform, one-sided power spectral
//! density and log band powers.
//!
//! For a patch `x` of `L` samples taken at `rate` Hz, lasting `T = L / rate`
//! seconds, the density at bin `k` (frequency `k · rate / L`) is
//! `|X_k|² / T`, and the power of a band `[f_lo, f_hi)` is
//! `log10(Σ P(k) + 1)` over the bins it contains.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::preprocess::PatchGrid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// `X_k = Σ_n x_n · exp(−2πi·kn/L)` for any length, including non-powers of two.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !buf.is_empty() {
        plan(buf.len(), false).process(&mut buf);
    }
    buf
}

pub fn dft_complex(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    if !buf.is_empty() {
        plan(buf.len(), false).process(&mut buf);
    }
    buf
}

/// Inverse of [`dft`], including the `1/L` factor.
pub fn idft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    if buf.is_empty() {
        return buf;
    }
    plan(buf.len(), true).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Window applied to a patch before the transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    /// Rectangular: the raw patch.
    #[default]
    None,
    /// Periodic Hann window.
    Hann,
}

impl Taper {
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            Taper::None => x.to_vec(),
            Taper::Hann => {
                let n = x.len() as f64;
                x.iter()
                    .enumerate()
                    .map(|(i, v)| v * 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos()))
                    .collect()
            }
        }
    }
}

/// One-sided density `|X_k|² / T` for bins `0..=L/2`, `T = L / rate_hz` seconds.
pub fn psd(patch: &[f64], rate_hz: f64) -> Result<Vec<f64>> {
    if patch.len() < 2 {
        return Err(Error::Empty("PSD needs at least two samples".into()));
    }
    if !(rate_hz > 0.0) {
        return Err(config_err(format!("bad rate {rate_hz}")));
    }
    let duration = patch.len() as f64 / rate_hz;
    let spectrum = dft(patch);
    Ok(spectrum[..=patch.len() / 2]
        .iter()
        .map(|x| x.norm_sqr() / duration)
        .collect())
}

/// Frequency of each [`psd`] bin.
pub fn bin_frequencies(len: usize, rate_hz: f64) -> Vec<f64> {
    (0..=len / 2).map(|k| k as f64 * rate_hz / len as f64).collect()
}

/// Ordered frequency bands, `[lo, hi)` except the last which also holds `hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandScheme {
    edges: Vec<(f64, f64)>,
}

pub const BAND_NAMES: [&str; 8] = ["delta", "theta", "alpha", "beta", "gamma1", "gamma2", "gamma3", "gamma4"];

impl Default for BandScheme {
    /// δ 1–4, θ 4–8, α 8–13, β 13–30, γ1 30–50, γ2 50–70, γ3 70–90, γ4 90–100 Hz.
    fn default() -> Self {
        Self {
            edges: vec![
                (1.0, 4.0),
                (4.0, 8.0),
                (8.0, 13.0),
                (13.0, 30.0),
                (30.0, 50.0),
                (50.0, 70.0),
                (70.0, 90.0),
                (90.0, 100.0),
            ],
        }
    }
}

impl BandScheme {
    pub fn new(edges: Vec<(f64, f64)>) -> Result<Self> {
        if edges.is_empty() {
            return Err(config_err("band scheme needs at least one band"));
        }
        for (i, &(lo, hi)) in edges.iter().enumerate() {
            if !(lo >= 0.0 && lo < hi) {
                return Err(config_err(format!("band {i} ({lo}, {hi}) is empty")));
            }
            if i > 0 && lo < edges[i - 1].1 {
                return Err(config_err(format!("band {i} overlaps band {}", i - 1)));
            }
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[(f64, f64)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// For each band, the `psd` bins it contains.
    pub fn bin_ranges(&self, len: usize, rate_hz: f64) -> Result<Vec<std::ops::Range<usize>>> {
        let nyquist = rate_hz / 2.0;
        let top = self.edges.last().map_or(0.0, |e| e.1);
        if top > nyquist {
            return Err(config_err(format!("band edge {top} Hz above Nyquist {nyquist} Hz")));
        }
        let freqs = bin_frequencies(len, rate_hz);
        let tol = 1e-9 * rate_hz;
        let last = self.edges.len() - 1;
        Ok(self
            .edges
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                let start = freqs.partition_point(|&f| f < lo - tol);
                let end = if i == last {
                    freqs.partition_point(|&f| f <= hi + tol)
                } else {
                    freqs.partition_point(|&f| f < hi - tol)
                };
                start..end.max(start)
            })
            .collect())
    }
}

/// `C × P × bands` log10 band powers.
#[derive(Clone, Debug, PartialEq)]
pub struct BandPowerTensor {
    channels: usize,
    patches: usize,
    scheme: BandScheme,
    values: Vec<f64>,
}

impl BandPowerTensor {
    pub fn new(channels: usize, patches: usize, scheme: BandScheme, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * patches * scheme.len() {
            return Err(Error::Shape {
                op: "BandPowerTensor::new",
                lhs: vec![channels, patches, scheme.len()],
                rhs: vec![values.len()],
            });
        }
        Ok(Self {
            channels,
            patches,
            scheme,
            values,
        })
    }

    pub fn zeros(channels: usize, patches: usize, scheme: BandScheme) -> Self {
        let n = channels * patches * scheme.len();
        Self {
            channels,
            patches,
            scheme,
            values: vec![0.0; n],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn bands(&self) -> usize {
        self.scheme.len()
    }

    pub fn scheme(&self) -> &BandScheme {
        &self.scheme
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, channel: usize, patch: usize) -> &[f64] {
        let b = self.bands();
        let start = (channel * self.patches + patch) * b;
        &self.values[start..start + b]
    }
}

/// Log band powers of a single patch.
pub fn patch_band_powers(patch: &[f64], rate_hz: f64, scheme: &BandScheme, taper: Taper) -> Result<Vec<f64>> {
    let ranges = scheme.bin_ranges(patch.len(), rate_hz)?;
    let density = psd(&taper.apply(patch), rate_hz)?;
    Ok(ranges
        .into_iter()
        .map(|r| (density[r].iter().sum::<f64>() + 1.0).log10())
        .collect())
}

pub fn band_powers(grid: &PatchGrid, scheme: &BandScheme) -> Result<BandPowerTensor> {
    band_powers_with(grid, scheme, Taper::None)
}

pub fn band_powers_with(grid: &PatchGrid, scheme: &BandScheme, taper: Taper) -> Result<BandPowerTensor> {
    let mut values = Vec::with_capacity(grid.channels() * grid.patches() * scheme.len());
    for c in 0..grid.channels() {
        for p in 0..grid.patches() {
            values.extend(patch_band_powers(grid.patch(c, p), grid.source_rate_hz(), scheme, taper)?);
        }
    }
    BandPowerTensor::new(grid.channels(), grid.patches(), scheme.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_is_flat() {
        let x = dft(&[1.0, 0.0, 0.0, 0.0]);
        assert!(x.iter().all(|v| (*v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn constant_concentrates_in_dc() {
        let x = dft(&[2.5; 8]);
        assert!((x[0].re - 20.0).abs() < 1e-12);
        assert!(x[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn shared_edges_go_to_upper_band() {
        let ranges = BandScheme::default().bin_ranges(1500, 250.0).unwrap();
        // 1/6 Hz bins: 4 Hz is bin 24, owned by theta.
        assert_eq!(ranges[0], 6..24);
        assert_eq!(ranges[1].start, 24);
        // 100 Hz (bin 600) belongs to the final band.
        assert_eq!(ranges[7], 540..601);
    }

    #[test]
    fn band_above_nyquist_rejected() {
        let err = BandScheme::default().bin_ranges(100, 150.0).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }

    #[test]
    fn overlapping_scheme_rejected() {
        assert!(BandScheme::new(vec![(1.0, 5.0), (4.0, 8.0)]).is_err());
    }

    #[test]
    fn zero_patch_bands_are_zero() {
        let g = PatchGrid::zeros(2, 3, 1500, 250.0).unwrap();
        let b = band_powers(&g, &BandScheme::default()).unwrap();
        assert!(b.values().iter().all(|&v| v == 0.0));
        assert_eq!(b.values().len(), 2 * 3 * 8);
    }
}
