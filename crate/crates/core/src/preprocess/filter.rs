//! IIR filtering with cascaded second-order sections.

use std::f64::consts::PI;

use crate::error::{config_err, Result};
use crate::signal::Recording;

/// Normalized biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_unnormalized(b: [f64; 3], a: [f64; 3]) -> Self {
        let a0 = a[0];
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a[1] / a0, a[2] / a0],
        }
    }

    /// Second-order notch centred at `f0` with quality factor `q`.
    pub fn notch(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_unnormalized([1.0, -2.0 * cos, 1.0], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    pub fn lowpass(fc: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let k = (1.0 - cos) / 2.0;
        Self::from_unnormalized([k, 1.0 - cos, k], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    pub fn highpass(fc: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * fc / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let k = (1.0 + cos) / 2.0;
        Self::from_unnormalized([k, -(1.0 + cos), k], [1.0 + alpha, -2.0 * cos, 1.0 - alpha])
    }

    /// Magnitude response at frequency `f`.
    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = num_complex::Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        (num / den).norm()
    }
}

/// A causal cascade of biquads (transposed direct form II).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SosFilter {
    sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Butterworth low-pass of even `order`, one biquad per conjugate pole pair.
    pub fn butterworth_lowpass(order: usize, fc: f64, fs: f64) -> Result<Self> {
        Ok(Self::new(
            butterworth_qs(order)?
                .into_iter()
                .map(|q| Biquad::lowpass(fc, q, fs))
                .collect(),
        ))
    }

    pub fn butterworth_highpass(order: usize, fc: f64, fs: f64) -> Result<Self> {
        Ok(Self::new(
            butterworth_qs(order)?
                .into_iter()
                .map(|q| Biquad::highpass(fc, q, fs))
                .collect(),
        ))
    }

    pub fn then(mut self, other: SosFilter) -> Self {
        self.sections.extend(other.sections);
        self
    }

    pub fn gain_at(&self, f: f64, fs: f64) -> f64 {
        self.sections.iter().map(|s| s.gain_at(f, fs)).product()
    }

    /// Filters `x` from zero initial state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }

    pub fn apply_recording(&self, r: &Recording) -> Result<Recording> {
        let data = r.data().iter().map(|row| self.apply(row)).collect();
        r.map_data(r.sample_rate_hz(), data)
    }
}

fn butterworth_qs(order: usize) -> Result<Vec<f64>> {
    if order == 0 || order % 2 != 0 {
        return Err(config_err(format!("Butterworth order must be even and positive, got {order}")));
    }
    Ok((0..order / 2)
        .map(|k| {
            let theta = PI * (2 * k + 1) as f64 / (2 * order) as f64;
            1.0 / (2.0 * theta.cos())
        })
        .collect())
}

/// Removes a narrow band around `f0` (mains interference).
pub fn notch_filter(r: &Recording, f0: f64, q: f64) -> Result<Recording> {
    let fs = r.sample_rate_hz();
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(config_err(format!("notch {f0} Hz must lie in (0, {}) Hz", fs / 2.0)));
    }
    if !(q.is_finite() && q > 0.0) {
        return Err(config_err(format!("notch quality factor must be positive, got {q}")));
    }
    SosFilter::new(vec![Biquad::notch(f0, q, fs)]).apply_recording(r)
}

/// Butterworth band-pass built from a high-pass and a low-pass of `order_per_edge` each.
pub fn bandpass_design(lo: f64, hi: f64, fs: f64, order_per_edge: usize) -> Result<SosFilter> {
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(config_err(format!(
            "band ({lo}, {hi}) Hz must satisfy 0 < lo < hi < {}",
            fs / 2.0
        )));
    }
    Ok(SosFilter::butterworth_highpass(order_per_edge, lo, fs)?
        .then(SosFilter::butterworth_lowpass(order_per_edge, hi, fs)?))
}

/// Fourth-order Butterworth band-pass (second order per edge).
pub fn bandpass_filter(r: &Recording, lo: f64, hi: f64) -> Result<Recording> {
    bandpass_design(lo, hi, r.sample_rate_hz(), 2)?.apply_recording(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notch_response_has_a_zero_at_centre() {
        let f = Biquad::notch(50.0, 35.0, 1000.0);
        assert!(f.gain_at(50.0, 1000.0) < 1e-10);
        assert!((f.gain_at(10.0, 1000.0) - 1.0).abs() < 1e-3);
        assert!((f.gain_at(0.0, 1000.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn butterworth_is_3db_at_cutoff() {
        let lp = SosFilter::butterworth_lowpass(4, 40.0, 250.0).unwrap();
        let hp = SosFilter::butterworth_highpass(2, 1.0, 250.0).unwrap();
        let half_power = std::f64::consts::FRAC_1_SQRT_2;
        assert!((lp.gain_at(40.0, 250.0) - half_power).abs() < 1e-9);
        assert!((hp.gain_at(1.0, 250.0) - half_power).abs() < 1e-9);
    }

    #[test]
    fn odd_order_rejected() {
        assert_eq!(
            SosFilter::butterworth_lowpass(3, 10.0, 100.0).unwrap_err().kind(),
            "ConfigError"
        );
    }

    #[test]
    fn invalid_band_rejected() {
        let r = Recording::zeros("z", 200.0, 1, 10).unwrap();
        assert!(bandpass_filter(&r, 0.5, 100.5).is_err());
        assert!(bandpass_filter(&r, 10.0, 5.0).is_err());
        assert!(notch_filter(&r, 100.0, 35.0).is_err());
    }
}
