//! Rational-ratio polyphase resampling.

use std::f64::consts::PI;

use crate::error::{config_err, Result};
use crate::signal::Recording;

/// Taps on each side of the centre tap, per polyphase branch.
const HALF_TAPS_PER_PHASE: usize = 32;
const KAISER_BETA: f64 = 8.6;
const MAX_DENOMINATOR: usize = 100_000;

/// `target / original = up / down` in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub up: usize,
    pub down: usize,
}

impl Ratio {
    /// Smallest-denominator fraction within `1e-9` relative of `target / original`.
    pub fn approximate(original: f64, target: f64) -> Result<Self> {
        if !(original > 0.0 && target > 0.0 && original.is_finite() && target.is_finite()) {
            return Err(config_err(format!("bad rates {original} -> {target}")));
        }
        let r = target / original;
        for down in 1..=MAX_DENOMINATOR {
            let up = (r * down as f64).round();
            if up >= 1.0 && ((up / down as f64) - r).abs() <= 1e-9 * r {
                return Ok(Self {
                    up: up as usize,
                    down,
                });
            }
        }
        Err(config_err(format!(
            "no rational ratio for {original} -> {target} Hz with denominator <= {MAX_DENOMINATOR}"
        )))
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass for the upsampled rate, normalized to DC gain `up`.
pub fn design_polyphase_lowpass(ratio: Ratio) -> Vec<f64> {
    let half = HALF_TAPS_PER_PHASE * ratio.up;
    let n = 2 * half + 1;
    // Cutoff in cycles per upsampled sample.
    let fc = 0.5 / ratio.up.max(ratio.down) as f64;
    let i0_beta = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as f64 - half as f64;
            let x = 2.0 * fc * m;
            let sinc = if m == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
            let r = m / half as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            2.0 * fc * sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    let gain = ratio.up as f64 / sum;
    h.iter_mut().for_each(|v| *v *= gain);
    h
}

/// Odd reflection about the end points keeps lines and slow trends continuous
/// across the boundary.
fn extended(x: &[f64], j: isize) -> f64 {
    let n = x.len() as isize;
    if j < 0 {
        let k = (-j).min(n - 1) as usize;
        2.0 * x[0] - x[k]
    } else if j >= n {
        let k = (j - (n - 1)).min(n - 1) as usize;
        2.0 * x[(n - 1) as usize] - x[(n - 1) as usize - k]
    } else {
        x[j as usize]
    }
}

pub fn resample_channel(x: &[f64], ratio: Ratio, taps: &[f64]) -> Vec<f64> {
    let (up, down) = (ratio.up as isize, ratio.down as isize);
    let half = (taps.len() / 2) as isize;
    let out_len = ((x.len() * ratio.up) as f64 / ratio.down as f64).round() as usize;
    (0..out_len as isize)
        .map(|m| {
            let centre = m * down;
            let j_lo = (centre - half).div_euclid(up) + isize::from((centre - half).rem_euclid(up) != 0);
            let j_hi = (centre + half).div_euclid(up);
            (j_lo..=j_hi)
                .map(|j| taps[(centre - j * up + half) as usize] * extended(x, j))
                .sum()
        })
        .collect()
}

/// Downsamples every channel to `target_hz`. Equal rates return the input unchanged.
pub fn resample(r: &Recording, target_hz: f64) -> Result<Recording> {
    let original = r.sample_rate_hz();
    if target_hz == original {
        return Ok(r.clone());
    }
    let ratio = Ratio::approximate(original, target_hz)?;
    if ratio.up > ratio.down {
        return Err(config_err(format!(
            "upsampling {original} -> {target_hz} Hz is not supported"
        )));
    }
    let taps = design_polyphase_lowpass(ratio);
    let data = r
        .data()
        .iter()
        .map(|row| resample_channel(row, ratio, &taps))
        .collect();
    r.map_data(target_hz, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_reduce() {
        assert_eq!(Ratio::approximate(1000.0, 250.0).unwrap(), Ratio { up: 1, down: 4 });
        assert_eq!(Ratio::approximate(512.0, 250.0).unwrap(), Ratio { up: 125, down: 256 });
        assert_eq!(Ratio::approximate(500.0, 250.0).unwrap(), Ratio { up: 1, down: 2 });
    }

    #[test]
    fn i0_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(8.6) from tabulated values.
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(8.6) / 750.461_159_563_165_9 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn length_follows_ratio() {
        let r = Recording::zeros("z", 1000.0, 2, 4000).unwrap();
        assert_eq!(resample(&r, 250.0).unwrap().samples(), 1000);
        let r = Recording::zeros("z", 512.0, 1, 3072).unwrap();
        assert_eq!(resample(&r, 250.0).unwrap().samples(), 1500);
    }

    #[test]
    fn identity_is_bit_exact() {
        let r = Recording::new("x", 250.0, vec![vec![0.1, -3.7, 2.2]]).unwrap();
        assert_eq!(resample(&r, 250.0).unwrap(), r);
    }

    #[test]
    fn upsampling_rejected() {
        let r = Recording::zeros("z", 100.0, 1, 100).unwrap();
        assert_eq!(resample(&r, 250.0).unwrap_err().kind(), "ConfigError");
    }

    #[test]
    fn constant_survives() {
        let r = Recording::new("c", 1000.0, vec![vec![3.0; 400]]).unwrap();
        let out = resample(&r, 250.0).unwrap();
        assert!(out.channel(0).iter().all(|v| (v - 3.0).abs() < 1e-9));
    }
}
