use std::f64::consts::PI;

use fome::preprocess::PatchGrid;
use fome::signal::Gaussian;
use fome::spectral::{band_powers, dft, idft, patch_band_powers, psd, BandScheme, Taper};
use num_complex::Complex64;
use proptest::prelude::*;

fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| Complex64::from_polar(v, -2.0 * PI * ((k * j) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = Gaussian::new(seed);
    (0..len).map(|_| rng.standard()).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn tones(fs: &[f64], len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| fs.iter().map(|f| (2.0 * PI * f * t as f64 / 250.0).sin()).sum())
        .collect()
}

fn top_two(values: &[f64]) -> [usize; 2] {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut top = [idx[0], idx[1]];
    top.sort();
    top
}

#[test]
fn matches_naive_transform_on_awkward_lengths() {
    for (i, len) in [1usize, 2, 3, 7, 100, 1500].into_iter().enumerate() {
        let x = random(len, i as u64);
        let fast = dft(&x);
        let slow = naive_dft(&x);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8 * norm(&x).max(1.0), "L={len}: {err}");
    }
}

#[test]
fn constant_input_concentrates_in_dc() {
    let x = [2.5; 8];
    let spectrum = dft(&x);
    assert!((spectrum[0].re - 20.0).abs() < 1e-12);
    assert!(spectrum[1..].iter().all(|v| v.norm() < 1e-12));
}

#[test]
fn exact_bin_tone_is_a_single_line() {
    let x = tones(&[25.0], 1500);
    let p = psd(&x, 250.0).unwrap();
    let peak = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    assert_eq!(peak, 150);
    assert!(p.iter().enumerate().all(|(k, &v)| k == 150 || v < 1e-6 * p[150]));
}

#[test]
fn parseval_in_density_form() {
    let x = random(1500, 3);
    let duration = 1500.0 / 250.0;
    let full: f64 = dft(&x).iter().map(|v| v.norm_sqr() / duration).sum();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let expected = 1500.0 / duration * energy;
    assert!((full - expected).abs() < 1e-9 * expected);
}

#[test]
fn zero_patch_has_zero_density() {
    assert!(psd(&[0.0; 64], 250.0).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn alpha_tone_wins_alpha_band() {
    let b = patch_band_powers(&tones(&[10.0], 1500), 250.0, &BandScheme::default(), Taper::None).unwrap();
    let best = (0..8).max_by(|&i, &j| b[i].total_cmp(&b[j])).unwrap();
    assert_eq!(best, 2);
    assert!(b.iter().enumerate().all(|(i, &v)| i == 2 || v < b[2]));
}

#[test]
fn beta_and_gamma2_lead_for_two_tones() {
    let b = patch_band_powers(&tones(&[25.0, 60.0], 1500), 250.0, &BandScheme::default(), Taper::None).unwrap();
    assert_eq!(top_two(&b), [3, 5]);
}

#[test]
fn band_tensor_is_nonnegative_and_indexed_by_slot() {
    let mut rng = Gaussian::new(5);
    let values: Vec<f64> = (0..3 * 2 * 1500).map(|_| rng.normal(0.0, 4.0)).collect();
    let grid = PatchGrid::new(3, 2, 1500, 250.0, values).unwrap();
    let bands = band_powers(&grid, &BandScheme::default()).unwrap();
    assert_eq!((bands.channels(), bands.patches(), bands.bands()), (3, 2, 8));
    assert!(bands.values().iter().all(|&v| v.is_finite() && v >= 0.0));
    let direct = patch_band_powers(grid.patch(2, 1), 250.0, &BandScheme::default(), Taper::None).unwrap();
    assert_eq!(bands.at(2, 1), &direct[..]);
}

#[test]
fn hann_taper_is_opt_in() {
    let x = tones(&[10.3], 1500);
    let raw = patch_band_powers(&x, 250.0, &BandScheme::default(), Taper::None).unwrap();
    let tapered = patch_band_powers(&x, 250.0, &BandScheme::default(), Taper::Hann).unwrap();
    assert_ne!(raw, tapered);
    assert!(tapered[4..].iter().zip(&raw[4..]).all(|(t, r)| t < r));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_recovers_input(len in prop::sample::select(vec![2usize, 3, 100, 1024, 1500]), seed in any::<u64>()) {
        let x = random(len, seed);
        let back = idft(&dft(&x));
        let err = back.iter().zip(&x).map(|(b, &v)| (b - v).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9 * norm(&x));
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = dft(&x).iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((spectral - len as f64 * energy).abs() <= 1e-9 * spectral);
    }

    #[test]
    fn density_scales_quadratically(seed in any::<u64>(), s in -20.0f64..20.0) {
        let x = random(250, seed);
        let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
        let (p, q) = (psd(&x, 250.0).unwrap(), psd(&scaled, 250.0).unwrap());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!(*a >= 0.0);
            prop_assert!((b - s * s * a).abs() <= 1e-9 * (s * s * a).max(1e-300) + 1e-12);
        }
    }

    #[test]
    fn band_powers_ignore_time_reversal(seed in any::<u64>()) {
        let x = random(1500, seed);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let scheme = BandScheme::default();
        let a = patch_band_powers(&x, 250.0, &scheme, Taper::None).unwrap();
        let b = patch_band_powers(&rev, 250.0, &scheme, Taper::None).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
        }
    }

    #[test]
    fn log_bookkeeping_is_lossless(seed in any::<u64>()) {
        let x = random(1500, seed);
        let scheme = BandScheme::default();
        let b = patch_band_powers(&x, 250.0, &scheme, Taper::None).unwrap();
        let density = psd(&x, 250.0).unwrap();
        let direct: f64 = scheme.bin_ranges(1500, 250.0).unwrap().into_iter().map(|r| density[r].iter().sum::<f64>()).sum();
        let recovered: f64 = b.iter().map(|v| 10f64.powf(*v) - 1.0).sum();
        prop_assert!((recovered - direct).abs() <= 1e-9 * direct);
    }
}
