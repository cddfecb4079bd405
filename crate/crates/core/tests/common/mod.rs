//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use fome::preprocess::PatchGrid;
use rand::RngCore;
use fome::signal::{generate_synthetic, Gaussian, Recording, SyntheticSpec, ToneComponent};

pub const RATE: f64 = 250.0;

/// Lays a recording out as a `C × P × L` grid; the length must divide evenly.
pub fn grid_of(r: &Recording, patch_len: usize) -> PatchGrid {
    let p = r.samples() / patch_len;
    let values: Vec<f64> = r.data().iter().flat_map(|ch| ch[..p * patch_len].iter().copied()).collect();
    PatchGrid::new(r.channels(), p, patch_len, r.sample_rate_hz(), values).unwrap()
}

/// Sum of `(frequency, amplitude)` tones with random phases on every channel, plus noise.
pub fn tone_grid(
    channels: usize,
    patches: usize,
    patch_len: usize,
    tones: &[(f64, f64)],
    noise_std: f64,
    rng: &mut Gaussian,
) -> PatchGrid {
    let components = (0..channels)
        .flat_map(|c| tones.iter().map(move |&(f, a)| (c, f, a)))
        .map(|(channel, frequency_hz, amplitude)| ToneComponent {
            channel,
            frequency_hz,
            amplitude,
            phase_rad: 2.0 * PI * rng.uniform(),
        })
        .collect();
    let spec = SyntheticSpec {
        channels,
        components,
        noise_std,
        duration_s: (patches * patch_len) as f64 / RATE,
        sample_rate_hz: RATE,
        seed: rng.rng().next_u64(),
    };
    grid_of(&generate_synthetic(&spec).unwrap(), patch_len)
}

/// Relative difference with the larger magnitude as scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
