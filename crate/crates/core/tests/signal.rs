use std::f64::consts::PI;

use fome::signal::{
    generate_synthetic, read_recording, read_recording_from, write_recording, write_recording_to, Gaussian, Recording,
    RecordingFormat, SyntheticSpec, ToneComponent,
};
use fome::spectral::psd;
use proptest::prelude::*;

fn f32_recording(c: usize, t: usize, rate: f64, seed: u64) -> Recording {
    let mut rng = Gaussian::new(seed);
    let data = (0..c)
        .map(|_| (0..t).map(|_| rng.normal(0.0, 50.0) as f32 as f64).collect())
        .collect();
    Recording::new("r", rate, data).unwrap()
}

fn round_trip(r: &Recording, format: RecordingFormat) -> Recording {
    let mut bytes = Vec::new();
    write_recording_to(r, &mut bytes, format).unwrap();
    read_recording_from(&bytes[..], format, r.id()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_round_trip_is_bit_exact(
        data in (1usize..6, 1usize..200).prop_flat_map(|(c, t)| {
            prop::collection::vec(prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), t), c)
        }),
        rate in 1.0f64..5000.0,
    ) {
        let data: Vec<Vec<f64>> = data.into_iter().map(|ch| ch.into_iter().map(f64::from).collect()).collect();
        let r = Recording::new("r", rate, data).unwrap();
        let back = round_trip(&r, RecordingFormat::Binary);
        prop_assert_eq!(back.sample_rate_hz().to_bits(), r.sample_rate_hz().to_bits());
        for (a, b) in back.data().iter().flatten().zip(r.data().iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_round_trip_keeps_values(c in 1usize..5, t in 1usize..50, seed in any::<u64>()) {
        let r = f32_recording(c, t, 250.0, seed);
        let back = round_trip(&r, RecordingFormat::Csv);
        prop_assert_eq!(back.data(), r.data());
        prop_assert_eq!(back.sample_rate_hz(), 250.0);
    }

    #[test]
    fn synthetic_is_a_function_of_its_spec(seed in any::<u64>(), noise in 0.0f64..3.0) {
        let spec = SyntheticSpec {
            channels: 2,
            components: vec![ToneComponent { channel: 1, frequency_hz: 11.0, amplitude: 2.0, phase_rad: 0.3 }],
            noise_std: noise,
            duration_s: 1.0,
            sample_rate_hz: 250.0,
            seed,
        };
        prop_assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }
}

#[test]
fn hand_built_file_decodes_to_declared_shape() {
    let mut bytes = b"FEEG".to_vec();
    bytes.push(1);
    bytes.extend_from_slice(&3u32.to_le_bytes());
    bytes.extend_from_slice(&1500u64.to_le_bytes());
    bytes.extend_from_slice(&250.0f64.to_le_bytes());
    for c in 0..3 {
        for t in 0..1500 {
            bytes.extend_from_slice(&((c as f32) - t as f32 * 0.25).to_le_bytes());
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.feeg");
    std::fs::write(&path, &bytes).unwrap();
    let r = read_recording(&path, RecordingFormat::Binary).unwrap();
    assert_eq!((r.channels(), r.samples(), r.sample_rate_hz()), (3, 1500, 250.0));
    assert_eq!(r.channel(2)[4], 1.0);
}

#[test]
fn large_random_recording_round_trips_through_a_file() {
    let r = f32_recording(64, 5000, 500.0, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.feeg");
    write_recording(&r, &path, RecordingFormat::Binary).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = read_recording(&path, RecordingFormat::Binary).unwrap();
    assert_eq!(back.data(), r.data());
    write_recording(&back, &path, RecordingFormat::Binary).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn single_sample_recording_round_trips() {
    let r = Recording::zeros("z", 100.0, 1, 1).unwrap();
    assert_eq!(round_trip(&r, RecordingFormat::Binary).data(), r.data());
}

#[test]
fn nan_is_rejected_before_writing() {
    let r = f32_recording(2, 4, 100.0, 1);
    let mut data = r.data().to_vec();
    data[1][2] = f64::NAN;
    assert!(Recording::new("bad", 100.0, data).is_err());
}

#[test]
fn unwritable_path_is_io_error() {
    let r = Recording::zeros("z", 100.0, 1, 4).unwrap();
    let err = write_recording(&r, "/nonexistent-dir/x.feeg", RecordingFormat::Binary).unwrap_err();
    assert_eq!(err.kind(), "IoError");
}

#[test]
fn noiseless_tone_peaks_at_nearest_bin() {
    let mut rng = Gaussian::new(4);
    for _ in 0..10 {
        let f = 1.0 + rng.uniform() * 100.0;
        let spec = SyntheticSpec {
            channels: 1,
            components: vec![ToneComponent {
                channel: 0,
                frequency_hz: f,
                amplitude: 1.0,
                phase_rad: 2.0 * PI * rng.uniform(),
            }],
            noise_std: 0.0,
            duration_s: 6.0,
            sample_rate_hz: 250.0,
            seed: 0,
        };
        let r = generate_synthetic(&spec).unwrap();
        let p = psd(r.channel(0), 250.0).unwrap();
        let peak = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        let nearest = (f * 6.0).round() as usize;
        assert_eq!(peak, nearest, "tone {f} Hz");
    }
}
