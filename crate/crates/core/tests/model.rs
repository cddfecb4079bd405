use fome::model::{Ablation, Fome, ModelConfig, PatchEmbed};
use fome::preprocess::PatchGrid;
use fome::signal::Gaussian;
use fome::spectral::{BandPowerTensor, BandScheme};
use fome::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn inputs(c: usize, p: usize, l: usize, rng: &mut Gaussian) -> (PatchGrid, BandPowerTensor) {
    let grid = PatchGrid::new(c, p, l, 250.0, (0..c * p * l).map(|_| rng.standard()).collect()).unwrap();
    let bands = random_bands(c, p, rng);
    (grid, bands)
}

fn random_bands(c: usize, p: usize, rng: &mut Gaussian) -> BandPowerTensor {
    BandPowerTensor::new(c, p, BandScheme::default(), (0..c * p * 8).map(|_| rng.uniform() * 4.0).collect()).unwrap()
}

fn micro() -> ModelConfig {
    ModelConfig {
        temporal_layers: 2,
        channel_layers: 2,
        ..ModelConfig::micro(12, 8, 2)
    }
}

fn zero_params(model: &mut Fome, keep: impl Fn(&str) -> bool) {
    let store = model.params_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !keep(store.name(id)) {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }
}

#[test]
fn zero_weights_leave_only_positions() {
    let mut model = Fome::new(micro(), 1).unwrap();
    zero_params(&mut model, |n| n == "embed.pos");
    let grid = PatchGrid::zeros(3, 4, 12, 250.0).unwrap();
    let bands = BandPowerTensor::zeros(3, 4, BandScheme::default());
    let mut g = Graph::new();
    let e = model.embed(&mut g, &grid, &bands, None).unwrap();
    let pos = model.params().get("embed.pos").unwrap();
    let d = 8;
    for (row, chunk) in g.value(e).data().chunks(d).enumerate() {
        let p = row % 4;
        assert_eq!(chunk, &pos.data()[p * d..(p + 1) * d]);
    }
}

#[test]
fn identical_patches_differ_by_position_only() {
    let model = Fome::new(micro(), 2).unwrap();
    let mut rng = Gaussian::new(2);
    let patch: Vec<f64> = (0..12).map(|_| rng.standard()).collect();
    let grid = PatchGrid::new(1, 2, 12, 250.0, [patch.clone(), patch].concat()).unwrap();
    let bands = BandPowerTensor::zeros(1, 2, BandScheme::default());
    let mut g = Graph::new();
    let e = model.embed(&mut g, &grid, &bands, None).unwrap();
    let v = g.value(e).data();
    let pos = model.params().get("embed.pos").unwrap().data();
    for k in 0..8 {
        let lhs = v[k] - v[8 + k];
        let rhs = pos[k] - pos[8 + k];
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[test]
fn attention_rows_are_stochastic_in_every_block() {
    let mut rng = Gaussian::new(3);
    let model = Fome::new(micro(), 3).unwrap();
    let (grid, bands) = inputs(5, 7, 12, &mut rng);
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &grid, &bands, &[(1, 2), (4, 6)], None).unwrap();
    assert_eq!(enc.attention.len(), 4);
    for (i, &a) in enc.attention.iter().enumerate() {
        let shape = g.shape(a).to_vec();
        let width = if i < 2 { 7 } else { 5 };
        assert_eq!(&shape[1..], &[width, width]);
        for row in g.value(a).data().chunks(width) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn singleton_axes_attend_to_themselves() {
    let mut rng = Gaussian::new(4);
    let model = Fome::new(micro(), 4).unwrap();
    let (grid, bands) = inputs(1, 1, 12, &mut rng);
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &grid, &bands, &[], None).unwrap();
    for &a in &enc.attention {
        assert!(g.value(a).data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn fully_masked_input_forgets_content() {
    let mut rng = Gaussian::new(5);
    let model = Fome::new(micro(), 5).unwrap();
    let (g1, b1) = inputs(3, 4, 12, &mut rng);
    let (g2, b2) = inputs(3, 4, 12, &mut rng);
    let all: Vec<(usize, usize)> = (0..3).flat_map(|c| (0..4).map(move |p| (c, p))).collect();
    let a = model.forward(&g1, &b1, &all).unwrap();
    let b = model.forward(&g2, &b2, &all).unwrap();
    assert_eq!(a, b);
    let unmasked = model.forward(&g1, &b1, &[]).unwrap();
    let one = model.forward(&g1, &b1, &[(0, 0)]).unwrap();
    assert!(unmasked.max_abs_diff(&one) > 0.0);
}

#[test]
fn one_store_serves_any_channel_count() {
    let mut rng = Gaussian::new(6);
    let model = Fome::new(micro(), 6).unwrap();
    for c in [1, 3, 19, 64] {
        let (grid, bands) = inputs(c, 3, 12, &mut rng);
        let out = model.forward(&grid, &bands, &[(c - 1, 2)]).unwrap();
        assert_eq!(out.shape(), [c, 3, 8]);
        assert!(out.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn ablations_change_the_parameter_set() {
    let names = |cfg: ModelConfig| {
        Fome::new(cfg, 0)
            .unwrap()
            .params()
            .named_values()
            .map(|(n, _)| n.to_string())
            .collect::<Vec<_>>()
    };
    let full = names(micro());
    assert!(full.iter().any(|n| n.starts_with("embed.freq")));
    let no_freq = names(micro().with_ablation(Ablation::Freq));
    assert!(!no_freq.iter().any(|n| n.starts_with("embed.freq")));
    let no_time = names(micro().with_ablation(Ablation::Temporal));
    assert!(!no_time.iter().any(|n| n.starts_with("temporal.")));
    assert!(no_time.iter().any(|n| n.starts_with("channel.")));
    let no_chan = names(micro().with_ablation(Ablation::Channel));
    assert!(!no_chan.iter().any(|n| n.starts_with("channel.")));
    let conv = micro().with_ablation(Ablation::ConvEmbed);
    assert_eq!(conv.patch_embed, PatchEmbed::Conv);
    let conv_names = names(conv);
    assert!(conv_names.iter().any(|n| n.starts_with("embed.conv")));
    assert!(!conv_names.iter().any(|n| n.starts_with("embed.patch")));
}

#[test]
fn ablated_models_still_run() {
    let mut rng = Gaussian::new(7);
    let (grid, bands) = inputs(2, 3, 12, &mut rng);
    for a in [Ablation::Freq, Ablation::Temporal, Ablation::Channel, Ablation::ConvEmbed] {
        let model = Fome::new(micro().with_ablation(a), 7).unwrap();
        let out = model.forward(&grid, &bands, &[(0, 1)]).unwrap();
        assert_eq!(out.shape(), [2, 3, 8], "{a:?}");
    }
}

#[test]
fn heads_have_the_promised_shapes() {
    let mut rng = Gaussian::new(8);
    let mut model = Fome::new(micro(), 8).unwrap();
    model.attach_classifier(1, 1).unwrap();
    let (grid, bands) = inputs(2, 3, 12, &mut rng);
    assert_eq!(model.predict_proba(&grid, &bands).unwrap(), [1.0]);

    let mut model = Fome::new(micro(), 8).unwrap();
    model.attach_classifier(4, 1).unwrap();
    let probs = model.predict_proba(&grid, &bands).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    zero_params(&mut model, |n| !n.starts_with("head.cls3"));
    assert_eq!(model.predict_proba(&grid, &bands).unwrap(), [0.25; 4]);

    let cfg = ModelConfig::micro(1500, 8, 2);
    let mut model = Fome::new(cfg, 9).unwrap();
    model.attach_forecaster(15, 2 * 1500, 1).unwrap();
    let (grid, bands) = inputs(2, 15, 1500, &mut rng);
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &grid, &bands, &[], None).unwrap();
    let y = model.forecast(&mut g, enc.output).unwrap();
    assert_eq!(g.shape(y), [2, 3000]);
    let rec = model.reconstruct(&mut g, enc.output).unwrap();
    assert_eq!(g.shape(rec), [2, 15, 1500]);
}

#[test]
fn zero_head_gives_zero_output() {
    let mut rng = Gaussian::new(10);
    let mut model = Fome::new(micro(), 10).unwrap();
    model.attach_forecaster(3, 5, 1).unwrap();
    zero_params(&mut model, |n| !n.starts_with("head."));
    let (grid, bands) = inputs(2, 3, 12, &mut rng);
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &grid, &bands, &[], None).unwrap();
    let rec = model.reconstruct(&mut g, enc.output).unwrap();
    let fc = model.forecast(&mut g, enc.output).unwrap();
    assert!(g.value(rec).data().iter().all(|&v| v == 0.0));
    assert!(g.value(fc).data().iter().all(|&v| v == 0.0));
}

#[test]
fn interleaved_order_alternates_blocks() {
    let mut rng = Gaussian::new(11);
    let cfg = ModelConfig {
        interleave: true,
        temporal_layers: 2,
        channel_layers: 1,
        ..ModelConfig::micro(12, 8, 2)
    };
    let model = Fome::new(cfg, 11).unwrap();
    let (grid, bands) = inputs(3, 5, 12, &mut rng);
    let mut g = Graph::new();
    let enc = model.encode(&mut g, &grid, &bands, &[], None).unwrap();
    let widths: Vec<usize> = enc.attention.iter().map(|&a| g.shape(a)[1]).collect();
    assert_eq!(widths, [5, 3, 5]);
}

#[test]
fn config_text_round_trips() {
    let cfg = micro().with_ablation(Ablation::Freq);
    assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn network_is_channel_equivariant(c in 1usize..7, seed in any::<u64>()) {
        let mut rng = Gaussian::new(seed);
        let model = Fome::new(micro(), seed).unwrap();
        let (grid, _) = inputs(c, 4, 12, &mut rng);
        let bands = random_bands(c, 4, &mut rng);
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(rng.rng());
        let masked: Vec<(usize, usize)> = (0..c).map(|ch| (ch, (ch * 3 + 1) % 4)).collect();
        let permuted_grid = grid.permute_channels(&perm).unwrap();
        let bands_ref = &bands;
        let permuted_bands = BandPowerTensor::new(
            c,
            4,
            BandScheme::default(),
            perm.iter().flat_map(|&src| (0..4).flat_map(move |p| bands_ref.at(src, p).to_vec())).collect(),
        ).unwrap();
        let inverse: Vec<usize> = {
            let mut inv = vec![0; c];
            for (i, &src) in perm.iter().enumerate() {
                inv[src] = i;
            }
            inv
        };
        let permuted_mask: Vec<(usize, usize)> = masked.iter().map(|&(ch, p)| (inverse[ch], p)).collect();
        let run = |grid: &PatchGrid, bands: &BandPowerTensor, mask: &[(usize, usize)]| -> Tensor {
            let mut g = Graph::deterministic();
            let enc = model.encode(&mut g, grid, bands, mask, None).unwrap();
            let rec = model.reconstruct(&mut g, enc.output).unwrap();
            g.value(rec).clone()
        };
        let direct = run(&grid, &bands, &masked);
        let moved = run(&permuted_grid, &permuted_bands, &permuted_mask);
        let per_channel = 4 * 12;
        for (i, &src) in perm.iter().enumerate() {
            prop_assert_eq!(
                &moved.data()[i * per_channel..(i + 1) * per_channel],
                &direct.data()[src * per_channel..(src + 1) * per_channel]
            );
        }
    }
}
