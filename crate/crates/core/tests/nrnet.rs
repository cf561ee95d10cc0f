mod common;

use common::oracles::nonlocal_errors;
use common::{max_abs_diff, rng, uniform};
use mriqa::cost_model::count_macs;
use mriqa::domain::SliceImage;
use mriqa::nrnet::{
    build_variant, nres_forward, Checkpoint, Mode, NRNet, NRNetConfig, NResBlockConfig, NResParams,
    Variant,
};
use mriqa::tensor::{macs, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn nonlocal_block_matches_brute_force() {
    for seed in 0..50 {
        let (out, attention, rows) = nonlocal_errors(seed);
        assert!(
            out < 1e-10 && attention < 1e-10 && rows < 1e-6,
            "seed {seed}: {out} {attention} {rows}"
        );
    }
}

/// Permuting spatial positions permutes the output the same way: the block
/// has no notion of location.
#[test]
fn nonlocal_block_is_permutation_equivariant() {
    for seed in 0..20 {
        let mut g = rng(100 + seed);
        let (c, h, w) = (
            g.random_range(1..=6),
            g.random_range(2..=6),
            g.random_range(2..=6),
        );
        let hw = h * w;
        let params = NResParams::<f64>::random(NResBlockConfig::new(c), seed);
        let x = uniform(&[c, h, w], -1.0, 1.0, &mut g);
        let mut perm: Vec<usize> = (0..hw).collect();
        perm.shuffle(&mut g);
        let permute = |t: &Tensor<f64>| -> Vec<f64> {
            let mut out = vec![0.0; t.len()];
            for k in 0..c {
                for (dst, &src) in perm.iter().enumerate() {
                    out[k * hw + dst] = t.data()[k * hw + src];
                }
            }
            out
        };
        let px = Tensor::new(vec![c, h, w], permute(&x)).unwrap();
        let y = nres_forward(&x, &params).unwrap().output;
        let py = nres_forward(&px, &params).unwrap().output;
        assert!(max_abs_diff(py.data(), &permute(&y)) < 1e-10);
    }
}

/// Zero output projection turns the block into the identity.
#[test]
fn zero_output_projection_is_identity() {
    let mut g = rng(7);
    let mut params = NResParams::<f64>::random(NResBlockConfig::new(4), 7);
    params.out.data_mut().fill(0.0);
    let x = uniform(&[4, 5, 3], -1.0, 1.0, &mut g);
    assert_eq!(nres_forward(&x, &params).unwrap().output.data(), x.data());
}

fn random_slices(n: usize, size: usize, seed: u64) -> Vec<SliceImage> {
    let mut g = rng(seed);
    (0..n)
        .map(|_| {
            SliceImage::new(
                size,
                size,
                (0..size * size).map(|_| g.random_range(0.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn checkpoint_round_trip_gives_bit_identical_predictions() {
    let net = NRNet::<f32>::new(NRNetConfig::tiny(32), 11).unwrap();
    let mut ckpt = Checkpoint::new(net);
    ckpt.settings.insert("note".into(), "round trip".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.settings, ckpt.settings);
    let slices = random_slices(4, 32, 3);
    let refs: Vec<&SliceImage> = slices.iter().collect();
    let a = ckpt.network.predict_batch(&refs).unwrap();
    let b = back.network.predict_batch(&refs).unwrap();
    for (p, q) in a.iter().zip(&b) {
        let bits = |x: [f64; 3]| x.map(f64::to_bits);
        assert_eq!(bits(p.probabilities()), bits(q.probabilities()));
    }
}

#[test]
fn batched_and_single_predictions_agree() {
    let net = NRNet::<f64>::new(NRNetConfig::tiny(32), 5).unwrap();
    let slices = random_slices(3, 32, 9);
    let refs: Vec<&SliceImage> = slices.iter().collect();
    let batch = net.predict_batch(&refs).unwrap();
    for (s, p) in slices.iter().zip(&batch) {
        let single = net.predict(s).unwrap();
        assert!(max_abs_diff(&single.probabilities(), &p.probabilities()) < 1e-12);
    }
}

#[test]
fn forward_macs_match_the_cost_table() {
    let mut configs: Vec<NRNetConfig> =
        Variant::ALL.iter().map(|&v| build_variant(v, 32)).collect();
    configs.push(NRNetConfig::tiny(64));
    configs.push(NRNetConfig::empty(16));
    for cfg in configs {
        let size = cfg.input_size;
        let net = NRNet::<f32>::new(cfg.clone(), 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, size, size]));
        let vars = net.bind(&mut tape);
        let (_, counted) = macs::measure(|| net.forward(&mut tape, x, &vars, Mode::Infer).unwrap());
        let table = count_macs(&cfg, [1, size, size]).unwrap();
        assert_eq!(
            counted.convolution_total(),
            table.total_conv_macs(),
            "{:?}",
            cfg.variant
        );
        assert_eq!(counted.total(), table.total_macs(), "{:?}", cfg.variant);
        assert_eq!(
            net.num_parameters() as u64,
            table.total_params(),
            "{:?}",
            cfg.variant
        );
    }
}
