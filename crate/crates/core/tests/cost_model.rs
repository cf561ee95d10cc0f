use mriqa::cost_model::{
    cc_dsconv, cc_std_conv, conv_ratio_exact, count_macs, crf_conv, crf_conv_exact, crf_dsres,
    network_block_cost, residual_block_cost, ConvShape,
};
use mriqa::nrnet::{BlockConfig, DSResBlockConfig, NRNetConfig};
use num_rational::Ratio;
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = ConvShape> {
    (1u64..=1024, 1u64..=1024, 1u64..=256, 1u64..=256, 1u64..=11)
        .prop_map(|(c, co, h, w, d)| ConvShape::new(c, co, h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn separable_ratio_is_exactly_the_reduction_factor(s in shape()) {
        prop_assert_eq!(conv_ratio_exact(s), crf_conv_exact(s));
        let approx = cc_dsconv(s) as f64 / cc_std_conv(s) as f64;
        prop_assert!((approx - crf_conv(s)).abs() <= 1e-12 * crf_conv(s));
    }

    #[test]
    fn separable_is_cheaper_once_kernels_are_spatial(s in shape()) {
        prop_assume!(s.d >= 2 && s.c_out >= 2);
        prop_assert!(cc_dsconv(s) < cc_std_conv(s));
    }
}

#[test]
fn standard_cost_is_multiplicative() {
    let s = ConvShape::new(3, 5, 7, 11, 3).unwrap();
    assert_eq!(cc_std_conv(s), 3 * 5 * 9 * 7 * 11);
    assert_eq!(cc_dsconv(s), 3 * 9 * 77 + 3 * 5 * 77);
    assert_eq!(conv_ratio_exact(s), Ratio::new(1, 5) + Ratio::new(1, 9));
}

/// The standard-to-separable residual block cost ratio lands in the 6x to 7x
/// band for 3x3 kernels at the widths the network uses.
#[test]
fn residual_block_reduction_band() {
    for c_out in [128u64, 256, 512] {
        let s = ConvShape::new(c_out / 2, c_out, 16, 16, 3).unwrap();
        let ratio = residual_block_cost(s, false) as f64 / residual_block_cost(s, true) as f64;
        assert!((6.0..=7.0).contains(&ratio), "c'={c_out}: {ratio}");
        assert!(
            (1.0 / ratio - crf_dsres(s)).abs() < 0.01,
            "c'={c_out}: {ratio} vs {}",
            crf_dsres(s)
        );
        let built = network_block_cost(s, false) as f64 / network_block_cost(s, true) as f64;
        assert!(built > 6.0, "c'={c_out}: {built}");
    }
}

/// The cost table's block rows agree with the block formulas.
#[test]
fn cost_table_rows_use_the_block_formulas() {
    for separable in [false, true] {
        let b = DSResBlockConfig::new(16, 32, 2);
        let mut cfg = NRNetConfig::empty(32);
        cfg.input_channels = 16;
        cfg.blocks = vec![if separable {
            BlockConfig::DSRes(b)
        } else {
            BlockConfig::CRes(b)
        }];
        let table = count_macs(&cfg, [16, 32, 32]).unwrap();
        let s = ConvShape::new(16, 32, 16, 16, 3).unwrap();
        assert_eq!(table.layers[0].conv_macs, network_block_cost(s, separable));
    }
}

#[test]
fn empty_network_costs_only_its_classifier() {
    let table = count_macs(&NRNetConfig::empty(8), [1, 8, 8]).unwrap();
    assert_eq!(table.layers.len(), 1);
    assert_eq!(table.total_macs(), 3 * 64);
}
