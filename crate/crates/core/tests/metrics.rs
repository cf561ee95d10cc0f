mod common;

use common::fixture_slice_matrix as slice_matrix;
use mriqa::domain::QualityLabel;
use mriqa::metrics::{confusion, exclude, metrics};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use QualityLabel::*;

fn four(v: Option<f64>) -> String {
    format!("{:.4}", v.unwrap())
}

#[test]
fn t1_slice_fixture_metrics() {
    let cm = slice_matrix("t1_cres");
    assert_eq!(cm.counts, [[1421, 79, 0], [0, 0, 0], [0, 3, 357]]);
    let r = metrics(&cm);
    assert_eq!(four(r.class(Pass).sensitivity), "0.9473");
    assert_eq!(four(r.class(Fail).sensitivity), "0.9917");
    assert_eq!(four(r.class(Pass).specificity), "1.0000");
    assert_eq!(four(r.class(Fail).specificity), "1.0000");
    assert!(r.class(Questionable).excluded && r.class(Questionable).sensitivity.is_none());
}

#[test]
fn t2_slice_fixture_metrics() {
    let cm = slice_matrix("t2_cres");
    assert_eq!(cm.counts, [[1243, 12, 5], [0, 0, 0], [0, 0, 780]]);
    let r = metrics(&cm);
    assert_eq!(four(r.class(Pass).sensitivity), "0.9865");
    assert_eq!(four(r.class(Fail).specificity), "0.9960");
    assert_eq!(four(r.class(Fail).sensitivity), "1.0000");
}

fn labels(n: usize) -> impl Strategy<Value = Vec<QualityLabel>> {
    prop::collection::vec((0usize..3).prop_map(|i| QualityLabel::ALL[i]), n)
}

fn pairs() -> impl Strategy<Value = (Vec<QualityLabel>, Vec<QualityLabel>)> {
    (1usize..200).prop_flat_map(|n| (labels(n), labels(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn order_of_samples_does_not_matter((p, t) in pairs(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.shuffle(&mut common::rng(seed));
        let pp: Vec<_> = idx.iter().map(|&i| p[i]).collect();
        let tt: Vec<_> = idx.iter().map(|&i| t[i]).collect();
        let a = metrics(&confusion(&p, &t, [false; 3]).unwrap());
        let b = metrics(&confusion(&pp, &tt, [false; 3]).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn accuracy_is_support_weighted_sensitivity((p, t) in pairs(), masked in 0usize..4) {
        let mask = if masked < 3 { exclude(&[QualityLabel::ALL[masked]]) } else { [false; 3] };
        let cm = confusion(&p, &t, mask).unwrap();
        let r = metrics(&cm);
        let Some(acc) = r.accuracy else { return Ok(()) };
        let weighted: f64 = r
            .classes
            .iter()
            .filter(|c| !c.excluded && c.support > 0)
            .map(|c| c.sensitivity.unwrap() * c.support as f64)
            .sum::<f64>()
            / r.total as f64;
        prop_assert!((acc - weighted).abs() < 1e-12);
        for c in &r.classes {
            for v in [c.sensitivity, c.specificity].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
