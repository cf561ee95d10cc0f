use mriqa::domain::{QualityLabel, SlicePrediction};
use mriqa::selftrain::{init_volume_label, init_volume_labels, select_slices, FailRule};
use proptest::prelude::*;
use QualityLabel::*;

fn label() -> impl Strategy<Value = QualityLabel> {
    (0usize..3).prop_map(|i| QualityLabel::ALL[i])
}

fn prediction() -> impl Strategy<Value = SlicePrediction> {
    (0.001f64..1.0, 0.001f64..1.0, 0.001f64..1.0).prop_map(|(a, b, c)| {
        let s = a + b + c;
        SlicePrediction::new([a / s, b / s, c / s]).unwrap()
    })
}

fn cases() -> impl Strategy<Value = (Vec<QualityLabel>, Vec<SlicePrediction>)> {
    (1usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(label(), n),
            prop::collection::vec(prediction(), n),
        )
    })
}

fn vol(p: usize, q: usize, f: usize) -> Vec<QualityLabel> {
    [vec![Pass; p], vec![Questionable; q], vec![Fail; f]].concat()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn selection_partitions_the_input((previous, preds) in cases(), p in 0.34f64..0.99) {
        let s = select_slices(&previous, &preds, p).unwrap();
        prop_assert_eq!(s.kept_count() + s.pruned_count(), previous.len());
        let ids: Vec<usize> = s.records.iter().map(|r| r.id).collect();
        prop_assert_eq!(ids, (0..previous.len()).collect::<Vec<_>>());
        for r in s.kept() {
            prop_assert_eq!(r.predicted, previous[r.id]);
            prop_assert!(r.confidence >= p);
        }
        for r in s.pruned() {
            prop_assert!(r.predicted != previous[r.id] || r.confidence < p);
        }
        prop_assert_eq!(s.relabeled_count(), 0);
    }

    #[test]
    fn raising_the_threshold_only_shrinks_the_kept_set((previous, preds) in cases(), lo in 0.34f64..0.98, d in 0.0f64..0.5) {
        let hi = (lo + d).min(0.99);
        let a = select_slices(&previous, &preds, lo).unwrap();
        let b = select_slices(&previous, &preds, hi).unwrap();
        for r in b.kept() {
            prop_assert!(a.kept().any(|k| k.id == r.id));
        }
        prop_assert!(b.kept_count() <= a.kept_count());
    }

    #[test]
    fn every_nonempty_volume_gets_a_rating(volumes in prop::collection::vec(prop::collection::vec(label(), 1..70), 1..10)) {
        for rule in [FailRule::Conjunctive, FailRule::Disjunctive] {
            let ratings = init_volume_labels(&volumes, rule).unwrap();
            prop_assert_eq!(ratings.len(), volumes.len());
            for (v, r) in volumes.iter().zip(ratings) {
                let count = |l| v.iter().filter(|&&x| x == l).count();
                let pass_rated = 5 * count(Pass) > 4 * v.len();
                prop_assert_eq!(r == Pass, pass_rated);
                if r == Fail && rule == FailRule::Conjunctive {
                    prop_assert!(count(Fail) > count(Pass) && count(Fail) > count(Questionable));
                }
            }
        }
    }
}

#[test]
fn rating_rule_examples() {
    let c = FailRule::Conjunctive;
    assert_eq!(init_volume_label(&vol(49, 6, 5), c).unwrap(), Pass);
    assert_eq!(init_volume_label(&vol(10, 20, 30), c).unwrap(), Fail);
    assert_eq!(init_volume_label(&vol(30, 25, 5), c).unwrap(), Questionable);
    // exactly 80% pass is not more than 80%
    assert_eq!(init_volume_label(&vol(48, 12, 0), c).unwrap(), Questionable);
    assert!(init_volume_labels(&[vec![]], c).is_err());
}

#[test]
fn threshold_must_be_a_probability() {
    let p = [SlicePrediction::new([0.7, 0.2, 0.1]).unwrap()];
    assert!(select_slices(&[Pass], &p, 0.0).is_err());
    assert!(select_slices(&[Pass], &p, 1.0).is_err());
    assert!(select_slices(&[Pass, Fail], &p, 0.8).is_err());
    assert_eq!(select_slices(&[Pass], &p, 0.7).unwrap().kept_count(), 1);
    assert_eq!(select_slices(&[Pass], &p, 0.71).unwrap().kept_count(), 0);
}
