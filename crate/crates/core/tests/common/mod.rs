#![allow(dead_code)]

pub mod gradchecks;
pub mod oracles;

use std::collections::HashMap;
use std::path::PathBuf;

use mriqa::domain::{load_truth, QualityLabel};
use mriqa::metrics::{confusion, exclude, load_predictions, ConfusionMatrix};
use mriqa::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, so relu kinks stay out of reach of a
/// finite-difference step.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Slice confusion matrix of a stored prediction file against its sidecar,
/// with actual-questionable slices masked.
pub fn fixture_slice_matrix(tag: &str) -> ConfusionMatrix {
    let preds = load_predictions(fixture(&format!("{tag}_pred.tsv"))).unwrap();
    let truth = load_truth(fixture(&format!("{tag}_truth.tsv"))).unwrap();
    let by_key: HashMap<(String, usize), QualityLabel> = truth
        .iter()
        .map(|t| {
            (
                (t.record.volume_id.clone(), t.record.slice_index),
                t.true_label,
            )
        })
        .collect();
    let (p, t): (Vec<_>, Vec<_>) = preds
        .iter()
        .map(|r| {
            (
                r.prediction.label(),
                by_key[&(r.volume_id.clone(), r.slice_index.unwrap())],
            )
        })
        .unzip();
    confusion(&p, &t, exclude(&[QualityLabel::Questionable])).unwrap()
}
