mod common;

use common::rng;
use mriqa::domain::{load_manifest, load_truth, QualityLabel, Split};
use mriqa::selftrain::{init_volume_label, FailRule};
use mriqa::synth::{
    generate_dataset, generate_phantom_slice, inject_artifact, truncate_frequencies, ArtifactKind,
    ArtifactSpec, DatasetSpec, NoiseModel, PhantomConfig, SeverityBands,
};

fn small_spec(per_class: [usize; 3]) -> DatasetSpec {
    DatasetSpec {
        canvas: 16,
        slices_per_volume: 6,
        train_per_class: per_class,
        test_per_class: [3, 2, 2],
        unlabeled_per_class: [2, 2, 2],
        noise: NoiseModel {
            corruption_rate: 0.3,
            mixed_rate: 0.3,
        },
        bands: SeverityBands::default(),
        phantom: PhantomConfig::new(16),
    }
}

/// With the random stream held fixed, raising severity never brings a pixel
/// back toward its clean value.
#[test]
fn artifacts_grow_with_severity() {
    let cfg = PhantomConfig::new(32);
    let levels = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
    for seed in 0..50 {
        let clean = generate_phantom_slice(&cfg, &mut rng(seed)).unwrap();
        for kind in ArtifactKind::ALL {
            let mut previous = vec![0.0f64; clean.data().len()];
            for &severity in &levels {
                let out = inject_artifact(
                    &clean,
                    ArtifactSpec { kind, severity },
                    &mut rng(1000 + seed),
                )
                .unwrap();
                let dev: Vec<f64> = out
                    .data()
                    .iter()
                    .zip(clean.data())
                    .map(|(&a, &b)| (a as f64 - b as f64).abs())
                    .collect();
                for (d, p) in dev.iter().zip(&previous) {
                    assert!(*d + 1e-6 >= *p, "{kind} seed {seed} severity {severity}");
                }
                if severity == 0.0 {
                    assert!(dev.iter().all(|&d| d == 0.0));
                }
                previous = dev;
            }
            assert!(
                previous.iter().any(|&d| d > 1e-3),
                "{kind} seed {seed} left the slice unchanged"
            );
        }
    }
}

#[test]
fn ringing_keeps_the_mean() {
    let cfg = PhantomConfig::new(32);
    for seed in 0..20 {
        let clean = generate_phantom_slice(&cfg, &mut rng(seed)).unwrap();
        let x: Vec<f64> = clean.data().iter().map(|&v| v as f64).collect();
        let y = truncate_frequencies(&x, 32, 32, 0.12);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&x) - mean(&y)).abs() < 1e-9);
        let spec = ArtifactSpec {
            kind: ArtifactKind::GibbsRinging,
            severity: 1.0,
        };
        let out = inject_artifact(&clean, spec, &mut rng(seed)).unwrap();
        assert!(
            (out.mean() - clean.mean()).abs() <= 0.01 * clean.mean(),
            "seed {seed}"
        );
    }
}

#[test]
fn same_seed_same_dataset() {
    let spec = small_spec([3, 3, 3]);
    let a = generate_dataset(&spec, 21).unwrap();
    let b = generate_dataset(&spec, 21).unwrap();
    let c = generate_dataset(&spec, 22).unwrap();
    let pixels = |d: &mriqa::synth::SyntheticDataset| -> Vec<f32> {
        d.train
            .iter()
            .chain(&d.test)
            .chain(&d.unlabeled)
            .flat_map(|v| v.slices.iter().flat_map(|s| s.data().to_vec()))
            .collect()
    };
    assert_eq!(pixels(&a), pixels(&b));
    let labels = |d: &mriqa::synth::SyntheticDataset| {
        d.train.iter().map(|v| v.observed_label).collect::<Vec<_>>()
    };
    assert_eq!(labels(&a), labels(&b));
    assert_ne!(pixels(&a), pixels(&c));
}

#[test]
fn corruption_rate_over_two_hundred_volumes() {
    let ds = generate_dataset(&small_spec([67, 67, 66]), 8).unwrap();
    let rate = ds.train.iter().filter(|v| v.corrupted()).count() as f64 / ds.train.len() as f64;
    assert!((rate - 0.3).abs() <= 0.03, "{rate}");
    for class in QualityLabel::ALL {
        let members: Vec<_> = ds.train.iter().filter(|v| v.true_label == class).collect();
        let flipped = members.iter().filter(|v| v.corrupted()).count();
        assert_eq!(flipped, (0.3 * members.len() as f64).round() as usize);
    }
    assert!(ds.test.iter().all(|v| !v.corrupted()));
}

#[test]
fn volume_ratings_follow_slice_classes() {
    let ds = generate_dataset(&small_spec([5, 5, 5]), 3).unwrap();
    for v in ds.train.iter().chain(&ds.test).chain(&ds.unlabeled) {
        assert_eq!(
            init_volume_label(&v.true_slice_labels, FailRule::Conjunctive).unwrap(),
            v.true_label
        );
        for (a, &l) in v.artifacts.iter().zip(&v.true_slice_labels) {
            assert_eq!(ds.spec.bands.class_of(a.severity), Some(l));
        }
        for s in &v.slices {
            assert!(s.data().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}

/// The manifest carries observed labels and the truth sidecar the true
/// ratings; the two disagree exactly on the corrupted volumes.
#[test]
fn sidecar_differs_only_on_corrupted_volumes() {
    let ds = generate_dataset(&small_spec([4, 4, 4]), 13).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let manifest = load_manifest(dir.path().join("train.tsv")).unwrap();
    let truth = load_truth(dir.path().join("train_truth.tsv")).unwrap();
    assert_eq!(manifest.records.len(), truth.len());
    for (m, t) in manifest.records.iter().zip(&truth) {
        let volume = ds
            .train
            .iter()
            .find(|v| v.volume_id == m.volume_id)
            .unwrap();
        assert_eq!(
            m.label != t.record.label,
            volume.corrupted(),
            "{}",
            m.volume_id
        );
        assert_eq!(t.true_label, volume.true_slice_labels[m.slice_index]);
        assert!(dir.path().join(&m.image_path).exists());
    }
    let unlabeled = load_manifest(dir.path().join("unlabeled.tsv")).unwrap();
    assert_eq!(unlabeled.split, Split::Unlabeled);
    assert!(unlabeled.records.iter().all(|r| r.label.is_none()));
}
