//! Synthetic stand-in data: multi-ellipse phantoms, graded artifact
//! injection defining the true slice classes, and volume-level label noise.

mod artifacts;
mod phantom;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use artifacts::{inject_artifact, truncate_frequencies, ArtifactKind, ArtifactSpec};
pub use phantom::{generate_phantom_slice, Phantom, PhantomConfig};

use crate::domain::pgm::{write_pgm, Graymap};
use crate::domain::{
    minmax_normalize, save_manifest, save_truth, DatasetManifest, ManifestRecord, QualityLabel,
    SliceImage, Split, TruthRecord, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::selftrain::{init_volume_label, FailRule};

const TEMPLATE_STREAM: u64 = 0x7E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Share of labeled volumes whose observed label is flipped.
    pub corruption_rate: f64,
    /// Share of volumes mixing slices of several true classes.
    pub mixed_rate: f64,
}

impl NoiseModel {
    pub fn clean() -> Self {
        NoiseModel {
            corruption_rate: 0.0,
            mixed_rate: 0.0,
        }
    }
}

/// Severity interval of each true slice class, in class order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityBands {
    pub bands: [(f64, f64); NUM_CLASSES],
}

impl Default for SeverityBands {
    fn default() -> Self {
        SeverityBands {
            bands: [(0.0, 0.15), (0.35, 0.55), (0.75, 1.0)],
        }
    }
}

impl SeverityBands {
    pub fn validate(&self) -> Result<()> {
        for (i, &(lo, hi)) in self.bands.iter().enumerate() {
            if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                return Err(Error::Config(format!(
                    "severity band {i} is not an interval in [0,1]"
                )));
            }
        }
        for pair in self.bands.windows(2) {
            if pair[0].1 >= pair[1].0 {
                return Err(Error::Config(format!(
                    "severity bands {:?} and {:?} overlap",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    pub fn class_of(&self, severity: f64) -> Option<QualityLabel> {
        self.bands
            .iter()
            .position(|&(lo, hi)| (lo..=hi).contains(&severity))
            .and_then(QualityLabel::from_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub canvas: usize,
    pub slices_per_volume: usize,
    pub train_per_class: [usize; NUM_CLASSES],
    pub test_per_class: [usize; NUM_CLASSES],
    pub unlabeled_per_class: [usize; NUM_CLASSES],
    pub noise: NoiseModel,
    pub bands: SeverityBands,
    pub phantom: PhantomConfig,
}

impl DatasetSpec {
    /// 20/20/20 labeled volumes, a 25/9/6 clean test set and 200 unlabeled
    /// volumes of 60 slices at 64x64, 30% volume-label corruption.
    pub fn desk() -> Self {
        DatasetSpec {
            canvas: 64,
            slices_per_volume: 60,
            train_per_class: [20; 3],
            test_per_class: [25, 9, 6],
            unlabeled_per_class: [67, 67, 66],
            noise: NoiseModel {
                corruption_rate: 0.3,
                mixed_rate: 0.3,
            },
            bands: SeverityBands::default(),
            phantom: PhantomConfig::new(64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bands.validate()?;
        self.phantom.validate()?;
        if self.phantom.size != self.canvas {
            return Err(Error::Config("phantom size must equal the canvas".into()));
        }
        if self.slices_per_volume == 0 {
            return Err(Error::Config("volumes need at least one slice".into()));
        }
        for r in [self.noise.corruption_rate, self.noise.mixed_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config("noise rates must lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticVolume {
    pub volume_id: String,
    pub split: Split,
    pub slices: Vec<SliceImage>,
    pub true_slice_labels: Vec<QualityLabel>,
    pub artifacts: Vec<ArtifactSpec>,
    /// Rating of the true slice classes by the initial volume-label rules.
    pub true_label: QualityLabel,
    /// Label given to the volume (and all its slices) in the manifest; `None`
    /// for unlabeled volumes.
    pub observed_label: Option<QualityLabel>,
    pub mixed: bool,
}

impl SyntheticVolume {
    /// Borrowed view with the observed (manifest) label.
    pub fn as_input(&self) -> crate::selftrain::VolumeInput<'_> {
        crate::selftrain::VolumeInput {
            id: self.volume_id.clone(),
            slices: self.slices.iter().collect(),
            label: self.observed_label,
        }
    }

    pub fn corrupted(&self) -> bool {
        self.observed_label.is_some_and(|l| l != self.true_label)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub train: Vec<SyntheticVolume>,
    pub test: Vec<SyntheticVolume>,
    pub unlabeled: Vec<SyntheticVolume>,
}

/// True slice classes of a volume meant to rate as `class`. Mixed volumes
/// carry a contiguous block of other classes small enough to keep the
/// intended rating.
fn slice_classes<R: Rng + ?Sized>(
    class: QualityLabel,
    n: usize,
    mixed: bool,
    rng: &mut R,
) -> Vec<QualityLabel> {
    use QualityLabel::*;
    if !mixed || n < 5 {
        return vec![class; n];
    }
    let share = |rng: &mut R, lo: f64, hi: f64| {
        ((n as f64 * rng.random_range(lo..hi)).floor() as usize).min(n)
    };
    let mut labels = match class {
        Pass => {
            // strictly fewer than 20% off-class slices keeps the Pass rating
            let max_bad = ((n as f64 * 0.15).floor() as usize).max(1);
            let bad = rng.random_range(1..=max_bad);
            let other = if rng.random_bool(0.5) {
                Questionable
            } else {
                Fail
            };
            [vec![Pass; n - bad], vec![other; bad]].concat()
        }
        Questionable => {
            let pass = share(rng, 0.1, 0.3);
            let fail = share(rng, 0.0, 0.1).min(pass.saturating_sub(1));
            [
                vec![Questionable; n - pass - fail],
                vec![Pass; pass],
                vec![Fail; fail],
            ]
            .concat()
        }
        Fail => {
            let fail = share(rng, 0.6, 0.9).max(n / 2 + 1);
            let rest = n - fail;
            let pass = rng.random_range(0..=rest);
            [
                vec![Fail; fail],
                vec![Pass; pass],
                vec![Questionable; rest - pass],
            ]
            .concat()
        }
    };
    let offset = rng.random_range(0..n);
    labels.rotate_left(offset);
    labels
}

fn generate_volume(
    spec: &DatasetSpec,
    template: &Phantom,
    volume_id: String,
    split: Split,
    class: QualityLabel,
    mixed: bool,
    seed: u64,
) -> Result<SyntheticVolume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.slices_per_volume;
    let labels = slice_classes(class, n, mixed, &mut rng);
    let true_label = init_volume_label(&labels, FailRule::Conjunctive)?;
    debug_assert_eq!(true_label, class);
    let phantom = Phantom::jittered(template, &spec.phantom, &mut rng)?;
    let primary = ArtifactKind::ALL[rng.random_range(0..ArtifactKind::ALL.len())];
    let mut slices = Vec::with_capacity(n);
    let mut artifacts = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let z = if n > 1 {
            -0.8 + 1.6 * i as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let clean = phantom.slice(z)?;
        let (lo, hi) = spec.bands.bands[label.index()];
        let severity = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let kind = if rng.random_bool(0.7) {
            primary
        } else {
            ArtifactKind::ALL[rng.random_range(0..ArtifactKind::ALL.len())]
        };
        let art = ArtifactSpec { kind, severity };
        let dirty = inject_artifact(&clean, art, &mut rng)?;
        slices.push(minmax_normalize(
            dirty.height(),
            dirty.width(),
            dirty.data(),
        )?);
        artifacts.push(art);
    }
    Ok(SyntheticVolume {
        volume_id,
        split,
        slices,
        true_slice_labels: labels,
        artifacts,
        true_label,
        observed_label: None,
        mixed,
    })
}

fn generate_split<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    template: &Phantom,
    counts: [usize; NUM_CLASSES],
    split: Split,
    prefix: &str,
    seed: u64,
    rng: &mut R,
) -> Result<Vec<SyntheticVolume>> {
    let total: usize = counts.iter().sum();
    let mut mixed = vec![false; total];
    let n_mixed = (spec.noise.mixed_rate * total as f64).round() as usize;
    mixed[..n_mixed].iter_mut().for_each(|m| *m = true);
    mixed.shuffle(rng);
    let split_key = match split {
        Split::Train => 1,
        Split::Validation => 2,
        Split::Test => 3,
        Split::Unlabeled => 4,
    };
    let mut out = Vec::with_capacity(total);
    let mut index = 0;
    for class in QualityLabel::ALL {
        for _ in 0..counts[class.index()] {
            out.push(generate_volume(
                spec,
                template,
                format!("{prefix}{index:03}"),
                split,
                class,
                mixed[index],
                crate::seed::derive(seed, split_key, index as u64),
            )?);
            index += 1;
        }
    }
    Ok(out)
}

/// Generates the full dataset. Labeled volumes are observed under their true
/// rating except for exactly `round(rate * n_c)` of the `n_c` volumes of each
/// class, which are flipped to another class; test volumes stay clean; unlabeled volumes carry none.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    // one shared anatomy; each volume is a jittered copy of it
    let mut template_rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, TEMPLATE_STREAM, 0));
    let template = Phantom::random(&spec.phantom, &mut template_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = generate_split(
        spec,
        &template,
        spec.train_per_class,
        Split::Train,
        "train",
        seed,
        &mut rng,
    )?;
    let mut test = generate_split(
        spec,
        &template,
        spec.test_per_class,
        Split::Test,
        "test",
        seed,
        &mut rng,
    )?;
    let unlabeled = generate_split(
        spec,
        &template,
        spec.unlabeled_per_class,
        Split::Unlabeled,
        "unl",
        seed,
        &mut rng,
    )?;

    // exactly round(rate * n_c) flips within each class
    let mut flip = vec![false; train.len()];
    for class in QualityLabel::ALL {
        let mut members: Vec<usize> = (0..train.len())
            .filter(|&i| train[i].true_label == class)
            .collect();
        members.shuffle(&mut rng);
        let flips = (spec.noise.corruption_rate * members.len() as f64).round() as usize;
        members[..flips].iter().for_each(|&i| flip[i] = true);
    }
    for (v, &f) in train.iter_mut().zip(&flip) {
        v.observed_label = Some(if f {
            let others: Vec<QualityLabel> = QualityLabel::ALL
                .into_iter()
                .filter(|&l| l != v.true_label)
                .collect();
            others[rng.random_range(0..others.len())]
        } else {
            v.true_label
        });
    }
    for v in &mut test {
        v.observed_label = Some(v.true_label);
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        seed,
        train,
        test,
        unlabeled,
    })
}

impl SyntheticDataset {
    pub fn split(&self, split: Split) -> &[SyntheticVolume] {
        match split {
            Split::Train | Split::Validation => &self.train,
            Split::Test => &self.test,
            Split::Unlabeled => &self.unlabeled,
        }
    }

    /// Manifest and truth sidecar of one split, with image paths relative to
    /// the dataset directory.
    pub fn manifest(&self, split: Split) -> Result<(DatasetManifest, Vec<TruthRecord>)> {
        let mut records = Vec::new();
        let mut truth = Vec::new();
        for v in self.split(split) {
            for (i, &t) in v.true_slice_labels.iter().enumerate() {
                let record = ManifestRecord {
                    volume_id: v.volume_id.clone(),
                    slice_index: i,
                    image_path: image_path(&v.volume_id, i),
                    label: v.observed_label,
                };
                truth.push(TruthRecord {
                    record: ManifestRecord {
                        label: Some(v.true_label),
                        ..record.clone()
                    },
                    true_label: t,
                });
                records.push(record);
            }
        }
        Ok((DatasetManifest::new(records, split)?, truth))
    }

    /// Writes 16-bit graymaps under `images/`, plus `<split>.tsv` manifests and
    /// `<split>_truth.tsv` sidecars for the train, test and unlabeled splits.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::file(&images, e))?;
        for split in [Split::Train, Split::Test, Split::Unlabeled] {
            for v in self.split(split) {
                for (i, s) in v.slices.iter().enumerate() {
                    let g = Graymap::from_unit(s.height(), s.width(), s.data());
                    write_pgm(dir.join(image_path(&v.volume_id, i)), &g)?;
                }
            }
            let (manifest, truth) = self.manifest(split)?;
            save_manifest(&manifest, dir.join(format!("{}.tsv", split.as_str())))?;
            save_truth(&truth, dir.join(format!("{}_truth.tsv", split.as_str())))?;
        }
        Ok(())
    }
}

fn image_path(volume_id: &str, slice: usize) -> PathBuf {
    PathBuf::from("images").join(format!("{volume_id}_{slice:03}.pgm"))
}
