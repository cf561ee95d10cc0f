use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rules::init_volume_label;
use super::selection::{trace_text, SelfTrainConfig};
use super::slice::{slice_self_train, SliceSelfTrainOutcome};
use super::volume::{volume_self_train, VolumeSelfTrainOutcome};
use crate::domain::{QualityLabel, SliceImage, SlicePrediction};
use crate::error::{Error, Result};
use crate::forest::{volume_features, Forest, ForestConfig};
use crate::nrnet::NRNet;
use crate::seed::derive;
use crate::training::{predict_all, stratified_split, TrainConfig};

const SPLIT_STREAM: u64 = 0x61;
const SLICE_STREAM: u64 = 0x62;
const VOLUME_STREAM: u64 = 0x63;

/// One volume's slices in index order, with its volume label if known.
#[derive(Debug, Clone)]
pub struct VolumeInput<'a> {
    pub id: String,
    pub slices: Vec<&'a SliceImage>,
    pub label: Option<QualityLabel>,
}

/// Everything the two-stage self-training run needs; serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    #[serde(default)]
    pub selftrain: SelfTrainConfig,
    #[serde(default)]
    pub forest: ForestConfig,
}

impl PipelineConfig {
    pub fn desk(input_size: usize) -> Self {
        PipelineConfig {
            train: TrainConfig::desk(input_size),
            selftrain: SelfTrainConfig::default(),
            forest: ForestConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.selftrain.validate()?;
        self.forest.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub struct PipelineOutcome {
    pub slice: SliceSelfTrainOutcome,
    pub volume: VolumeSelfTrainOutcome,
    /// Labeled volumes held out for validation in both stages.
    pub validation_ids: Vec<String>,
}

impl PipelineOutcome {
    pub fn forest(&self) -> &Forest {
        &self.volume.forest
    }

    /// Slice rounds followed by volume rounds, one record per line.
    pub fn trace_text(&self) -> String {
        let mut s = trace_text(&self.slice.trace);
        s.push_str(&trace_text(&self.volume.trace));
        s
    }
}

/// Per-volume feature rows from one network's slice predictions.
pub fn feature_rows(
    network: &NRNet<f32>,
    volumes: &[VolumeInput],
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(volumes.len());
    for (v, preds) in volumes
        .iter()
        .zip(predict_volumes(network, volumes, batch)?)
    {
        if preds.is_empty() {
            return Err(Error::invalid(format!("volume {} has no slices", v.id)));
        }
        rows.push(volume_features(&preds)?.0.to_vec());
    }
    Ok(rows)
}

/// Slice predictions of every volume, grouped by volume.
pub fn predict_volumes(
    network: &NRNet<f32>,
    volumes: &[VolumeInput],
    batch: usize,
) -> Result<Vec<Vec<SlicePrediction>>> {
    let all: Vec<&SliceImage> = volumes
        .iter()
        .flat_map(|v| v.slices.iter().copied())
        .collect();
    let mut preds = predict_all(network, &all, batch)?.into_iter();
    Ok(volumes
        .iter()
        .map(|v| preds.by_ref().take(v.slices.len()).collect())
        .collect())
}

fn require_labels(volumes: &[VolumeInput]) -> Result<Vec<QualityLabel>> {
    volumes
        .iter()
        .map(|v| {
            v.label
                .ok_or_else(|| Error::invalid(format!("labeled volume {} has no label", v.id)))
        })
        .collect()
}

/// The volume stage on its own: features from `network`, labeled volumes
/// keep their labels, unlabeled ones start from the slice-label rules.
pub fn volume_stage(
    network: &NRNet<f32>,
    labeled: &[VolumeInput],
    validation: &[VolumeInput],
    unlabeled: &[VolumeInput],
    config: &PipelineConfig,
    seed: u64,
) -> Result<VolumeSelfTrainOutcome> {
    let batch = config.train.eval_batch;
    let mut x = feature_rows(network, labeled, batch)?;
    let mut y = require_labels(labeled)?;
    for preds in predict_volumes(network, unlabeled, batch)? {
        let labels: Vec<QualityLabel> = preds.iter().map(|p| p.label()).collect();
        y.push(init_volume_label(&labels, config.selftrain.fail_rule)?);
        x.push(volume_features(&preds)?.0.to_vec());
    }
    let vx = feature_rows(network, validation, batch)?;
    let vy = require_labels(validation)?;
    let val = (!vx.is_empty()).then_some((vx.as_slice(), vy.as_slice()));
    volume_self_train(&x, &y, val, &config.selftrain, &config.forest, seed)
}

/// Seed [`run_pipeline`] hands to [`volume_stage`], for rerunning the volume
/// stage under other settings.
pub fn volume_stage_seed(seed: u64) -> u64 {
    derive(seed, VOLUME_STREAM, 0)
}

/// Holds out a stratified share of labeled volumes, runs slice
/// self-training (every slice inherits its volume's label), then volume
/// self-training on features from the final slice network.
pub fn run_pipeline(
    labeled: &[VolumeInput],
    unlabeled: &[VolumeInput],
    config: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let labels = require_labels(labeled)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, SPLIT_STREAM, 0));
    let (train_idx, val_idx) =
        stratified_split(&labels, config.selftrain.validation_fraction, &mut rng);
    let train: Vec<VolumeInput> = train_idx.iter().map(|&i| labeled[i].clone()).collect();
    let val: Vec<VolumeInput> = val_idx.iter().map(|&i| labeled[i].clone()).collect();

    let (train_images, train_labels) = flatten(&train);
    let (val_images, val_labels) = flatten(&val);
    let unlabeled_images: Vec<&SliceImage> = unlabeled
        .iter()
        .flat_map(|v| v.slices.iter().copied())
        .collect();
    let slice = slice_self_train(
        &train_images,
        &train_labels,
        &unlabeled_images,
        &val_images,
        &val_labels,
        &config.train,
        &config.selftrain,
        derive(seed, SLICE_STREAM, 0),
    )?;
    let volume = volume_stage(
        &slice.checkpoint.network,
        &train,
        &val,
        unlabeled,
        config,
        volume_stage_seed(seed),
    )?;
    Ok(PipelineOutcome {
        slice,
        volume,
        validation_ids: val.iter().map(|v| v.id.clone()).collect(),
    })
}

fn flatten<'a>(vols: &[VolumeInput<'a>]) -> (Vec<&'a SliceImage>, Vec<QualityLabel>) {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for v in vols {
        images.extend(v.slices.iter().copied());
        labels.extend(std::iter::repeat_n(
            v.label.unwrap_or(QualityLabel::Pass),
            v.slices.len(),
        ));
    }
    (images, labels)
}

/// Slice ratings and the volume rating of one volume.
pub fn assess_volume(
    network: &NRNet<f32>,
    forest: &Forest,
    slices: &[&SliceImage],
) -> Result<(Vec<SlicePrediction>, SlicePrediction)> {
    let preds = predict_all(network, slices, 64)?;
    let features = volume_features(&preds)?;
    let volume = forest.predict_volume(&features)?;
    Ok((preds, volume))
}

/// Key=value summary of a finished run.
pub fn summary_text(outcome: &PipelineOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "pretrained_validation_accuracy={:.6}",
        outcome.slice.pretrained_validation_accuracy
    );
    let _ = writeln!(
        s,
        "merged_validation_accuracy={:.6}",
        outcome.slice.merged_validation_accuracy
    );
    let _ = writeln!(s, "slice_rounds={}", outcome.slice.trace.len());
    let _ = writeln!(s, "volume_rounds={}", outcome.volume.trace.len());
    let _ = writeln!(s, "validation_volumes={}", outcome.validation_ids.join(","));
    s
}
