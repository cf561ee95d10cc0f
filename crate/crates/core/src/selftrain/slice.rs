use std::path::Path;

use super::selection::{
    can_retrain, converged, select_slices, IterationRecord, SelfTrainConfig, Stage,
};
use crate::domain::{
    DatasetManifest, ManifestRecord, QualityLabel, SliceImage, SlicePrediction, Split,
};
use crate::error::{Error, Result};
use crate::nrnet::{Checkpoint, NRNet};
use crate::seed::derive;
use crate::training::{evaluate, predict_all, train_with_validation, TrainConfig};

const PRETRAIN_STREAM: u64 = 0x51;
const RETRAIN_STREAM: u64 = 0x52;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Labeled,
    Pseudo,
}

/// A merged training manifest with the origin of each record.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledManifest {
    pub manifest: DatasetManifest,
    pub provenance: Vec<Provenance>,
}

/// Argmax labels for the images of an unlabeled manifest (relative paths
/// resolved against `base`). Returns the manifest with every record labeled.
pub fn pseudo_label_slices(
    checkpoint: &Checkpoint,
    unlabeled: &DatasetManifest,
    base: &Path,
) -> Result<DatasetManifest> {
    let net = &checkpoint.network;
    let images = unlabeled.load_images(base, net.config().input_size)?;
    let preds = predict_all(net, &images.iter().collect::<Vec<_>>(), 64)?;
    let records = unlabeled
        .records
        .iter()
        .zip(&preds)
        .map(|(r, p)| ManifestRecord {
            label: Some(p.label()),
            ..r.clone()
        })
        .collect();
    DatasetManifest::new(records, Split::Train)
}

/// Union of the labeled records and the pseudo-labeled ones.
pub fn merge_pseudo_labels(
    labeled: &DatasetManifest,
    pseudo: &DatasetManifest,
) -> Result<PseudoLabeledManifest> {
    if labeled
        .records
        .iter()
        .chain(&pseudo.records)
        .any(|r| r.label.is_none())
    {
        return Err(Error::invalid("merged records must all carry labels"));
    }
    let records: Vec<ManifestRecord> = labeled
        .records
        .iter()
        .chain(&pseudo.records)
        .cloned()
        .collect();
    let provenance = std::iter::repeat_n(Provenance::Labeled, labeled.len())
        .chain(std::iter::repeat_n(Provenance::Pseudo, pseudo.len()))
        .collect();
    Ok(PseudoLabeledManifest {
        manifest: DatasetManifest::new(records, Split::Train)?,
        provenance,
    })
}

pub struct SliceSelfTrainOutcome {
    /// The network trained on the labeled slices only.
    pub pretrained: Checkpoint,
    pub checkpoint: Checkpoint,
    pub pretrained_validation_accuracy: f64,
    /// The network retrained on the merged labeled and pseudo-labeled
    /// slices, before any selection round.
    pub merged: Checkpoint,
    pub merged_validation_accuracy: f64,
    pub trace: Vec<IterationRecord>,
    /// Pseudo-labels the pre-trained network gave the unlabeled slices.
    pub pseudo_labels: Vec<QualityLabel>,
    /// Indices into labeled-then-unlabeled order of the slices still in
    /// training after the last round, with their labels.
    pub active: Vec<(usize, QualityLabel)>,
}

/// Pre-trains on the labeled slices, pseudo-labels the unlabeled ones,
/// retrains on the union, then runs predict/select/retrain rounds. Each round
/// predicts with the previous network, keeps slices whose prediction equals their
/// current label with confidence at least `p_slice`, retires the rest, and
/// fine-tunes on the kept slices. A round whose kept set holds fewer than two
/// classes is recorded untrained and ends the loop. `val_*` is a fixed
/// validation set; the returned checkpoint is the merged or retrained network
/// with the best validation accuracy, ties going to the later one.
#[allow(clippy::too_many_arguments)]
pub fn slice_self_train(
    labeled: &[&SliceImage],
    labels: &[QualityLabel],
    unlabeled: &[&SliceImage],
    val_images: &[&SliceImage],
    val_labels: &[QualityLabel],
    train_config: &TrainConfig,
    config: &SelfTrainConfig,
    seed: u64,
) -> Result<SliceSelfTrainOutcome> {
    config.validate()?;
    train_config.validate()?;
    if labeled.len() != labels.len() {
        return Err(Error::invalid("labeled image and label counts differ"));
    }
    let pre = train_with_validation(
        labeled,
        labels,
        val_images,
        val_labels,
        train_config,
        None,
        derive(seed, PRETRAIN_STREAM, 0),
    )?;
    let pretrained_validation_accuracy = pre.best().val_accuracy;
    let pretrained = pre.checkpoint;

    let pseudo: Vec<SlicePrediction> =
        predict_all(&pretrained.network, unlabeled, train_config.eval_batch)?;
    let pseudo_labels: Vec<QualityLabel> = pseudo.iter().map(|p| p.label()).collect();
    let pool: Vec<&SliceImage> = labeled.iter().chain(unlabeled).copied().collect();
    let mut active: Vec<(usize, QualityLabel)> = labels
        .iter()
        .chain(&pseudo_labels)
        .copied()
        .enumerate()
        .collect();

    let retrain_config = TrainConfig {
        epochs: config.retrain_epochs.unwrap_or(train_config.epochs),
        ..train_config.clone()
    };
    let merged_images: Vec<&SliceImage> = active.iter().map(|&(i, _)| pool[i]).collect();
    let merged_labels: Vec<QualityLabel> = active.iter().map(|&(_, l)| l).collect();
    let merged = train_with_validation(
        &merged_images,
        &merged_labels,
        val_images,
        val_labels,
        &retrain_config,
        Some(pretrained.network.clone()),
        derive(seed, RETRAIN_STREAM, 0),
    )?;
    let merged_validation_accuracy = merged.best().val_accuracy;
    let mut network: NRNet<f32> = merged.checkpoint.network.clone();
    let mut checkpoint = merged.checkpoint.clone();
    let mut accuracy = merged_validation_accuracy;
    let (mut best_round, mut best_accuracy) = (0, merged_validation_accuracy);
    let mut trace = Vec::new();
    for iteration in 1..=config.rounds(config.slice_iterations) {
        let images: Vec<&SliceImage> = active.iter().map(|&(i, _)| pool[i]).collect();
        let previous: Vec<QualityLabel> = active.iter().map(|&(_, l)| l).collect();
        let preds = predict_all(&network, &images, train_config.eval_batch)?;
        let selection = select_slices(&previous, &preds, config.p_slice)?;
        let next: Vec<(usize, QualityLabel)> = selection
            .kept()
            .map(|r| (active[r.id].0, r.predicted))
            .collect();
        let record = IterationRecord {
            stage: Stage::Slice,
            iteration,
            active: active.len(),
            kept: selection.kept_count(),
            relabeled: selection.relabeled_count(),
            pruned: selection.pruned_count(),
            validation_accuracy: accuracy,
            retrained: false,
        };
        if !can_retrain(next.iter().map(|&(_, l)| l)) {
            trace.push(record);
            break;
        }
        let images: Vec<&SliceImage> = next.iter().map(|&(i, _)| pool[i]).collect();
        let kept_labels: Vec<QualityLabel> = next.iter().map(|&(_, l)| l).collect();
        let out = train_with_validation(
            &images,
            &kept_labels,
            val_images,
            val_labels,
            &retrain_config,
            Some(network),
            derive(seed, RETRAIN_STREAM, iteration as u64),
        )?;
        let new_accuracy = if val_images.is_empty() {
            f64::NAN
        } else {
            out.best().val_accuracy
        };
        trace.push(IterationRecord {
            validation_accuracy: new_accuracy,
            retrained: true,
            ..record
        });
        network = out.checkpoint.network.clone();
        if !(new_accuracy < best_accuracy) {
            (best_round, best_accuracy) = (iteration, new_accuracy);
            checkpoint = out.checkpoint;
        }
        active = next;
        let stop = converged(iteration, accuracy, new_accuracy, config.min_improvement);
        accuracy = new_accuracy;
        if stop {
            break;
        }
    }
    checkpoint.settings.insert(
        "self_training_rounds".into(),
        trace.iter().filter(|r| r.retrained).count().to_string(),
    );
    checkpoint
        .settings
        .insert("selected_round".into(), best_round.to_string());
    Ok(SliceSelfTrainOutcome {
        pretrained,
        checkpoint,
        pretrained_validation_accuracy,
        merged: merged.checkpoint,
        merged_validation_accuracy,
        trace,
        pseudo_labels,
        active,
    })
}

/// Slice accuracy of `checkpoint` against `labels`.
pub fn slice_accuracy(
    checkpoint: &Checkpoint,
    images: &[&SliceImage],
    labels: &[QualityLabel],
    config: &TrainConfig,
) -> Result<f64> {
    let alpha = [1.0; 3];
    Ok(evaluate(&checkpoint.network, images, labels, config, &alpha)?.0)
}
