use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::rules::FailRule;
use crate::domain::{QualityLabel, SlicePrediction, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    pub p_slice: f64,
    pub p_volume: f64,
    pub slice_iterations: usize,
    pub volume_iterations: usize,
    /// Hard cap on either iteration count.
    pub max_iterations: usize,
    /// From the second iteration on, a round whose validation accuracy gains
    /// less than this over the previous round ends the loop.
    pub min_improvement: f64,
    pub fail_rule: FailRule,
    /// Epochs per slice retraining round; `None` uses the training config's.
    pub retrain_epochs: Option<usize>,
    /// Share of labeled volumes (per class) held out for validation.
    pub validation_fraction: f64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            p_slice: 0.8,
            p_volume: 0.8,
            slice_iterations: 2,
            volume_iterations: 2,
            max_iterations: 5,
            min_improvement: 0.005,
            fail_rule: FailRule::default(),
            retrain_epochs: None,
            validation_fraction: 0.1,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        if !open_unit(self.p_slice) || !open_unit(self.p_volume) {
            return Err(Error::Config(
                "confidence thresholds must lie in (0, 1)".into(),
            ));
        }
        if self.slice_iterations == 0 || self.volume_iterations == 0 || self.max_iterations == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if self.retrain_epochs == Some(0) {
            return Err(Error::Config("retrain_epochs must be at least 1".into()));
        }
        if !(self.min_improvement.is_finite() && (0.0..1.0).contains(&self.validation_fraction)) {
            return Err(Error::Config(
                "bad min_improvement or validation_fraction".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn rounds(&self, requested: usize) -> usize {
        requested.min(self.max_iterations)
    }
}

/// Whether to stop after round `iteration` given the validation accuracies
/// before and after it.
pub(crate) fn converged(iteration: usize, before: f64, after: f64, min_improvement: f64) -> bool {
    iteration >= 2 && before.is_finite() && after.is_finite() && after - before < min_improvement
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    KeptRelabel,
    Pruned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabelRecord {
    pub id: usize,
    pub previous: QualityLabel,
    pub predicted: QualityLabel,
    pub confidence: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub records: Vec<PseudoLabelRecord>,
}

impl Selection {
    pub fn kept(&self) -> impl Iterator<Item = &PseudoLabelRecord> {
        self.records
            .iter()
            .filter(|r| r.decision == Decision::KeptRelabel)
    }

    pub fn pruned(&self) -> impl Iterator<Item = &PseudoLabelRecord> {
        self.records
            .iter()
            .filter(|r| r.decision == Decision::Pruned)
    }

    pub fn kept_count(&self) -> usize {
        self.kept().count()
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned().count()
    }

    /// Kept items whose new label differs from the previous one.
    pub fn relabeled_count(&self) -> usize {
        self.kept().filter(|r| r.predicted != r.previous).count()
    }
}

/// Keeps item `i` with label `predictions[i].label()` iff that label equals
/// `previous[i]` and its probability is at least `threshold`; prunes the rest.
/// Record ids are positions in the inputs.
pub fn select(
    previous: &[QualityLabel],
    predictions: &[SlicePrediction],
    threshold: f64,
) -> Result<Selection> {
    if previous.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} previous labels but {} predictions",
            previous.len(),
            predictions.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let records = previous
        .iter()
        .zip(predictions)
        .enumerate()
        .map(|(id, (&prev, p))| {
            let stable = p.label() == prev;
            let confident = p.confidence() >= threshold;
            PseudoLabelRecord {
                id,
                previous: prev,
                predicted: p.label(),
                confidence: p.confidence(),
                decision: if stable && confident {
                    Decision::KeptRelabel
                } else {
                    Decision::Pruned
                },
            }
        })
        .collect();
    Ok(Selection { records })
}

/// Slice-level selection with the slice threshold.
pub fn select_slices(
    previous: &[QualityLabel],
    predictions: &[SlicePrediction],
    p_slice: f64,
) -> Result<Selection> {
    select(previous, predictions, p_slice)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Slice,
    Volume,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Slice => "slice",
            Stage::Volume => "volume",
        }
    }
}

/// One relabel/prune/retrain round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub stage: Stage,
    pub iteration: usize,
    /// Items entering the round.
    pub active: usize,
    pub kept: usize,
    pub relabeled: usize,
    pub pruned: usize,
    /// NaN when there is nothing to validate on.
    pub validation_accuracy: f64,
    /// False when the kept set held fewer than two classes; the stage then
    /// stops and keeps the previous model.
    pub retrained: bool,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage={} iteration={} active={} kept={} relabeled={} pruned={} validation_accuracy={:.6} retrained={}",
            self.stage.as_str(),
            self.iteration,
            self.active,
            self.kept,
            self.relabeled,
            self.pruned,
            self.validation_accuracy,
            self.retrained
        )
    }
}

pub fn trace_text(records: &[IterationRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{r}");
    }
    s
}

pub(crate) fn all_pruned(stage: Stage, iteration: usize, selection: &Selection) -> Error {
    let mut by_reason = [0usize; 2];
    for r in selection.pruned() {
        by_reason[usize::from(r.predicted == r.previous)] += 1;
    }
    Error::Protocol(format!(
        "{} self-training iteration {iteration} pruned all {} items ({} label changes, {} below the confidence threshold)",
        stage.as_str(),
        selection.records.len(),
        by_reason[0],
        by_reason[1]
    ))
}

/// Whether a kept set can be trained on: at least two classes present.
pub(crate) fn can_retrain(labels: impl IntoIterator<Item = QualityLabel>) -> bool {
    let mut seen = [false; NUM_CLASSES];
    labels.into_iter().for_each(|l| seen[l.index()] = true);
    seen.iter().filter(|&&b| b).count() >= 2
}
