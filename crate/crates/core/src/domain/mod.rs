//! Shared vocabulary: quality labels, slice images, predictions and the
//! dataset manifest.

mod image;
mod manifest;
pub mod pgm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use image::{minmax_normalize, pad_to_size, SliceImage, VolumeStack};
pub use manifest::{
    load_manifest, load_truth, parse_manifest, parse_truth, save_manifest, save_truth,
    DatasetManifest, ManifestRecord, Split, TruthRecord,
};

pub const NUM_CLASSES: usize = 3;

/// Three-level quality rating. The declaration order is the tie-break order
/// used by every argmax in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLabel {
    Pass,
    Questionable,
    Fail,
}

impl QualityLabel {
    pub const ALL: [QualityLabel; NUM_CLASSES] = [
        QualityLabel::Pass,
        QualityLabel::Questionable,
        QualityLabel::Fail,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLabel::Pass => "pass",
            QualityLabel::Questionable => "questionable",
            QualityLabel::Fail => "fail",
        }
    }
}

impl fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QualityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pass" => Ok(QualityLabel::Pass),
            "questionable" => Ok(QualityLabel::Questionable),
            "fail" => Ok(QualityLabel::Fail),
            other => Err(Error::invalid(format!("unknown quality label {other:?}"))),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for one slice (or one volume) plus the argmax label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePrediction {
    probabilities: [f64; NUM_CLASSES],
    label: QualityLabel,
}

impl SlicePrediction {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probabilities: [f64; NUM_CLASSES]) -> Result<Self> {
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!(
                "probabilities must be finite and non-negative, got {probabilities:?}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        let label = QualityLabel::ALL[argmax(&probabilities)];
        Ok(SlicePrediction {
            probabilities,
            label,
        })
    }

    pub fn probabilities(&self) -> [f64; NUM_CLASSES] {
        self.probabilities
    }

    pub fn label(&self) -> QualityLabel {
        self.label
    }

    pub fn probability(&self, label: QualityLabel) -> f64 {
        self.probabilities[label.index()]
    }

    /// Probability of the predicted label.
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.label.index()]
    }
}
