use crate::domain::{QualityLabel, SlicePrediction, NUM_CLASSES};
use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 13;

/// Slice-count-independent summary of one volume's slice ratings:
/// predicted-label fractions (3), then mean/min/max of each class probability
/// (9, grouped by class), then the number of maximal runs of consecutive
/// Fail predictions divided by the slice count. Only the last feature depends
/// on slice order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeFeatures(pub [f64; NUM_FEATURES]);

impl VolumeFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn fractions(&self) -> [f64; NUM_CLASSES] {
        [self.0[0], self.0[1], self.0[2]]
    }

    /// `(mean, min, max)` of the probability of `label` across slices.
    pub fn probability_summary(&self, label: QualityLabel) -> (f64, f64, f64) {
        let b = 3 + 3 * label.index();
        (self.0[b], self.0[b + 1], self.0[b + 2])
    }

    pub fn fail_runs(&self) -> f64 {
        self.0[12]
    }
}

pub fn volume_features(predictions: &[SlicePrediction]) -> Result<VolumeFeatures> {
    if predictions.is_empty() {
        return Err(Error::invalid("volume has no slice predictions"));
    }
    let n = predictions.len() as f64;
    let mut f = [0.0; NUM_FEATURES];
    for p in predictions {
        f[p.label().index()] += 1.0;
    }
    for v in &mut f[..3] {
        *v /= n;
    }
    for t in 0..NUM_CLASSES {
        let probs = predictions.iter().map(|p| p.probabilities()[t]);
        let b = 3 + 3 * t;
        f[b] = probs.clone().sum::<f64>() / n;
        f[b + 1] = probs.clone().fold(f64::INFINITY, f64::min);
        f[b + 2] = probs.fold(f64::NEG_INFINITY, f64::max);
    }
    let mut runs = 0;
    let mut in_run = false;
    for p in predictions {
        let fail = p.label() == QualityLabel::Fail;
        if fail && !in_run {
            runs += 1;
        }
        in_run = fail;
    }
    f[12] = runs as f64 / n;
    Ok(VolumeFeatures(f))
}
