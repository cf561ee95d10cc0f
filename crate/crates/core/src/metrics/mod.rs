//! Confusion matrices and one-vs-rest sensitivity/specificity reports, plus
//! the tab-separated prediction file written by assessment and read by
//! evaluation.

mod predictions;

use std::fmt::Write as _;

use crate::domain::{QualityLabel, NUM_CLASSES};
use crate::error::{Error, Result};

pub use predictions::{
    format_predictions, load_predictions, parse_predictions, PredictionRecord, VOLUME_ROW,
};

/// Rows are actual classes, columns predicted classes. Samples whose actual
/// class is excluded are not counted, and excluded classes get no metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub excluded: [bool; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(
        counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
        excluded: [bool; NUM_CLASSES],
    ) -> Self {
        let mut counts = counts;
        for (t, row) in counts.iter_mut().enumerate() {
            if excluded[t] {
                *row = [0; NUM_CLASSES];
            }
        }
        ConfusionMatrix { counts, excluded }
    }

    pub fn get(&self, actual: QualityLabel, predicted: QualityLabel) -> u64 {
        self.counts[actual.index()][predicted.index()]
    }

    pub fn support(&self, actual: QualityLabel) -> u64 {
        self.counts[actual.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|t| self.counts[t][t]).sum()
    }
}

/// Mask excluding the given classes.
pub fn exclude(classes: &[QualityLabel]) -> [bool; NUM_CLASSES] {
    let mut m = [false; NUM_CLASSES];
    for c in classes {
        m[c.index()] = true;
    }
    m
}

pub fn confusion(
    predictions: &[QualityLabel],
    truths: &[QualityLabel],
    excluded: [bool; NUM_CLASSES],
) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix {
        excluded,
        ..Default::default()
    };
    for (p, t) in predictions.iter().zip(truths) {
        if !excluded[t.index()] {
            cm.counts[t.index()][p.index()] += 1;
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub label: QualityLabel,
    pub support: u64,
    pub excluded: bool,
    /// `None` when the denominator is zero or the class is excluded.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub classes: [ClassMetrics; NUM_CLASSES],
    /// `None` for an empty matrix.
    pub accuracy: Option<f64>,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Sensitivity `TP/actual` and specificity `TN/(TN+FP)` per class, one
/// against the rest over the included rows; accuracy is trace over total.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let classes = QualityLabel::ALL.map(|label| {
        let t = label.index();
        let support = cm.support(label);
        if cm.excluded[t] {
            return ClassMetrics {
                label,
                support,
                excluded: true,
                sensitivity: None,
                specificity: None,
            };
        }
        let (mut tn, mut fp) = (0, 0);
        for (a, row) in cm.counts.iter().enumerate() {
            if a == t || cm.excluded[a] {
                continue;
            }
            fp += row[t];
            tn += row.iter().sum::<u64>() - row[t];
        }
        ClassMetrics {
            label,
            support,
            excluded: false,
            sensitivity: ratio(cm.counts[t][t], support),
            specificity: ratio(tn, tn + fp),
        }
    });
    MetricsReport {
        classes,
        accuracy: ratio(cm.trace(), cm.total()),
        total: cm.total(),
    }
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    pub fn class(&self, label: QualityLabel) -> &ClassMetrics {
        &self.classes[label.index()]
    }

    /// Whether any included metric has a zero denominator.
    pub fn has_undefined(&self) -> bool {
        self.accuracy.is_none()
            || self
                .classes
                .iter()
                .any(|c| !c.excluded && (c.sensitivity.is_none() || c.specificity.is_none()))
    }

    pub fn to_table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = writeln!(
            s,
            "{:<14}{:>9}{:>13}{:>13}",
            "class", "support", "sensitivity", "specificity"
        );
        for c in &self.classes {
            if c.excluded {
                let _ = writeln!(
                    s,
                    "{:<14}{:>9}{:>13}{:>13}",
                    c.label.as_str(),
                    "-",
                    "-",
                    "-"
                );
            } else {
                let _ = writeln!(
                    s,
                    "{:<14}{:>9}{:>13}{:>13}",
                    c.label.as_str(),
                    c.support,
                    show(c.sensitivity),
                    show(c.specificity)
                );
            }
        }
        let _ = writeln!(
            s,
            "accuracy {} over {} samples",
            show(self.accuracy),
            self.total
        );
        s
    }

    /// One `key=value` line per metric, keys prefixed with `prefix`.
    pub fn to_key_values(&self, prefix: &str) -> String {
        let full =
            |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        for c in self.classes.iter().filter(|c| !c.excluded) {
            let name = c.label.as_str();
            let _ = writeln!(s, "{prefix}{name}.support={}", c.support);
            let _ = writeln!(s, "{prefix}{name}.sensitivity={}", full(c.sensitivity));
            let _ = writeln!(s, "{prefix}{name}.specificity={}", full(c.specificity));
        }
        let _ = writeln!(s, "{prefix}accuracy={}", full(self.accuracy));
        let _ = writeln!(s, "{prefix}total={}", self.total);
        let _ = writeln!(s, "{prefix}undefined={}", self.has_undefined());
        s
    }
}

pub fn confusion_text(cm: &ConfusionMatrix) -> String {
    let mut s = format!(
        "{:<14}{:>8}{:>14}{:>8}\n",
        "actual\\pred", "pass", "questionable", "fail"
    );
    for label in QualityLabel::ALL {
        let r = cm.counts[label.index()];
        if cm.excluded[label.index()] {
            let _ = writeln!(s, "{:<14}{:>8}{:>14}{:>8}", label.as_str(), "-", "-", "-");
        } else {
            let _ = writeln!(
                s,
                "{:<14}{:>8}{:>14}{:>8}",
                label.as_str(),
                r[0],
                r[1],
                r[2]
            );
        }
    }
    s
}
