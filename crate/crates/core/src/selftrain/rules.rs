use serde::{Deserialize, Serialize};

use crate::domain::QualityLabel;
use crate::error::{Error, Result};

/// How the Fail rule compares the fail count with the other two counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailRule {
    /// Fail count strictly above both the pass and the questionable count.
    #[default]
    Conjunctive,
    /// Fail count strictly above either of them.
    Disjunctive,
}

/// Share of pass slices a volume must strictly exceed to be rated Pass.
pub const PASS_FRACTION: f64 = 0.8;

/// Initial volume rating from its slice labels: Pass when more than 80% of
/// slices pass, else Fail when fail slices outnumber the others (per
/// `rule`), else Questionable.
pub fn init_volume_label(labels: &[QualityLabel], rule: FailRule) -> Result<QualityLabel> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot rate an empty volume"));
    }
    let count = |l| labels.iter().filter(|&&x| x == l).count();
    let (pass, ques, fail) = (
        count(QualityLabel::Pass),
        count(QualityLabel::Questionable),
        count(QualityLabel::Fail),
    );
    if pass as f64 > PASS_FRACTION * labels.len() as f64 {
        return Ok(QualityLabel::Pass);
    }
    let fail_wins = match rule {
        FailRule::Conjunctive => fail > pass && fail > ques,
        FailRule::Disjunctive => fail > pass || fail > ques,
    };
    Ok(if fail_wins {
        QualityLabel::Fail
    } else {
        QualityLabel::Questionable
    })
}

/// [`init_volume_label`] over several volumes.
pub fn init_volume_labels(
    volumes: &[Vec<QualityLabel>],
    rule: FailRule,
) -> Result<Vec<QualityLabel>> {
    volumes.iter().map(|v| init_volume_label(v, rule)).collect()
}
