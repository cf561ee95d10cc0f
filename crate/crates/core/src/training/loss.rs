use serde::{Deserialize, Serialize};

use crate::domain::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// `alpha_t = max(N) / N_t`; the majority class gets weight 1.
pub fn class_weights(counts: [usize; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    if let Some(t) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateClass(format!(
            "class {t} has no samples; drop or merge it before weighting"
        )));
    }
    let max = *counts.iter().max().expect("three classes") as f64;
    Ok(counts.map(|n| max / n as f64))
}

/// Weights for the classes present; absent classes get weight 1, which
/// never enters the loss because no sample carries them. At least two
/// classes must be present.
pub fn present_class_weights(counts: [usize; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(Error::DegenerateClass(format!(
            "training needs at least two classes, counts are {counts:?}"
        )));
    }
    let max = *counts.iter().max().expect("three classes") as f64;
    Ok(counts.map(|n| if n == 0 { 1.0 } else { max / n as f64 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossConfig {
    /// Focusing exponent.
    pub kappa: f64,
    /// L2 coefficient on the convolution kernels.
    pub lambda_reg: f64,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig {
            kappa: 2.0,
            lambda_reg: 0.01,
        }
    }
}

impl FocalLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !(self.lambda_reg >= 0.0) {
            return Err(Error::Config(
                "focal loss needs kappa >= 0 and lambda >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// `-alpha_t (1 - p_t)^kappa log p_t + lambda / (2 n_w) sum ||w||^2` for one
/// probability vector, with `p_t` clamped to `[1e-12, 1]` and `n_w` the
/// number of weight tensors.
pub fn focal_loss(
    probabilities: &[f64],
    target: usize,
    alpha: &[f64; NUM_CLASSES],
    config: &FocalLossConfig,
    weights: &[&Tensor<f64>],
) -> Result<f64> {
    if probabilities.len() != NUM_CLASSES {
        return Err(Error::shape(format!(
            "expected {NUM_CLASSES} probabilities"
        )));
    }
    if target >= NUM_CLASSES {
        return Err(Error::invalid(format!(
            "target class {target} out of range"
        )));
    }
    let (term, _) = crate::tensor::focal_term(probabilities[target], alpha[target], config.kappa);
    Ok(term + l2_term(config.lambda_reg, weights.iter().map(|w| w.sum_squares())))
}

fn l2_term(lambda: f64, squares: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = squares.len();
    if n == 0 || lambda == 0.0 {
        return 0.0;
    }
    lambda / (2.0 * n as f64) * squares.sum::<f64>()
}

/// Batch-mean focal loss plus the L2 penalty over `weights`, on the tape.
pub fn focal_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    probs: Var,
    targets: &[usize],
    alpha: &[f64; NUM_CLASSES],
    config: &FocalLossConfig,
    weights: &[Var],
) -> Result<Var> {
    let alpha: Vec<T> = alpha.iter().map(|&a| T::lit(a)).collect();
    let focal = tape.focal_loss(probs, targets, &alpha, T::lit(config.kappa))?;
    if weights.is_empty() || config.lambda_reg == 0.0 {
        return Ok(focal);
    }
    let scale = T::lit(config.lambda_reg / (2.0 * weights.len() as f64));
    let mut total = focal;
    for &w in weights {
        let sq = tape.sum_squares(w);
        let term = tape.scale(sq, scale);
        total = tape.add(total, term)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        assert_eq!(class_weights([100, 50, 25]).unwrap(), [1.0, 2.0, 4.0]);
        assert_eq!(class_weights([10, 10, 10]).unwrap(), [1.0; 3]);
        let w = class_weights([1500, 540, 360]).unwrap();
        assert!((w[1] - 2.777_777_777_8).abs() < 1e-9 && (w[2] - 4.166_666_666_7).abs() < 1e-9);
        assert!(matches!(
            class_weights([3, 0, 1]),
            Err(Error::DegenerateClass(_))
        ));
        assert_eq!(present_class_weights([4, 0, 2]).unwrap(), [1.0, 1.0, 2.0]);
        assert!(present_class_weights([4, 0, 0]).is_err());
    }

    #[test]
    fn loss_examples() {
        let cfg = |kappa| FocalLossConfig {
            kappa,
            lambda_reg: 0.0,
        };
        let ones = [1.0; 3];
        let ce = focal_loss(&[0.5, 0.25, 0.25], 0, &ones, &cfg(0.0), &[]).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12);
        let v = focal_loss(&[0.9, 0.05, 0.05], 0, &ones, &cfg(2.0), &[]).unwrap();
        assert!((v - 0.01 * -(0.9f64.ln())).abs() < 1e-15);
        assert!((v - 1.0536e-3).abs() < 1e-7);
        for k in [0.0, 0.5, 2.0, 5.0] {
            assert_eq!(
                focal_loss(&[0.0, 0.0, 1.0], 2, &ones, &cfg(k), &[]).unwrap(),
                0.0
            );
        }
        assert!(matches!(
            focal_loss(&[0.2, 0.3, 0.5], 3, &ones, &cfg(2.0), &[]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn l2_divides_by_weight_count() {
        let a = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let b = Tensor::from_f64(&[1], &[3.0]).unwrap();
        let cfg = FocalLossConfig {
            kappa: 0.0,
            lambda_reg: 0.5,
        };
        let v = focal_loss(&[1.0, 0.0, 0.0], 0, &[1.0; 3], &cfg, &[&a, &b]).unwrap();
        assert!((v - 0.5 / 4.0 * 14.0).abs() < 1e-12);
    }
}
