use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the tape gradient of scalar `f` at `at` with central differences
/// `(f(x+h) - f(x-h)) / 2h`, element by element. The relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<T, F>(f: F, at: &Tensor<T>, step: f64) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    finite_diff_check_with_floor(f, at, step, 1e-8)
}

/// [`finite_diff_check`] with a caller-chosen denominator floor. Gradients
/// smaller than `floor` are then judged by absolute error, which keeps
/// rounding noise in `f` from dominating near-zero entries.
pub fn finite_diff_check_with_floor<T, F>(
    f: F,
    at: &Tensor<T>,
    step: f64,
    floor: f64,
) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(at.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let zeros = Tensor::zeros(at.shape());
    let analytic = grads.get(x).unwrap_or(&zeros);

    let eval = |point: Tensor<T>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(point);
        let o = f(&mut t, v)?;
        if !t.value(o).is_scalar() {
            return Err(Error::invalid("finite-difference target must be scalar"));
        }
        Ok(t.value(o).item().as_f64())
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..at.len() {
        let mut plus = at.clone();
        plus.data_mut()[i] = T::lit(at.data()[i].as_f64() + step);
        let mut minus = at.clone();
        minus.data_mut()[i] = T::lit(at.data()[i].as_f64() - step);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(floor);
        let err = (a - numeric).abs() / denom;
        if err > report.max_rel_error || i == 0 {
            report = GradCheck {
                max_rel_error: err,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_test_on_sum_of_squares() {
        let at = Tensor::<f64>::from_f64(&[5], &[0.3, -1.2, 2.5, 0.0, 7.0]).unwrap();
        let r = finite_diff_check(|t, x| Ok(t.sum_squares(x)), &at, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }
}
