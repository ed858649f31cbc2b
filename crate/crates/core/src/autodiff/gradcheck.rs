use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error("function evaluation failed: {0}")]
    Tensor(#[from] TensorError),
    #[error("non-finite value while perturbing element {index}")]
    NonFinite { index: usize },
    #[error("function output is not a scalar")]
    NotScalar,
}

/// Largest relative disagreement between the tape gradient of `f` at `point`
/// and central finite differences with step `epsilon`.
///
/// The per-element error is `|a − n| / max(1e−12, |a| + |n|)`.
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let all: Vec<usize> = (0..point.len()).collect();
    grad_check_at(f, point, epsilon, &all)
}

/// [`grad_check`] restricted to a subset of element indices.
pub fn grad_check_at<F>(
    f: F,
    point: &Tensor,
    epsilon: f64,
    indices: &[usize],
) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let out = f(&mut tape, x)?;
    if tape.value(out).len() != 1 {
        return Err(GradCheckError::NotScalar);
    }
    tape.backward(out)?;
    let analytic = tape
        .grad(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor, index: usize| -> Result<f64, GradCheckError> {
        let mut t = Tape::new();
        let v = t.constant(p);
        let o = f(&mut t, v)?;
        let value = t.value(o).data()[0];
        if !value.is_finite() {
            return Err(GradCheckError::NonFinite { index });
        }
        Ok(value)
    };

    let mut worst = 0.0f64;
    for &i in indices {
        let mut plus = point.clone();
        plus.data_mut()[i] += epsilon;
        let mut minus = point.clone();
        minus.data_mut()[i] -= epsilon;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * epsilon);
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(GradCheckError::NonFinite { index: i });
        }
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Outcome of [`grad_check_piecewise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiecewiseCheck {
    /// Largest relative error over the elements checked by central
    /// differences.
    pub max_rel_error: f64,
    pub compared: usize,
    /// Largest relative error of a kink element against the closer of its
    /// two second-order one-sided slopes.
    pub max_one_sided_error: f64,
    /// Elements whose `±ε` window straddles a kink of `f`.
    pub kinks: usize,
}

/// [`grad_check`] for piecewise-smooth functions (ReLU, max-pool).
///
/// Central differences are meaningless when `x ± ε` lands on different
/// pieces. Such elements are recognised from the numbers alone: the forward
/// and backward one-sided slopes disagree by more than
/// `kink_tol·(|fwd| + |bwd|)`. The gradient at `x` belongs to the piece
/// containing `x`, which is one of the two sides, so a kink element is
/// instead compared with the closer of the one-sided differences
/// `±(4·f(x ± ε/2) − f(x ± ε) − 3·f(x)) / ε`.
pub fn grad_check_piecewise<F>(
    f: F,
    point: &Tensor,
    epsilon: f64,
    kink_tol: f64,
) -> Result<PiecewiseCheck, GradCheckError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let out = f(&mut tape, x)?;
    if tape.value(out).len() != 1 {
        return Err(GradCheckError::NotScalar);
    }
    let f0 = tape.value(out).data()[0];
    tape.backward(out)?;
    let analytic = tape
        .grad(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor, index: usize| -> Result<f64, GradCheckError> {
        let mut t = Tape::new();
        let v = t.constant(p);
        let o = f(&mut t, v)?;
        let value = t.value(o).data()[0];
        if !value.is_finite() {
            return Err(GradCheckError::NonFinite { index });
        }
        Ok(value)
    };
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-12);

    let mut report = PiecewiseCheck {
        max_rel_error: 0.0,
        compared: 0,
        max_one_sided_error: 0.0,
        kinks: 0,
    };
    for i in 0..point.len() {
        let a = analytic.data()[i];
        if !a.is_finite() {
            return Err(GradCheckError::NonFinite { index: i });
        }
        let mut plus = point.clone();
        plus.data_mut()[i] += epsilon;
        let mut minus = point.clone();
        minus.data_mut()[i] -= epsilon;
        let (fp, fm) = (eval(plus, i)?, eval(minus, i)?);
        let (fwd, bwd) = ((fp - f0) / epsilon, (f0 - fm) / epsilon);
        if (fwd - bwd).abs() > kink_tol * (fwd.abs() + bwd.abs()).max(1e-12) {
            report.kinks += 1;
            let half = |sign: f64| -> Result<f64, GradCheckError> {
                let mut p = point.clone();
                p.data_mut()[i] += sign * epsilon / 2.0;
                eval(p, i)
            };
            let fwd2 = (4.0 * half(1.0)? - fp - 3.0 * f0) / epsilon;
            let bwd2 = -(4.0 * half(-1.0)? - fm - 3.0 * f0) / epsilon;
            report.max_one_sided_error = report
                .max_one_sided_error
                .max(rel(a, fwd2).min(rel(a, bwd2)));
            continue;
        }
        report.compared += 1;
        report.max_rel_error = report
            .max_rel_error
            .max(rel(a, (fp - fm) / (2.0 * epsilon)));
    }
    Ok(report)
}
