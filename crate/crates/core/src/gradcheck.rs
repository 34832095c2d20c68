//! Central finite-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Symmetric relative error `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    (analytic - numeric).abs() / T::one().max(analytic.abs()).max(numeric.abs())
}

/// Checks a scalar function of a single tensor.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// Checks a scalar function of several tensors at once, returning the
/// largest relative error over every entry of every input.
pub fn grad_check_many<T, F>(f: F, inputs: &[Tensor<T>], eps: T) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    if !(eps > T::zero() && eps <= T::lit(1e-3)) {
        return Err(Error::Contract(format!("eps {eps} outside (0, 1e-3]")));
    }

    let analytic: Vec<Tensor<T>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };

    let eval = |perturbed: &[Tensor<T>]| -> Result<T> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value();
        if v.len() != 1 {
            return Err(Error::Contract(format!(
                "gradient check needs a scalar function, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    };

    let two = T::lit(2.0);
    let mut worst = T::zero();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (k, grad) in analytic.iter().enumerate() {
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].data()[idx];
            work[k].data_mut()[idx] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (two * eps);
            let e = relative_error(grad.data()[idx], numeric);
            // NaN must not be swallowed by max
            if e.is_nan() || e > worst {
                worst = e;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::<f64>::from_rows(&[&[0.3, -1.2], &[2.0, 0.0]]);
        let err = grad_check(|_, v| Ok(v.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn sum_of_squares() {
        let x = Tensor::<f64>::from_rows(&[&[1.0, 2.0]]);
        let err = grad_check(|_, v| Ok(v.mul(v)?.sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::<f64>::from_rows(&[&[1.0, 2.0]]);
        assert!(matches!(
            grad_check(|_, v| Ok(v), &x, 1e-5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn eps_range_enforced() {
        let x = Tensor::<f64>::from_rows(&[&[1.0]]);
        assert!(grad_check(|_, v| Ok(v.sum()), &x, 0.0).is_err());
        assert!(grad_check(|_, v| Ok(v.sum()), &x, 1e-2).is_err());
    }
}
