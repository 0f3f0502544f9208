use crate::error::{Error, Result};
use crate::params::{Grads, ParamSet};

/// Central-difference gradient `(f(p + εe) − f(p − εe)) / 2ε` for every
/// coordinate of `params`.
///
/// `f` must be a deterministic function of the parameters; two evaluations at
/// `params` are compared bitwise before differencing.
pub fn finite_diff_grad<F>(mut f: F, params: &ParamSet, epsilon: f64) -> Result<Grads>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut flat = params.flatten();
    let mut grad = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + epsilon;
        let plus = f(&params.unflatten(&flat)?)?;
        flat[i] = orig - epsilon;
        let minus = f(&params.unflatten(&flat)?)?;
        flat[i] = orig;
        grad[i] = (plus - minus) / (2.0 * epsilon);
    }
    Grads::from_flat(params, &grad)
}
