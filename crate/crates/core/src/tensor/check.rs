//! Central-difference gradient checking.

use crate::error::{DgError, Result};
use crate::scalar::Scalar;
use crate::tensor::{NodeId, Tape, Tensor};

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at `point`.
///
/// `build` records the function on a fresh tape, mapping the input leaf to a
/// scalar loss node; it is re-invoked for every perturbed evaluation, so it
/// must be a pure function of the input tensor. Returns the maximum over
/// coordinates of `|fd - bp| / max(|fd|, |bp|, 1e-8)`.
pub fn finite_difference_check<T, F>(build: F, point: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, NodeId) -> Result<NodeId>,
{
    if eps <= T::zero() {
        return Err(DgError::Contract("finite difference step must be > 0".into()));
    }

    let eval = |x: &Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let loss = build(&mut tape, leaf)?;
        if !tape.value(loss).is_scalar() {
            return Err(DgError::Contract(
                "finite_difference_check requires a scalar-valued function".into(),
            ));
        }
        Ok(tape.value(loss).item())
    };

    // Analytic gradient at the point.
    let analytic = {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let loss = build(&mut tape, leaf)?;
        tape.backward(loss)?.wrt(leaf)
    };

    let floor = T::from_f64_const(1e-8);
    let two = T::from_f64_const(2.0);
    let mut worst = T::zero();
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let fd = (plus - minus) / (two * eps);
        let bp = analytic.data()[i];
        let denom = fd.abs().max(bp.abs()).max(floor);
        let err = (fd - bp).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
