use crate::{AfsError, Result};

use super::tape::{Tape, ValueId};
use super::tensor::Tensor;

/// Checks the recorded gradient of a scalar-valued function against central
/// finite differences.
///
/// The function is rebuilt on a fresh tape for each evaluation. Per
/// coordinate, the difference step is `step * max(1, |x_i|)` and the error
/// is `|analytic - numeric| / max(1, |analytic|)`; the maximum over all
/// coordinates is returned.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(AfsError::BadStep { step });
    }

    let analytic = {
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let y = f(&mut tape, xid)?;
        if !tape.value(y).is_scalar() {
            return Err(AfsError::NotScalar {
                context: "grad_check function output",
                shape: tape.value(y).shape().to_vec(),
            });
        }
        tape.backward(y)?;
        tape.adjoint(xid)?
    };

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let xid = tape.leaf(Tensor::new(x.shape().to_vec(), data)?);
        let y = f(&mut tape, xid)?;
        Ok(tape.value(y).item())
    };

    let mut max_rel = 0.0_f64;
    for i in 0..x.len() {
        let h = step * x.data()[i].abs().max(1.0);
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
