use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Tensor,
    pub numeric: Tensor,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

const STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-4;

/// Checks the gradient of the scalar program `f` with respect to its input at
/// `point`, one coordinate at a time with step `1e-5`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn grad_check<F>(f: F, point: &Tensor, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone());
        let y = f(&mut tape, x)?;
        let v = tape.value(y);
        if v.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar program, got {:?}",
                v.shape()
            )));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    let analytic = tape.backward(y)?.wrt(&tape, x);

    let mut numeric = Tensor::zeros(point.rows(), point.cols());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - STEP;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = (up - down) / (2.0 * STEP);
    }

    let mut max_rel_error = 0.0f64;
    let mut max_abs_error = 0.0f64;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let abs = (a - n).abs();
        max_abs_error = max_abs_error.max(abs);
        max_rel_error = max_rel_error.max(abs / a.abs().max(n.abs()).max(REL_FLOOR));
    }
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        max_abs_error,
        tolerance,
    })
}
