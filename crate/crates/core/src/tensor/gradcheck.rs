use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of `f` at `x` against central differences.
///
/// Returns the largest `|analytic - numeric| / max(1, |numeric|)` over all
/// elements of `x`.
pub fn gradient_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    gradient_check_at(f, x, eps, &all)
}

/// [`gradient_check`] restricted to the element indices in `at`.
pub fn gradient_check_at<F>(f: F, x: &Tensor, eps: f64, at: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let loss = f(&mut tape, v)?;
    let analytic = tape.backward(loss)?.get_or_zeros(v, x);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::inference();
        let v = tape.leaf(probe.clone());
        let out = f(&mut tape, v)?;
        tape.value(out)
            .item()
            .ok_or_else(|| Error::Usage("gradient_check: f must return a scalar".into()))
    };

    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for &i in at {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
