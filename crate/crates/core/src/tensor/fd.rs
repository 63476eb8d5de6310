use alloc::vec::Vec;

use super::{Tape, Tensor};
use crate::contract_err;
use crate::error::{Error, Result};

/// Compare the taped gradient of `f` at `x` against central finite
/// differences, coordinate by coordinate.
///
/// Returns the max over coordinates of |a−n| / max(1, |a|, |n|) where `a`
/// is the analytic gradient and `n` the numeric one. `f` must produce a
/// finite scalar everywhere in the eps-ball around `x`.
pub fn fd_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(contract_err!("fd_check eps must be positive, got {eps}"));
    }
    let tape = Tape::new();
    let watched = tape.watch(x);
    let out = f(&tape, &watched)?;
    let center = out.item()?;
    if !center.is_finite() {
        return Err(Error::evaluation(format_args!("f(x) is not finite: {center}")));
    }
    let analytic = tape.backward(&out)?.grad(&watched)?;

    let eval = |data: Vec<f64>| -> Result<f64> {
        let probe = Tensor::from_vec(x.shape().to_vec(), data)?;
        let v = f(&Tape::new(), &probe)?.item()?;
        if !v.is_finite() {
            return Err(Error::evaluation(format_args!("f(x±eps) is not finite: {v}")));
        }
        Ok(v)
    };

    let mut max_err: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        plus[i] += eps;
        let mut minus = x.data().to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
