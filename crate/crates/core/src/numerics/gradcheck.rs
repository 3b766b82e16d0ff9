//! Gradient evaluation over a parameter set and the central-difference check
//! used to validate it.

use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Loss value and its gradient with respect to each tensor in `params`.
///
/// `apply` records the computation on a fresh tape, receiving one parameter
/// node per tensor, and returns the scalar loss node. Anything random inside
/// `apply` (dropout masks, gate noise) must be fixed by the caller so that
/// repeated calls describe the same function.
pub fn grad<F>(apply: F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = apply(&mut tape, &vars)?;
    let value = tape.value(loss).data()[0];
    let mut g = tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.take_or_zeros(v, p))
        .collect();
    Ok((value, grads))
}

/// Loss value only.
pub fn eval_loss<F>(apply: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = apply(&mut tape, &vars)?;
    Ok(tape.value(loss).data()[0])
}

/// Max relative error between reverse-mode gradients and central differences.
pub fn fd_check<F>(apply: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, analytic) = grad(&apply, params)?;
    fd_check_against(apply, params, &analytic, h)
}

/// Same as [`fd_check`] but against caller-supplied gradients.
///
/// Per element the error is `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn fd_check_against<F>(apply: F, params: &[Tensor], analytic: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::dim("fd_check", &[params.len()], &[analytic.len()]));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        if analytic[p].shape() != params[p].shape() {
            return Err(Error::dim("fd_check", params[p].shape(), analytic[p].shape()));
        }
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = eval_loss(&apply, &work)?;
            work[p].data_mut()[i] = orig - h;
            let down = eval_loss(&apply, &work)?;
            work[p].data_mut()[i] = orig;

            let fd = (up - down) / (2.0 * h);
            let ad = analytic[p].data()[i];
            let err = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
