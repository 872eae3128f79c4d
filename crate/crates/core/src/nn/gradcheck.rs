//! Finite-difference verification of [`Mlp::backward`].

use super::Mlp;
use crate::{Error, Result};

/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-5;

/// Worst relative error between backprop and central differences over every
/// parameter. `loss` maps logits to `(value, d value / d logits)`.
pub fn grad_check<F>(net: &Mlp, input: &[f64], loss: F) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (logits, cache) = net.forward(input)?;
    let (_, upstream) = loss(&logits);
    let analytic = net.backward(&cache, &upstream)?;
    grad_check_against(net, input, |l| loss(l).0, &analytic)
}

/// Compares a supplied gradient against central differences of `loss`.
pub fn grad_check_against<F>(net: &Mlp, input: &[f64], loss: F, analytic: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != net.num_params() {
        return Err(Error::domain(format!(
            "analytic gradient has length {}, network has {} parameters",
            analytic.len(),
            net.num_params()
        )));
    }
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (k, &ga) in analytic.iter().enumerate() {
        let original = probe.params()[k];
        probe.params_mut()[k] = original + FD_EPSILON;
        let plus = loss(&probe.forward(input)?.0);
        probe.params_mut()[k] = original - FD_EPSILON;
        let minus = loss(&probe.forward(input)?.0);
        probe.params_mut()[k] = original;
        let gn = (plus - minus) / (2.0 * FD_EPSILON);
        let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
