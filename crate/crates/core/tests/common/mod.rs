//! Oracle helpers shared by the integration and acceptance suites.
//! These deliberately avoid the code paths they check: finite
//! differences rebuild the forward pass from scratch per coordinate.

#![allow(dead_code)]

use aurum_core::numerics::Tensor;

/// Central finite differences through a forward-rebuild closure.
pub fn finite_difference<F>(forward: F, params: &[Tensor], step: f64) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut grads = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        let mut g = vec![0.0; params[pi].len()];
        for j in 0..params[pi].len() {
            let orig = work[pi].values()[j];
            work[pi].values_mut()[j] = orig + step;
            let up = forward(&work);
            work[pi].values_mut()[j] = orig - step;
            let down = forward(&work);
            work[pi].values_mut()[j] = orig;
            g[j] = (up - down) / (2.0 * step);
        }
        grads.push(Tensor::new(params[pi].shape().to_vec(), g).unwrap());
    }
    grads
}

/// Fraction of coordinates where analytic and numeric gradients agree to
/// the given relative tolerance (with an absolute floor for near-zeros).
pub fn agreement_fraction(analytic: &[Tensor], numeric: &[Tensor], rel_tol: f64) -> f64 {
    let mut total = 0usize;
    let mut ok = 0usize;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.values().iter().zip(n.values()) {
            total += 1;
            let denom = av.abs().max(nv.abs()).max(1e-8);
            if (av - nv).abs() / denom < rel_tol {
                ok += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}
