//! Adaptive-moment optimizer with bias correction.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            moments: params
                .iter()
                .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer step over a parameter list. Deterministic: a fixed
/// traversal order and no data-dependent branching.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.moments.len() {
        return Err(Error::Shape(format!(
            "adam_step got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.moments.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "adam_step parameter {i}: shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.moments.iter_mut())
    {
        let pv = p.values_mut();
        for j in 0..pv.len() {
            let gj = g.values()[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            pv[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params[0].clone();
        let grads = vec![Tensor::zeros(vec![3])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(params[0], before);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        // Bias correction makes the very first update lr * g/(|g| + eps').
        let lr = 0.05;
        let mut params = vec![Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()];
        let grads = vec![Tensor::new(vec![2], vec![3.0, -0.25]).unwrap()];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, lr, 0.9, 0.999, 1e-8).unwrap();
        assert!((params[0].values()[0] + lr).abs() < 1e-6);
        assert!((params[0].values()[1] - lr).abs() < 1e-6);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut rng = crate::numerics::Rng::new(21);
            let mut params = vec![Tensor::new(
                vec![4],
                (0..4).map(|_| rng.standard_normal()).collect(),
            )
            .unwrap()];
            let mut state = AdamState::new(&params);
            for _ in 0..50 {
                let grads = vec![Tensor::new(
                    vec![4],
                    (0..4).map(|_| rng.standard_normal()).collect(),
                )
                .unwrap()];
                adam_step(&mut params, &grads, &mut state, 0.01, 0.9, 0.999, 1e-8).unwrap();
            }
            params[0].values().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::zeros(vec![3])];
        let grads = vec![Tensor::zeros(vec![4])];
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8),
            Err(Error::Shape(_))
        ));
    }
}
