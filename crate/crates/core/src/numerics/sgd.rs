//! Stochastic gradient descent with classical momentum.
//!
//! The update is `v' = momentum * v + g`, `p' = p - lr * v'`, applied
//! elementwise per parameter tensor. [`sgd_step`] is a pure function: it
//! returns fresh parameters and a fresh state, leaving its inputs untouched,
//! so optimizer math composes cleanly with checkpointing and tests.

use super::{NumericsError, Tensor};

#[derive(Debug, Clone)]
pub struct SgdState {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl SgdState {
    /// Zero-velocity state aligned with `params` (one buffer per tensor).
    pub fn new(learning_rate: f64, momentum: f64, params: &[Tensor]) -> Result<Self, NumericsError> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(NumericsError::InvalidArg(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NumericsError::InvalidArg(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocity: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Replace the learning rate (decay schedules); momentum buffers persist.
    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<(), NumericsError> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(NumericsError::InvalidArg(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        self.learning_rate = learning_rate;
        Ok(())
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// One momentum-SGD step over an aligned list of parameters and gradients.
pub fn sgd_step(
    params: &[Tensor],
    grads: &[Tensor],
    state: &SgdState,
) -> Result<(Vec<Tensor>, SgdState), NumericsError> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(NumericsError::InvalidArg(format!(
            "sgd_step alignment: {} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let mut new_params = Vec::with_capacity(params.len());
    let mut new_velocity = Vec::with_capacity(params.len());
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(NumericsError::InvalidArg(format!(
                "sgd_step shape mismatch: param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        let mut vel = Vec::with_capacity(p.numel());
        let mut out = Vec::with_capacity(p.numel());
        for i in 0..p.numel() {
            let nv = state.momentum * v.data()[i] + g.data()[i];
            vel.push(nv);
            out.push(p.data()[i] - state.learning_rate * nv);
        }
        new_velocity.push(Tensor::new(v.shape().to_vec(), vel)?);
        new_params.push(Tensor::new(p.shape().to_vec(), out)?);
    }
    Ok((
        new_params,
        SgdState {
            learning_rate: state.learning_rate,
            momentum: state.momentum,
            velocity: new_velocity,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_steps_with_momentum_hand_unrolled() {
        // p = 0, g = 1 both steps, lr = 0.1, momentum = 0.9:
        // v1 = 1, p1 = -0.1; v2 = 1.9, p2 = -0.29.
        let p = vec![Tensor::scalar(0.0).unwrap()];
        let g = vec![Tensor::scalar(1.0).unwrap()];
        let s = SgdState::new(0.1, 0.9, &p).unwrap();
        let (p1, s1) = sgd_step(&p, &g, &s).unwrap();
        assert!((p1[0].data()[0] + 0.1).abs() < 1e-15);
        let (p2, s2) = sgd_step(&p1, &g, &s1).unwrap();
        assert!((p2[0].data()[0] + 0.29).abs() < 1e-15);
        assert!((s2.velocity()[0].data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_descent() {
        let p = vec![Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::new(vec![2], vec![0.5, 0.5]).unwrap()];
        let s = SgdState::new(0.2, 0.0, &p).unwrap();
        let (p1, _) = sgd_step(&p, &g, &s).unwrap();
        assert_eq!(p1[0].data(), &[0.9, -2.1]);
    }

    #[test]
    fn rejects_bad_hyperparameters_and_misalignment() {
        let p = vec![Tensor::scalar(0.0).unwrap()];
        assert!(SgdState::new(0.0, 0.9, &p).is_err());
        assert!(SgdState::new(0.1, 1.0, &p).is_err());
        assert!(SgdState::new(0.1, -0.1, &p).is_err());
        let s = SgdState::new(0.1, 0.9, &p).unwrap();
        assert!(sgd_step(&p, &[], &s).is_err());
    }

    #[test]
    fn step_does_not_mutate_inputs() {
        let p = vec![Tensor::scalar(3.0).unwrap()];
        let g = vec![Tensor::scalar(1.0).unwrap()];
        let s = SgdState::new(0.1, 0.5, &p).unwrap();
        let _ = sgd_step(&p, &g, &s).unwrap();
        assert_eq!(p[0].data(), &[3.0]);
        assert_eq!(s.velocity()[0].data(), &[0.0]);
    }
}
