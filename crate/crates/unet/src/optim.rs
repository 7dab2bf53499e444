use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-8;

/// RMSprop without momentum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsProp<T> {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_square: Vec<T>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(learning_rate: f64, len: usize) -> Self {
        Self {
            learning_rate,
            decay: RMSPROP_DECAY,
            epsilon: RMSPROP_EPSILON,
            mean_square: vec![T::zero(); len],
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.mean_square.len());
        let (rho, lr, eps) = (T::of(self.decay), T::of(self.learning_rate), T::of(self.epsilon));
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.mean_square) {
            *v = rho * *v + (T::one() - rho) * g * g;
            *p = *p - lr * g / (v.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_by_hand() {
        let mut opt = RmsProp::<f64>::new(0.01, 2);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[2.0, 0.0]);
        // v = 0.1 * 4, step = 0.01 * 2 / (sqrt(0.4) + 1e-8)
        assert!((p[0] - (1.0 - 0.02 / (0.4f64.sqrt() + 1e-8))).abs() < 1e-15);
        assert_eq!(p[1], -1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = RmsProp::<f64>::new(0.05, 1);
        let mut p = vec![3.0];
        for _ in 0..500 {
            let g = 2.0 * p[0];
            opt.step(&mut p, &[g]);
        }
        assert!(p[0].abs() < 0.1);
    }
}
