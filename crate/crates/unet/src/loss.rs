//! Binary cross entropy on sigmoid probabilities.

use serde::Serialize;

use crate::error::{Result, UnetError};
use crate::model::sigmoid;
use crate::scalar::Scalar;

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` before the log.
pub const EPSILON: f64 = 1e-7;

/// One pixel's loss, spelled out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    pub x: f64,
    pub z: f64,
    pub g: f64,
    pub loss: f64,
}

pub fn loss_terms(x: f64, z: f64) -> LossTerms {
    let g = sigmoid(x);
    LossTerms {
        x,
        z,
        g,
        loss: pixel_loss(g, z),
    }
}

fn pixel_loss<T: Scalar>(p: T, z: T) -> T {
    let eps = T::of(EPSILON);
    let p = p.max(eps).min(T::one() - eps);
    -(z * p.ln() + (T::one() - z) * (T::one() - p).ln())
}

fn check(probs: &[impl Sized], labels: &[impl Sized]) -> Result<()> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(UnetError::Shape(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mean loss over every pixel of the batch.
pub fn bce_loss<T: Scalar>(probs: &[T], labels: &[T]) -> Result<T> {
    check(probs, labels)?;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &z)| pixel_loss(p, z).to_f64().unwrap_or(f64::NAN))
        .sum();
    Ok(T::of(sum / probs.len() as f64))
}

/// Gradient of the per-pixel loss with respect to the logits, `(g - z) / n`.
///
/// This is the derivative of the unclamped loss; the clamp in [`bce_loss`]
/// only guards the logarithm, so saturated pixels still get pushed back.
pub fn bce_grad<T: Scalar>(probs: &[T], labels: &[T]) -> Result<Vec<T>> {
    check(probs, labels)?;
    let n = T::of(probs.len() as f64);
    Ok(probs.iter().zip(labels).map(|(&p, &z)| (p - z) / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        let t = loss_terms(1.0, 0.0);
        assert!((t.g - 0.7311).abs() < 1e-4);
        // -ln(1 - 0.7310585786300049)
        assert!((t.loss - 1.3132616875182228).abs() < 1e-12);
        let half = bce_loss(&[0.5f64; 4], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let perfect = bce_loss(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap();
        assert!(perfect <= -(1.0 - EPSILON).ln() + 1e-15);
        let worst = bce_loss(&[0.0f64], &[1.0]).unwrap();
        assert!((worst - -EPSILON.ln()).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_difference_quotient() {
        let labels = [0.0f64, 1.0, 1.0];
        for x in [-3.0, -0.2, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let f = |x: f64| bce_loss(&[sigmoid(x), 0.3, 0.9], &labels).unwrap();
            let numeric = (f(x + h) - f(x - h)) / (2.0 * h);
            let analytic = bce_grad(&[sigmoid(x), 0.3, 0.9], &labels).unwrap()[0];
            assert!((numeric - analytic).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn saturated_pixels_keep_their_gradient() {
        let g = bce_grad(&[1e-12f64, 1.0 - 1e-12], &[1.0, 0.0]).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-9 && (g[1] - 0.5).abs() < 1e-9, "{g:?}");
    }

    #[test]
    fn shape_mismatch() {
        assert!(bce_loss(&[0.5f32], &[]).is_err());
        assert!(bce_grad(&[0.5f32; 2], &[1.0]).is_err());
    }
}
