//! Training objectives: class-weighted soft-label cross entropy over a
//! two-way softmax, and the exponential deviation loss over a sigmoid.

use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_OUTAGE_WEIGHT: f64 = 500.0;
pub const DEFAULT_BETA: f64 = 20.0;

const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Outage-class weight `w`.
    WeightedCrossEntropy { w: f64 },
    /// Deviation scale `beta`.
    Exponential { beta: f64 },
}

impl LossKind {
    pub fn cross_entropy() -> Self {
        LossKind::WeightedCrossEntropy { w: DEFAULT_OUTAGE_WEIGHT }
    }

    pub fn exponential() -> Self {
        LossKind::Exponential { beta: DEFAULT_BETA }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::WeightedCrossEntropy { w } if !(w > 0.0 && w.is_finite()) => {
                Err(Error::Config(format!("class weight must be positive, got {w}")))
            }
            LossKind::Exponential { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::Config(format!("beta must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// Output width the loss expects from the network head.
    pub fn d_out(&self) -> usize {
        match self {
            LossKind::WeightedCrossEntropy { .. } => 2,
            LossKind::Exponential { .. } => 1,
        }
    }

    /// Short name used in configs and reports (`xent` / `exp`).
    pub fn short_name(&self) -> &'static str {
        match self {
            LossKind::WeightedCrossEntropy { .. } => "xent",
            LossKind::Exponential { .. } => "exp",
        }
    }

    /// Outage probability read off a head output.
    pub fn outage_probability(output: &[f64]) -> f64 {
        output[output.len() - 1]
    }

    /// Per-sample loss and its gradient with respect to the head logits.
    pub fn value_and_logit_grad(&self, output: &[f64], gt: f64) -> Result<(f64, Vec<f64>)> {
        match *self {
            LossKind::WeightedCrossEntropy { w } => {
                let (value, _) = weighted_cross_entropy(output, gt, w)?;
                Ok((value, weighted_cross_entropy_logit_grad(output, gt, w)))
            }
            LossKind::Exponential { beta } => {
                let pred = output[0];
                let (value, d_pred) = exponential_loss(pred, gt, beta);
                Ok((value, vec![d_pred * pred * (1.0 - pred)]))
            }
        }
    }

    /// Per-sample loss and its gradient with respect to the head outputs.
    pub fn value_and_grad(&self, output: &[f64], gt: f64) -> Result<(f64, Vec<f64>)> {
        match *self {
            LossKind::WeightedCrossEntropy { w } => {
                let (v, g) = weighted_cross_entropy(output, gt, w)?;
                Ok((v, g.to_vec()))
            }
            LossKind::Exponential { beta } => {
                let (v, g) = exponential_loss(output[0], gt, beta);
                Ok((v, vec![g]))
            }
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::WeightedCrossEntropy { w } => write!(f, "xent(w={w})"),
            LossKind::Exponential { beta } => write!(f, "exp(beta={beta})"),
        }
    }
}

/// `-[(1 - gt) ln p0 + w gt ln p1]` with soft labels, and its gradient with
/// respect to `(p0, p1)`. Log arguments are clamped at 1e-12.
pub fn weighted_cross_entropy(pred: &[f64], gt: f64, w: f64) -> Result<(f64, [f64; 2])> {
    if pred.len() != 2
        || pred.iter().any(|p| !(*p >= 0.0))
        || (pred[0] + pred[1] - 1.0).abs() > 1e-6
    {
        return Err(Error::Numeric {
            location: "weighted_cross_entropy".into(),
            message: format!("prediction {pred:?} is not a probability vector"),
        });
    }
    let (p0, p1) = (pred[0].max(LOG_CLAMP), pred[1].max(LOG_CLAMP));
    let (a0, a1) = (1.0 - gt, w * gt);
    let value = -(a0 * p0.ln() + a1 * p1.ln());
    Ok((value, [-a0 / p0, -a1 / p1]))
}

/// Gradient of the weighted cross entropy with respect to the softmax logits,
/// `p_k (a0 + a1) - a_k`.
pub fn weighted_cross_entropy_logit_grad(pred: &[f64], gt: f64, w: f64) -> Vec<f64> {
    let (a0, a1) = (1.0 - gt, w * gt);
    let total = a0 + a1;
    vec![pred[0] * total - a0, pred[1] * total - a1]
}

/// `exp(beta |gt - pred|)` and its derivative in `pred`, using the
/// subgradient 0 at `pred == gt`.
pub fn exponential_loss(pred: f64, gt: f64, beta: f64) -> (f64, f64) {
    let value = ((gt - pred).abs() * beta).exp();
    let sign = if pred > gt {
        1.0
    } else if pred < gt {
        -1.0
    } else {
        0.0
    };
    (value, beta * sign * value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_anchors() {
        let eps = 1e-9;
        let (v, _) = weighted_cross_entropy(&[1.0 - eps, eps], 0.0, 500.0).unwrap();
        assert!((v - eps).abs() < 1e-15);

        let (v, _) = weighted_cross_entropy(&[0.5, 0.5], 1.0, 500.0).unwrap();
        assert!((v - 500.0 * 2f64.ln()).abs() < 1e-10);
        assert!((v - 346.574).abs() < 1e-3);

        let (v, _) = weighted_cross_entropy(&[0.75, 0.25], 0.25, 1.0).unwrap();
        let direct = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_rejects_non_distribution() {
        assert!(weighted_cross_entropy(&[0.6, 0.6], 0.0, 1.0).is_err());
        assert!(weighted_cross_entropy(&[0.5], 0.0, 1.0).is_err());
        assert!(weighted_cross_entropy(&[f64::NAN, 1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn exponential_anchors() {
        assert_eq!(exponential_loss(0.3, 0.3, 20.0), (1.0, 0.0));
        let (v, _) = exponential_loss(0.0, 1.0, 20.0);
        assert!((v / 20f64.exp() - 1.0).abs() < 1e-15);
        assert!((v / 4.852e8 - 1.0).abs() < 1e-3);
        let (v, g) = exponential_loss(0.4, 0.5, 20.0);
        assert!((v - 2f64.exp()).abs() < 1e-12);
        assert!((v - 7.389).abs() < 1e-3);
        assert!(g < 0.0);
    }

    #[test]
    fn loss_kind_validation() {
        assert!(LossKind::WeightedCrossEntropy { w: 0.0 }.validate().is_err());
        assert!(LossKind::Exponential { beta: -1.0 }.validate().is_err());
        assert!(LossKind::cross_entropy().validate().is_ok());
        assert_eq!(LossKind::exponential().d_out(), 1);
        assert_eq!(LossKind::cross_entropy().d_out(), 2);
    }

    #[test]
    fn logit_gradient_matches_chain_rule() {
        for &(p1, gt, w) in &[(0.3, 0.0, 500.0), (0.9, 1.0, 500.0), (0.42, 0.25, 7.0)] {
            let pred = [1.0 - p1, p1];
            let (_, dp) = weighted_cross_entropy(&pred, gt, w).unwrap();
            let chained = crate::nn::head_backward(&pred, &dp);
            let direct = weighted_cross_entropy_logit_grad(&pred, gt, w);
            for k in 0..2 {
                assert!((chained[k] - direct[k]).abs() < 1e-9 * (1.0 + direct[k].abs()));
            }
        }
    }

    proptest! {
        #[test]
        fn exponential_at_least_one_and_symmetric(a in 0.0f64..1.0, b in 0.0f64..1.0, beta in 0.1f64..30.0) {
            let (v, _) = exponential_loss(a, b, beta);
            let (w, _) = exponential_loss(b, a, beta);
            prop_assert!(v >= 1.0);
            prop_assert_eq!(v, w);
            if a != b { prop_assert!(v > 1.0); }
        }

        #[test]
        fn cross_entropy_nonnegative_and_symmetric(p in 1e-6f64..(1.0 - 1e-6), gt in 0.0f64..1.0, w in 0.1f64..1000.0) {
            let (v, _) = weighted_cross_entropy(&[1.0 - p, p], gt, w).unwrap();
            prop_assert!(v >= 0.0);
            let (x, _) = weighted_cross_entropy(&[1.0 - p, p], 0.5, 1.0).unwrap();
            let (y, _) = weighted_cross_entropy(&[p, 1.0 - p], 0.5, 1.0).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn gradients_match_central_differences(p in 0.01f64..0.99, gt in 0.0f64..1.0, w in 0.5f64..600.0) {
            let h = 1e-6;
            let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);

            // Exponential, away from the kink.
            prop_assume!((gt - p).abs() > 1e-3);
            let f = |x: f64| exponential_loss(x, gt, 20.0).0;
            let numeric = (f(p + h) - f(p - h)) / (2.0 * h);
            prop_assert!(rel(exponential_loss(p, gt, 20.0).1, numeric) < 1e-6);

            // Cross entropy, as a function of each component separately.
            let (_, g) = weighted_cross_entropy(&[1.0 - p, p], gt, w).unwrap();
            let v0 = |x: f64| -((1.0 - gt) * x.ln());
            let v1 = |x: f64| -(w * gt * x.ln());
            let n0 = (v0(1.0 - p + h) - v0(1.0 - p - h)) / (2.0 * h);
            let n1 = (v1(p + h) - v1(p - h)) / (2.0 * h);
            prop_assert!(rel(g[0], n0) < 1e-6 || (g[0] == 0.0 && n0.abs() < 1e-9));
            prop_assert!(rel(g[1], n1) < 1e-6 || (g[1] == 0.0 && n1.abs() < 1e-9));
        }
    }
}
