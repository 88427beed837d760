use serde::{Deserialize, Serialize};

use crate::chardata::KEEP_ID;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class weighting and focusing for the focal loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalWeights {
    /// Weight of the KEEP index.
    pub alpha_keep: f64,
    /// Weight of every other index.
    pub alpha_other: f64,
    pub gamma: f64,
}

impl Default for FocalWeights {
    fn default() -> Self {
        Self {
            alpha_keep: 0.2,
            alpha_other: 1.0,
            gamma: 2.0,
        }
    }
}

impl FocalWeights {
    /// Plain cross-entropy: `γ = 0`, `α ≡ 1`.
    pub fn cross_entropy() -> Self {
        Self {
            alpha_keep: 1.0,
            alpha_other: 1.0,
            gamma: 0.0,
        }
    }

    /// Per-class weight vector over a vocabulary of `m` entries.
    pub fn alpha_vector(&self, m: usize) -> Vec<f64> {
        (0..m)
            .map(|i| {
                if i == KEEP_ID {
                    self.alpha_keep
                } else {
                    self.alpha_other
                }
            })
            .collect()
    }
}

/// `Σ_i −α_i (1 − p_i)^γ log p_i` over target probabilities `p_i` with their
/// class weights `α_i`. Returns the loss and how many `p_i` hit the floor.
pub fn focal_loss_from_probs(probs: &[f64], alphas: &[f64], gamma: f64) -> (f64, usize) {
    assert_eq!(probs.len(), alphas.len(), "one weight per probability");
    let mut clamped = 0;
    let loss = probs
        .iter()
        .zip(alphas)
        .map(|(&p, &a)| {
            let p = if p < PROB_FLOOR {
                clamped += 1;
                PROB_FLOOR
            } else {
                p
            };
            let factor = if gamma == 0.0 { 1.0 } else { (1.0 - p).powf(gamma) };
            -a * factor * p.ln()
        })
        .sum();
    (loss, clamped)
}

pub fn cross_entropy_from_probs(probs: &[f64]) -> f64 {
    probs.iter().map(|&p| -p.max(PROB_FLOOR).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_term_value() {
        let (l, _) = focal_loss_from_probs(&[0.9], &[0.5], 2.0);
        assert!((l - 5.2680e-4).abs() < 1e-7, "{l}");
    }

    #[test]
    fn certain_prediction_contributes_nothing() {
        let (l, _) = focal_loss_from_probs(&[1.0, 1.0], &[1.0, 0.3], 2.0);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_probability_is_floored_and_counted() {
        let (l, clamped) = focal_loss_from_probs(&[0.0, 0.5], &[1.0, 1.0], 0.0);
        assert_eq!(clamped, 1);
        assert!((l - (-(1e-12f64).ln() - 0.5f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn alpha_vector_reduces_keep_only() {
        let a = FocalWeights::default().alpha_vector(6);
        assert_eq!(a, vec![1.0, 0.2, 1.0, 1.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn degenerate_focal_is_cross_entropy(ps in prop::collection::vec(1e-6f64..=1.0, 1..20)) {
            let ones = vec![1.0; ps.len()];
            let (fl, _) = focal_loss_from_probs(&ps, &ones, 0.0);
            prop_assert!((fl - cross_entropy_from_probs(&ps)).abs() < 1e-9);
        }

        #[test]
        fn strictly_decreasing_in_p(p in 1e-6f64..0.99, dp in 1e-4f64..0.01, gamma in 0.0f64..5.0, alpha in 0.01f64..2.0) {
            let q = (p + dp).min(1.0);
            let (lo, _) = focal_loss_from_probs(&[p], &[alpha], gamma);
            let (hi, _) = focal_loss_from_probs(&[q], &[alpha], gamma);
            prop_assert!(hi < lo);
        }
    }
}
