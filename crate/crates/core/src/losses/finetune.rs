//! Pair-constrained loss used to fine-tune a ball-trained model with
//! automatically mined positive and negative pairs. The radius is frozen, so
//! no gradient flows to it.

use super::LossOutput;
use crate::error::{Error, Result};
use crate::geometry::{sq_dist_unchecked, Matrix};

/// A constraint between rows `a` and `b` of an embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetunePair {
    pub a: usize,
    pub b: usize,
    pub positive: bool,
    /// Squared distance of a positive pair before fine-tuning started.
    pub orig_sq_dist: f64,
}

/// Positives pay `[d^2 - min(orig, tau)]_+`, negatives `[tau + eps - d^2]_+`;
/// the value is the mean over pairs.
pub fn finetune_pair_loss(embeddings: &Matrix, pairs: &[FinetunePair], tau: f64, epsilon: f64) -> Result<LossOutput> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let n = embeddings.rows();
    let d = embeddings.cols();
    let mut out = LossOutput::zero(n, d);
    if pairs.is_empty() {
        return Ok(out);
    }
    let inv_p = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for pair in pairs {
        if pair.a >= n || pair.b >= n {
            return Err(Error::invalid(format!(
                "pair ({}, {}) outside {n} embeddings",
                pair.a, pair.b
            )));
        }
        let fa = embeddings.row(pair.a);
        let fb = embeddings.row(pair.b);
        let d2 = sq_dist_unchecked(fa, fb);
        let (hinge, sign) = if pair.positive {
            (d2 - pair.orig_sq_dist.min(tau), 1.0)
        } else {
            (tau + epsilon - d2, -1.0)
        };
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        let diff: Vec<f64> = fa.iter().zip(fb).map(|(x, y)| 2.0 * sign * inv_p * (x - y)).collect();
        for (g, v) in out.grad_embeddings.row_mut(pair.a).iter_mut().zip(&diff) {
            *g += v;
        }
        for (g, v) in out.grad_embeddings.row_mut(pair.b).iter_mut().zip(&diff) {
            *g -= v;
        }
    }
    out.value = total * inv_p;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two(a: f64, b: f64) -> Matrix {
        Matrix::from_vec(2, 1, vec![a, b]).unwrap()
    }

    #[test]
    fn hand_examples() {
        let d01 = 0.1f64.sqrt();
        let pos = FinetunePair {
            a: 0,
            b: 1,
            positive: true,
            orig_sq_dist: 0.1,
        };
        let out = finetune_pair_loss(&two(0.0, d01), &[pos], 0.4, 0.01).unwrap();
        assert!(out.value.abs() < 1e-15);

        let neg = FinetunePair {
            a: 0,
            b: 1,
            positive: false,
            orig_sq_dist: 0.0,
        };
        let out = finetune_pair_loss(&two(0.0, 0.3f64.sqrt()), &[neg], 0.4, 0.01).unwrap();
        assert!((out.value - 0.11).abs() < 1e-9);
        assert_eq!(out.grad_raw, 0.0);
    }

    #[test]
    fn positive_bound_is_clamped_by_original_distance() {
        // orig 0.1 < tau: a positive at 0.2 is now violating even though 0.2 < tau
        let pos = FinetunePair {
            a: 0,
            b: 1,
            positive: true,
            orig_sq_dist: 0.1,
        };
        let out = finetune_pair_loss(&two(0.0, 0.2f64.sqrt()), &[pos], 0.4, 0.01).unwrap();
        assert!((out.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_tau() {
        assert!(finetune_pair_loss(&two(0.0, 1.0), &[], 0.0, 0.01).is_err());
        assert!(finetune_pair_loss(&two(0.0, 1.0), &[], -1.0, 0.01).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let (n, d) = (10, 4);
            let mut emb = Matrix::zeros(n, d);
            for v in emb.as_mut_slice() {
                *v = rng.random_range(-0.6..0.6);
            }
            let pairs: Vec<FinetunePair> = (0..12)
                .map(|p| {
                    let a = rng.random_range(0..n);
                    let b = (a + rng.random_range(1..n)) % n;
                    FinetunePair {
                        a,
                        b,
                        positive: p % 2 == 0,
                        orig_sq_dist: rng.random_range(0.0..1.0),
                    }
                })
                .collect();
            let out = finetune_pair_loss(&emb, &pairs, 0.8, 0.01).unwrap();
            check_embedding_grads(&emb, &out, |e| finetune_pair_loss(e, &pairs, 0.8, 0.01).unwrap().value).unwrap();
        }
    }
}
