//! The ball loss: pull each sample inside its cluster ball of squared
//! radius `b`, push it at least `gamma = 9b + eps` away from the most
//! offending foreign centroid.

use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, softplus_inv, BatchCentroids, LabeledBatch, LossOutput};
use crate::error::Result;
use crate::geometry::{sq_dist_unchecked, EmbeddingSpace, Matrix};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_ALPHA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallParams {
    /// Unconstrained `b̂`; `b = softplus(b̂)`.
    pub raw_radius: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl BallParams {
    pub fn new(raw_radius: f64, epsilon: f64, alpha: f64) -> Self {
        Self {
            raw_radius,
            epsilon,
            alpha,
        }
    }

    /// Parameters whose squared radius is exactly `b` (up to softplus round-off).
    pub fn with_b(b: f64, epsilon: f64, alpha: f64) -> Self {
        Self::new(softplus_inv(b), epsilon, alpha)
    }

    /// Squared ball radius.
    pub fn b(&self) -> f64 {
        softplus(self.raw_radius)
    }

    pub fn gamma(&self) -> f64 {
        9.0 * self.b() + self.epsilon
    }

    pub fn radius(&self) -> f64 {
        self.b().sqrt()
    }

    /// Clustering threshold on the squared-distance scale: the squared ball
    /// diameter.
    pub fn tau(&self) -> f64 {
        4.0 * self.b()
    }
}

/// What to do with a hypersphere cluster whose members sum to ~zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    /// Fail with [`crate::Error::DegenerateCentroid`].
    #[default]
    Error,
    /// Drop the cluster's terms for this batch: its members contribute no
    /// similar term and its centroid is never a dissimilar candidate.
    SkipCluster,
}

pub fn bcl_loss(batch: &LabeledBatch, params: &BallParams, space: &EmbeddingSpace) -> Result<LossOutput> {
    bcl_loss_with_policy(batch, params, space, DegeneratePolicy::Error)
}

pub fn bcl_loss_with_policy(
    batch: &LabeledBatch,
    params: &BallParams,
    space: &EmbeddingSpace,
    policy: DegeneratePolicy,
) -> Result<LossOutput> {
    batch.check_space(space)?;
    let n = batch.n();
    let k = batch.k();
    let d = batch.dim();
    let cents = BatchCentroids::compute(batch, space);
    if policy == DegeneratePolicy::Error {
        if let Some(err) = cents.first_degenerate(batch) {
            return Err(err);
        }
    }

    let b = params.b();
    let gamma = 9.0 * b + params.epsilon;
    let inv_n = 1.0 / n as f64;
    let emb = batch.embeddings();

    let mut out = LossOutput::zero(n, d);
    let mut grad_mu = Matrix::zeros(k, d);
    let mut grad_b = 0.0;
    let mut sim_total = 0.0;
    let mut dis_total = 0.0;
    let mut dist = vec![0.0; k];

    for i in 0..n {
        let yi = batch.labels()[i];
        if !cents.valid[yi] {
            continue;
        }
        let fi = emb.row(i);
        for (c, slot) in dist.iter_mut().enumerate() {
            *slot = if cents.valid[c] {
                sq_dist_unchecked(fi, cents.values.row(c))
            } else {
                f64::INFINITY
            };
        }

        let sim = dist[yi] - b;
        if sim > 0.0 {
            sim_total += sim;
            let w = 2.0 * params.alpha * inv_n;
            let mu = cents.values.row(yi);
            let gf = out.grad_embeddings.row_mut(i);
            let gm = grad_mu.row_mut(yi);
            for j in 0..d {
                let diff = w * (fi[j] - mu[j]);
                gf[j] += diff;
                gm[j] -= diff;
            }
            grad_b -= params.alpha * inv_n;
        }

        // most offending foreign centroid: smallest distance, lowest index on ties
        let mut worst: Option<usize> = None;
        for (c, &dc) in dist.iter().enumerate() {
            if c == yi || !dc.is_finite() {
                continue;
            }
            if worst.is_none_or(|w| dc < dist[w]) {
                worst = Some(c);
            }
        }
        if let Some(v) = worst {
            let dis = gamma - dist[v];
            if dis > 0.0 {
                dis_total += dis;
                let w = 2.0 * inv_n;
                let mu = cents.values.row(v);
                let gf = out.grad_embeddings.row_mut(i);
                let gm = grad_mu.row_mut(v);
                for j in 0..d {
                    let diff = w * (fi[j] - mu[j]);
                    gf[j] -= diff;
                    gm[j] += diff;
                }
                grad_b += 9.0 * inv_n;
            }
        }
    }

    cents.backprop(batch, space, &grad_mu, &mut out.grad_embeddings);
    out.value = params.alpha * sim_total * inv_n + dis_total * inv_n;
    out.grad_raw = grad_b * sigmoid(params.raw_radius);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::geometry::Matrix;

    fn value(batch: &LabeledBatch, p: &BallParams, s: &EmbeddingSpace) -> f64 {
        bcl_loss(batch, p, s).unwrap().value
    }

    #[test]
    fn one_dim_hand_example() {
        let emb = Matrix::from_vec(2, 1, vec![0.0, 0.2]).unwrap();
        let batch = LabeledBatch::new(emb, vec![0, 1]).unwrap();
        let p = BallParams::with_b(0.01, 0.0, 4.0);
        let out = bcl_loss(&batch, &p, &EmbeddingSpace::euclidean(1)).unwrap();
        assert!((out.value - 0.05).abs() < 1e-9, "{}", out.value);
    }

    #[test]
    fn zero_at_global_optimum() {
        let emb = Matrix::from_vec(4, 2, vec![0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 5.0, 0.0]).unwrap();
        let batch = LabeledBatch::new(emb, vec![0, 0, 1, 1]).unwrap();
        let p = BallParams::with_b(0.5, 0.01, 4.0);
        let out = bcl_loss(&batch, &p, &EmbeddingSpace::euclidean(2)).unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.grad_raw, 0.0);
        assert!(out.grad_embeddings.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_cluster_has_only_similar_term() {
        let space = EmbeddingSpace::euclidean(3);
        let batch = random_batch(4, 7, 1, 3, &space);
        let p = BallParams::with_b(0.05, 0.01, 4.0);
        let out = bcl_loss(&batch, &p, &space).unwrap();
        let mu = crate::geometry::centroid(&batch.embeddings().iter_rows().collect::<Vec<_>>(), &space)
            .unwrap()
            .values;
        let sim: f64 = batch
            .embeddings()
            .iter_rows()
            .map(|f| (sq_dist_unchecked(f, &mu) - p.b()).max(0.0))
            .sum::<f64>()
            / 7.0;
        assert!((out.value - 4.0 * sim).abs() < 1e-12);
    }

    #[test]
    fn singletons_contribute_no_similar_gradient() {
        let space = EmbeddingSpace::euclidean(2);
        let emb = Matrix::from_vec(3, 2, vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0]).unwrap();
        let batch = LabeledBatch::new(emb, vec![0, 1, 2]).unwrap();
        let out = bcl_loss(&batch, &BallParams::with_b(0.01, 0.01, 4.0), &space).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_embeddings.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for space in [EmbeddingSpace::euclidean(4), EmbeddingSpace::hypersphere(4)] {
                let batch = random_batch(seed, 12, 3, 4, &space);
                let p = BallParams::with_b(0.05 + 0.02 * seed as f64, 0.01, 4.0);
                let out = bcl_loss(&batch, &p, &space).unwrap();
                check_embedding_grads(batch.embeddings(), &out, |e| {
                    value(&batch.with_embeddings(e.clone()).unwrap(), &p, &space)
                })
                .unwrap();
                check_scalar_grad(p.raw_radius, out.grad_raw, |r| {
                    value(&batch, &BallParams { raw_radius: r, ..p }, &space)
                })
                .unwrap();
            }
        }
    }

    #[test]
    fn degenerate_centroid_policy() {
        let space = EmbeddingSpace::hypersphere(2);
        let emb = Matrix::from_vec(3, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0]).unwrap();
        let batch = LabeledBatch::new(emb, vec![0, 0, 1]).unwrap();
        let p = BallParams::with_b(0.1, 0.01, 4.0);
        assert!(matches!(
            bcl_loss(&batch, &p, &space),
            Err(crate::Error::DegenerateCentroid { .. })
        ));
        let out = bcl_loss_with_policy(&batch, &p, &space, DegeneratePolicy::SkipCluster).unwrap();
        // the only remaining term is the singleton, which has no foreign candidate
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn translation_invariant_in_euclidean_space() {
        let space = EmbeddingSpace::euclidean(3);
        let batch = random_batch(8, 10, 3, 3, &space);
        let p = BallParams::with_b(0.1, 0.01, 4.0);
        let base = value(&batch, &p, &space);
        let mut shifted = batch.embeddings().clone();
        for i in 0..shifted.rows() {
            for (v, s) in shifted.row_mut(i).iter_mut().zip([3.0, -2.0, 0.5]) {
                *v += s;
            }
        }
        let moved = value(&batch.with_embeddings(shifted).unwrap(), &p, &space);
        assert!((base - moved).abs() < 1e-9);
    }
}
