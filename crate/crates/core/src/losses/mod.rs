//! Loss values and analytic gradients over a labeled mini-batch.
//!
//! Every loss returns a [`LossOutput`] holding the scalar value, the
//! gradient with respect to each embedding row, and the gradient with
//! respect to the loss's trainable raw scalar (the raw radius `b̂` for the
//! ball loss, `m̂` for contrastive, `β̂` for LDML). Trainable scalars are
//! kept positive through softplus.

mod ball;
mod cross_entropy;
mod finetune;
mod pairwise;
mod proto;
mod triplet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{l2_norm, EmbeddingSpace, Matrix, SpaceKind, DEGENERATE_SUM_NORM};

pub use ball::{bcl_loss, bcl_loss_with_policy, BallParams, DegeneratePolicy, DEFAULT_ALPHA, DEFAULT_EPSILON};
pub use cross_entropy::{cross_entropy_loss, Classifier, CrossEntropyOutput};
pub use finetune::{finetune_pair_loss, FinetunePair};
pub use pairwise::{contrastive_loss, ldml_loss};
pub use proto::prototypical_loss;
pub use triplet::{triplet_hinge, triplet_loss, DEFAULT_TRIPLET_MARGIN};

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive argument");
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bcl,
    Contrastive,
    Triplet,
    Ldml,
    Proto,
    Ce,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Bcl,
        LossKind::Contrastive,
        LossKind::Triplet,
        LossKind::Ldml,
        LossKind::Proto,
        LossKind::Ce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bcl => "bcl",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::Ldml => "ldml",
            LossKind::Proto => "proto",
            LossKind::Ce => "ce",
        }
    }

    /// Losses whose trainable scalar doubles as a clustering threshold.
    pub fn learns_threshold(self) -> bool {
        matches!(self, LossKind::Bcl)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss {s:?}")))
    }
}

/// Embeddings of a mini-batch with dense labels in `[0, K)`.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

impl LabeledBatch {
    /// Fails unless every label in `[0, max_label]` has at least one member.
    pub fn new(embeddings: Matrix, labels: Vec<usize>) -> Result<Self> {
        if embeddings.rows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if labels.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.rows(),
                got: labels.len(),
            });
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut clusters = vec![Vec::new(); k];
        for (i, &y) in labels.iter().enumerate() {
            clusters[y].push(i);
        }
        if let Some(empty) = clusters.iter().position(|c| c.is_empty()) {
            return Err(Error::invalid(format!(
                "labels are not dense: cluster {empty} has no members"
            )));
        }
        Ok(Self {
            embeddings,
            labels,
            clusters,
        })
    }

    /// Same labels, new embeddings of identical shape.
    pub fn with_embeddings(&self, embeddings: Matrix) -> Result<Self> {
        if embeddings.rows() != self.embeddings.rows() || embeddings.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embeddings.rows() * self.dim(),
                got: embeddings.rows() * embeddings.cols(),
            });
        }
        Ok(Self {
            embeddings,
            labels: self.labels.clone(),
            clusters: self.clusters.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    fn check_space(&self, space: &EmbeddingSpace) -> Result<()> {
        if space.dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_embeddings: Matrix,
    /// Gradient w.r.t. the raw (pre-softplus) trainable scalar; zero for
    /// losses without one.
    pub grad_raw: f64,
}

impl LossOutput {
    pub(crate) fn zero(n: usize, d: usize) -> Self {
        Self {
            value: 0.0,
            grad_embeddings: Matrix::zeros(n, d),
            grad_raw: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad_raw.is_finite() && self.grad_embeddings.is_finite()
    }
}

/// Per-cluster centroids of a batch, kept differentiable w.r.t. the members.
pub(crate) struct BatchCentroids {
    pub values: Matrix,
    pub normalizers: Vec<f64>,
    /// `false` for hypersphere clusters whose member sum vanished.
    pub valid: Vec<bool>,
}

impl BatchCentroids {
    pub fn compute(batch: &LabeledBatch, space: &EmbeddingSpace) -> Self {
        let d = batch.dim();
        let k = batch.k();
        let mut values = Matrix::zeros(k, d);
        let mut normalizers = vec![0.0; k];
        let mut valid = vec![true; k];
        for (c, members) in batch.clusters().iter().enumerate() {
            let row = values.row_mut(c);
            for &i in members {
                for (s, v) in row.iter_mut().zip(batch.embeddings().row(i)) {
                    *s += v;
                }
            }
            let norm = match space.kind {
                SpaceKind::Euclidean => members.len() as f64,
                SpaceKind::Hypersphere => l2_norm(row),
            };
            if space.is_hypersphere() && norm < DEGENERATE_SUM_NORM {
                valid[c] = false;
                continue;
            }
            for s in row.iter_mut() {
                *s /= norm;
            }
            normalizers[c] = norm;
        }
        Self {
            values,
            normalizers,
            valid,
        }
    }

    pub fn first_degenerate(&self, batch: &LabeledBatch) -> Option<Error> {
        let c = self.valid.iter().position(|v| !v)?;
        let mut sum = vec![0.0; batch.dim()];
        for &i in &batch.clusters()[c] {
            for (s, v) in sum.iter_mut().zip(batch.embeddings().row(i)) {
                *s += v;
            }
        }
        let norm = l2_norm(&sum);
        Some(Error::DegenerateCentroid { sum, norm })
    }

    /// Pushes `grad_mu` (one row per centroid) back onto the member embeddings.
    pub fn backprop(&self, batch: &LabeledBatch, space: &EmbeddingSpace, grad_mu: &Matrix, grad_f: &mut Matrix) {
        let d = batch.dim();
        let mut g_sum = vec![0.0; d];
        for (c, members) in batch.clusters().iter().enumerate() {
            if !self.valid[c] {
                continue;
            }
            let gm = grad_mu.row(c);
            if gm.iter().all(|&v| v == 0.0) {
                continue;
            }
            let inv = 1.0 / self.normalizers[c];
            match space.kind {
                SpaceKind::Euclidean => {
                    for (g, v) in g_sum.iter_mut().zip(gm) {
                        *g = v * inv;
                    }
                }
                SpaceKind::Hypersphere => {
                    // mu = s / |s|  =>  dmu/ds = (I - mu mu^T) / |s|
                    let mu = self.values.row(c);
                    let along: f64 = mu.iter().zip(gm).map(|(m, g)| m * g).sum();
                    for j in 0..d {
                        g_sum[j] = (gm[j] - along * mu[j]) * inv;
                    }
                }
            }
            for &i in members {
                for (g, v) in grad_f.row_mut(i).iter_mut().zip(&g_sum) {
                    *g += v;
                }
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip_and_stability() {
        for y in [1e-6, 0.01, 0.25, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() <= 1e-12 * y.max(1.0));
        }
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn batch_requires_dense_labels() {
        let emb = Matrix::zeros(3, 2);
        assert!(LabeledBatch::new(emb.clone(), vec![0, 2, 2]).is_err());
        assert!(LabeledBatch::new(emb.clone(), vec![0, 1]).is_err());
        let b = LabeledBatch::new(emb, vec![1, 0, 1]).unwrap();
        assert_eq!(b.k(), 2);
        assert_eq!(b.clusters()[1], vec![0, 2]);
    }

    #[test]
    fn loss_kind_parses() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("hinge".parse::<LossKind>().is_err());
    }
}
