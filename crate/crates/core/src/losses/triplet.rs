//! Triplet loss averaged over every valid (anchor, positive, negative)
//! triplet in the batch.
//!
//! Per anchor the negative distances are sorted once; for each positive the
//! active negatives are then a prefix of that order. This keeps the full
//! enumeration at `O(N^2 log N)` instead of `O(N^3)`.

use super::{LabeledBatch, LossOutput};
use crate::error::Result;
use crate::geometry::{sq_dist_unchecked, EmbeddingSpace};

pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.2;

/// A single triplet term `[d^2(a, p) - d^2(a, n) + m]_+`.
pub fn triplet_hinge(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (sq_dist_unchecked(anchor, positive) - sq_dist_unchecked(anchor, negative) + margin).max(0.0)
}

pub fn triplet_loss(batch: &LabeledBatch, margin: f64, space: &EmbeddingSpace) -> Result<LossOutput> {
    batch.check_space(space)?;
    let n = batch.n();
    let d = batch.dim();
    let mut out = LossOutput::zero(n, d);
    let labels = batch.labels();
    let clusters = batch.clusters();

    let count: usize = labels
        .iter()
        .map(|&y| (clusters[y].len() - 1) * (n - clusters[y].len()))
        .sum();
    if count == 0 {
        return Ok(out);
    }
    let inv_t = 1.0 / count as f64;

    let emb = batch.embeddings();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist_unchecked(emb.row(i), emb.row(j));
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }

    // coef[i * n + j]: d loss / d d^2(f_i, f_j), accumulated on the ordered pair
    let mut coef = vec![0.0; n * n];
    let mut total = 0.0;
    let mut negatives: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut prefix: Vec<f64> = Vec::with_capacity(n + 1);
    let mut hits: Vec<f64> = Vec::with_capacity(n + 1);

    for a in 0..n {
        let ya = labels[a];
        if clusters[ya].len() < 2 || clusters[ya].len() == n {
            continue;
        }
        negatives.clear();
        negatives.extend((0..n).filter(|&u| labels[u] != ya).map(|u| (dist[a * n + u], u)));
        negatives.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        prefix.clear();
        prefix.push(0.0);
        for &(v, _) in &negatives {
            prefix.push(prefix.last().unwrap() + v);
        }
        hits.clear();
        hits.resize(negatives.len() + 1, 0.0);

        for &p in &clusters[ya] {
            if p == a {
                continue;
            }
            let base = dist[a * n + p] + margin;
            let active = negatives.partition_point(|&(v, _)| v < base);
            if active == 0 {
                continue;
            }
            total += active as f64 * base - prefix[active];
            coef[a * n + p] += active as f64 * inv_t;
            hits[0] += 1.0;
            hits[active] -= 1.0;
        }
        let mut running = 0.0;
        for (s, &(_, u)) in negatives.iter().enumerate() {
            running += hits[s];
            if running != 0.0 {
                coef[a * n + u] -= running * inv_t;
            }
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            let c = coef[i * n + j] + coef[j * n + i];
            if c == 0.0 {
                continue;
            }
            // d d^2(f_i, f_j) / d f_i = 2 (f_i - f_j)
            for k in 0..d {
                let g = 2.0 * c * (emb.get(i, k) - emb.get(j, k));
                out.grad_embeddings.row_mut(i)[k] += g;
                out.grad_embeddings.row_mut(j)[k] -= g;
            }
        }
    }
    out.value = total * inv_t;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::geometry::Matrix;

    /// Direct triple loop.
    fn brute_force(batch: &LabeledBatch, margin: f64) -> f64 {
        let e = batch.embeddings();
        let y = batch.labels();
        let (mut sum, mut count) = (0.0, 0usize);
        for a in 0..batch.n() {
            for p in 0..batch.n() {
                if p == a || y[p] != y[a] {
                    continue;
                }
                for u in 0..batch.n() {
                    if y[u] == y[a] {
                        continue;
                    }
                    sum += triplet_hinge(e.row(a), e.row(p), e.row(u), margin);
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(triplet_hinge(&[0.0], &[1.0], &[4.0], 1.0), 0.0);
        assert_eq!(triplet_hinge(&[0.0], &[1.0], &[1.0], 1.0), 1.0);
    }

    #[test]
    fn all_same_label_is_zero() {
        let emb = Matrix::from_vec(3, 1, vec![0.0, 1.0, 5.0]).unwrap();
        let batch = LabeledBatch::new(emb, vec![0, 0, 0]).unwrap();
        let out = triplet_loss(&batch, 0.2, &EmbeddingSpace::euclidean(1)).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for seed in 0..30 {
            let space = EmbeddingSpace::euclidean(3);
            let batch = random_batch(300 + seed, 14, 4, 3, &space);
            let out = triplet_loss(&batch, 0.5, &space).unwrap();
            let oracle = brute_force(&batch, 0.5);
            assert!((out.value - oracle).abs() < 1e-12, "{} vs {}", out.value, oracle);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for space in [EmbeddingSpace::euclidean(3), EmbeddingSpace::hypersphere(3)] {
                let batch = random_batch(400 + seed, 12, 3, 3, &space);
                let out = triplet_loss(&batch, 0.3, &space).unwrap();
                check_embedding_grads(batch.embeddings(), &out, |e| {
                    triplet_loss(&batch.with_embeddings(e.clone()).unwrap(), 0.3, &space)
                        .unwrap()
                        .value
                })
                .unwrap();
                assert_eq!(out.grad_raw, 0.0);
            }
        }
    }
}
