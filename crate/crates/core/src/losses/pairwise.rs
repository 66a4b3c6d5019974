//! Pairwise baselines: contrastive loss with a trainable margin and LDML
//! with a trainable bias. Both average over the `N(N-1)/2` unordered pairs.

use super::{sigmoid, softplus, LabeledBatch, LossOutput};
use crate::error::Result;
use crate::geometry::{sq_dist_unchecked, EmbeddingSpace};

/// Adds `coef * (f_i - f_j)` to row `i` and subtracts it from row `j`.
fn push_pair(out: &mut LossOutput, batch: &LabeledBatch, i: usize, j: usize, coef: f64) {
    let emb = batch.embeddings();
    let d = batch.dim();
    for c in 0..d {
        let g = coef * (emb.get(i, c) - emb.get(j, c));
        out.grad_embeddings.row_mut(i)[c] += g;
        out.grad_embeddings.row_mut(j)[c] -= g;
    }
}

/// Contrastive loss. `raw_margin` is the unconstrained parameter;
/// the margin is `m = softplus(raw_margin)` (on the distance scale).
pub fn contrastive_loss(batch: &LabeledBatch, raw_margin: f64, space: &EmbeddingSpace) -> Result<LossOutput> {
    batch.check_space(space)?;
    let n = batch.n();
    let mut out = LossOutput::zero(n, batch.dim());
    if n < 2 {
        return Ok(out);
    }
    let m = softplus(raw_margin);
    let inv_p = 2.0 / (n * (n - 1)) as f64;
    let emb = batch.embeddings();
    let labels = batch.labels();
    let mut total = 0.0;
    let mut grad_m = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2 = sq_dist_unchecked(emb.row(i), emb.row(j));
            if labels[i] == labels[j] {
                total += 0.5 * d2;
                push_pair(&mut out, batch, i, j, inv_p);
            } else {
                let dist = d2.sqrt();
                let slack = m - dist;
                if slack > 0.0 {
                    total += 0.5 * slack * slack;
                    grad_m += slack * inv_p;
                    // d/df_i of 0.5 (m - |f_i - f_j|)^2; undefined direction at dist = 0
                    if dist > 0.0 {
                        push_pair(&mut out, batch, i, j, -slack / dist * inv_p);
                    }
                }
            }
        }
    }
    out.value = total * inv_p;
    out.grad_raw = grad_m * sigmoid(raw_margin);
    Ok(out)
}

/// LDML: binary cross-entropy on `p_ij = sigmoid(beta - d^2(f_i, f_j))`,
/// with `beta = softplus(raw_bias)`.
pub fn ldml_loss(batch: &LabeledBatch, raw_bias: f64, space: &EmbeddingSpace) -> Result<LossOutput> {
    batch.check_space(space)?;
    let n = batch.n();
    let mut out = LossOutput::zero(n, batch.dim());
    if n < 2 {
        return Ok(out);
    }
    let beta = softplus(raw_bias);
    let inv_p = 2.0 / (n * (n - 1)) as f64;
    let emb = batch.embeddings();
    let labels = batch.labels();
    let mut total = 0.0;
    let mut grad_beta = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let z = beta - sq_dist_unchecked(emb.row(i), emb.row(j));
            // -ln sigmoid(z) = softplus(-z);  -ln(1 - sigmoid(z)) = softplus(z)
            let (loss, dz) = if labels[i] == labels[j] {
                (softplus(-z), sigmoid(z) - 1.0)
            } else {
                (softplus(z), sigmoid(z))
            };
            total += loss;
            grad_beta += dz * inv_p;
            // dz/df_i = -2 (f_i - f_j)
            push_pair(&mut out, batch, i, j, -2.0 * dz * inv_p);
        }
    }
    out.value = total * inv_p;
    out.grad_raw = grad_beta * sigmoid(raw_bias);
    Ok(out)
}
