//! Prototypical loss with optional ball offsets: the own-cluster logit is
//! `-d^2(f, mu_k) + b`, foreign logits are `-d^2(f, mu_v) + gamma`. With
//! `b = gamma = 0` this is the vanilla prototypical-network loss.

use super::{BatchCentroids, LabeledBatch, LossOutput};
use crate::error::Result;
use crate::geometry::{sq_dist_unchecked, EmbeddingSpace, Matrix};

pub fn prototypical_loss(batch: &LabeledBatch, b: f64, gamma: f64, space: &EmbeddingSpace) -> Result<LossOutput> {
    batch.check_space(space)?;
    let n = batch.n();
    let k = batch.k();
    let d = batch.dim();
    let mut out = LossOutput::zero(n, d);
    if k == 1 {
        return Ok(out);
    }
    let cents = BatchCentroids::compute(batch, space);
    if let Some(err) = cents.first_degenerate(batch) {
        return Err(err);
    }
    let emb = batch.embeddings();
    let mut grad_mu = Matrix::zeros(k, d);
    let mut logits = vec![0.0; k];
    let mut total = 0.0;

    for i in 0..n {
        let yi = batch.labels()[i];
        let fi = emb.row(i);
        for (c, l) in logits.iter_mut().enumerate() {
            let offset = if c == yi { b } else { gamma };
            *l = -sq_dist_unchecked(fi, cents.values.row(c)) + offset;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let weight = 1.0 / (n as f64 * batch.clusters()[yi].len() as f64);
        total += weight * (lse - logits[yi]);

        for c in 0..k {
            let p = (logits[c] - lse).exp();
            let dl = weight * (p - if c == yi { 1.0 } else { 0.0 });
            if dl == 0.0 {
                continue;
            }
            // logit_c = -|f_i - mu_c|^2 + const
            let mu = cents.values.row(c);
            let gf = out.grad_embeddings.row_mut(i);
            let gm = grad_mu.row_mut(c);
            for j in 0..d {
                let g = 2.0 * dl * (fi[j] - mu[j]);
                gf[j] -= g;
                gm[j] += g;
            }
        }
    }
    cents.backprop(batch, space, &grad_mu, &mut out.grad_embeddings);
    out.value = total;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;

    #[test]
    fn single_class_is_zero() {
        let space = EmbeddingSpace::euclidean(2);
        let batch = random_batch(1, 5, 1, 2, &space);
        assert_eq!(prototypical_loss(&batch, 0.0, 0.0, &space).unwrap().value, 0.0);
    }

    #[test]
    fn two_singletons_hand_softmax() {
        let emb = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let batch = LabeledBatch::new(emb, vec![0, 1]).unwrap();
        let out = prototypical_loss(&batch, 0.0, 0.0, &EmbeddingSpace::euclidean(1)).unwrap();
        let p = 1.0 / (1.0 + (-1f64).exp());
        assert!((p - 0.7311).abs() < 1e-4);
        assert!((out.value - (-p.ln())).abs() < 1e-12);
        assert!((out.value - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for space in [EmbeddingSpace::euclidean(4), EmbeddingSpace::hypersphere(4)] {
                let batch = random_batch(500 + seed, 12, 3, 4, &space);
                let (b, g) = if seed % 2 == 0 { (0.0, 0.0) } else { (0.1, 0.91) };
                let out = prototypical_loss(&batch, b, g, &space).unwrap();
                check_embedding_grads(batch.embeddings(), &out, |e| {
                    prototypical_loss(&batch.with_embeddings(e.clone()).unwrap(), b, g, &space)
                        .unwrap()
                        .value
                })
                .unwrap();
            }
        }
    }
}
