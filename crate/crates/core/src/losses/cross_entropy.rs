//! Softmax cross-entropy over training identities through a linear
//! classifier head. Embeddings used for clustering are taken before the head.

use rand::Rng;

use super::LossOutput;
use crate::error::{Error, Result};
use crate::geometry::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `classes x dim`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Classifier {
    /// Glorot-uniform weights, zero bias.
    pub fn init(classes: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (classes + dim) as f64).sqrt();
        let mut weights = Matrix::zeros(classes, dim);
        for w in weights.as_mut_slice() {
            *w = rng.random_range(-limit..=limit);
        }
        Self {
            weights,
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct CrossEntropyOutput {
    pub loss: LossOutput,
    pub grad_weights: Matrix,
    pub grad_bias: Vec<f64>,
}

/// Mean softmax cross-entropy; `labels[i]` indexes the classifier's classes.
pub fn cross_entropy_loss(
    embeddings: &Matrix,
    labels: &[usize],
    classifier: &Classifier,
) -> Result<CrossEntropyOutput> {
    let n = embeddings.rows();
    let d = embeddings.cols();
    let k = classifier.classes();
    if classifier.weights.rows() != k || classifier.weights.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: k * d,
            got: classifier.weights.rows() * classifier.weights.cols(),
        });
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} outside {k} classes")));
    }
    let mut loss = LossOutput::zero(n, d);
    let mut grad_weights = Matrix::zeros(k, d);
    let mut grad_bias = vec![0.0; k];
    if n == 0 {
        return Ok(CrossEntropyOutput {
            loss,
            grad_weights,
            grad_bias,
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut logits = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..n {
        let f = embeddings.row(i);
        for (c, l) in logits.iter_mut().enumerate() {
            *l = dot(classifier.weights.row(c), f) + classifier.bias[c];
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[labels[i]];
        for c in 0..k {
            let dl = inv_n * ((logits[c] - lse).exp() - if c == labels[i] { 1.0 } else { 0.0 });
            grad_bias[c] += dl;
            let w = classifier.weights.row(c);
            let gf = loss.grad_embeddings.row_mut(i);
            for j in 0..d {
                gf[j] += dl * w[j];
            }
            let gw = grad_weights.row_mut(c);
            for j in 0..d {
                gw[j] += dl * f[j];
            }
        }
    }
    loss.value = total * inv_n;
    Ok(CrossEntropyOutput {
        loss,
        grad_weights,
        grad_bias,
    })
}
