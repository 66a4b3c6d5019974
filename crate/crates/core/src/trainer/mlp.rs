//! Four dense layers with ReLU between them, followed by the projection into
//! the embedding space. Gradients are computed by hand.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dot, l2_norm, EmbeddingSpace, Matrix, SpaceKind, DEGENERATE_INPUT_NORM};
use crate::losses::{softplus, softplus_inv};

pub const LAYER_COUNT: usize = 4;
pub const INITIAL_B: f64 = 0.25;

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Dense layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weights.as_mut_slice() {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    /// `X W^T + b` for a batch `X` of row vectors.
    fn apply(&self, x: &Matrix) -> Matrix {
        let out = self.output_dim();
        let mut y = Matrix::zeros(x.rows(), out);
        y.as_mut_slice()
            .par_chunks_mut(out.max(1))
            .zip(x.as_slice().par_chunks(self.input_dim().max(1)))
            .for_each(|(yr, xr)| {
                for (o, v) in yr.iter_mut().enumerate() {
                    *v = dot(self.weights.row(o), xr) + self.bias[o];
                }
            });
        y
    }
}

/// Layer widths `input -> h1 -> h2 -> h3 -> output`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: [usize; 3],
    pub output_dim: usize,
}

impl Architecture {
    /// The standard widths for 256- and 2048-dimensional base features, and a
    /// scaled-down stack otherwise.
    pub fn for_input(input_dim: usize) -> Self {
        let (hidden, output_dim) = match input_dim {
            2048 => ([512, 256, 128], 64),
            256 => ([256, 128, 64], 64),
            d if d >= 512 => ([512, 256, 128], 64),
            _ => ([256, 128, 64], 64),
        };
        Self {
            input_dim,
            hidden,
            output_dim,
        }
    }

    pub fn widths(&self) -> [usize; LAYER_COUNT + 1] {
        [
            self.input_dim,
            self.hidden[0],
            self.hidden[1],
            self.hidden[2],
            self.output_dim,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    layers: Vec<Dense>,
    raw_radius: f64,
    space: EmbeddingSpace,
    /// Changes on every parameter mutation; ties forward caches to one state.
    stamp: u64,
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.raw_radius.to_bits() == other.raw_radius.to_bits()
            && self.space == other.space
    }
}

impl MlpModel {
    /// Glorot-initialized layers, zero biases, `b = 0.25`.
    pub fn init(arch: Architecture, kind: SpaceKind, rng: &mut impl Rng) -> Result<Self> {
        let w = arch.widths();
        let layers = (0..LAYER_COUNT).map(|l| Dense::glorot(w[l], w[l + 1], rng)).collect();
        Self::from_parts(layers, softplus_inv(INITIAL_B), kind)
    }

    pub fn from_parts(layers: Vec<Dense>, raw_radius: f64, kind: SpaceKind) -> Result<Self> {
        if layers.len() != LAYER_COUNT {
            return Err(Error::invalid(format!(
                "expected {LAYER_COUNT} layers, got {}",
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layer.output_dim(),
                    got: layer.bias.len(),
                });
            }
            if l > 0 && layer.input_dim() != layers[l - 1].output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layers[l - 1].output_dim(),
                    got: layer.input_dim(),
                });
            }
            if layer.input_dim() == 0 || layer.output_dim() == 0 {
                return Err(Error::invalid("layer widths must be positive"));
            }
        }
        if !raw_radius.is_finite() {
            return Err(Error::invalid("raw radius must be finite"));
        }
        let space = EmbeddingSpace::new(kind, layers[LAYER_COUNT - 1].output_dim())?;
        Ok(Self {
            layers,
            raw_radius,
            space,
            stamp: fresh_stamp(),
        })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.layers[0].input_dim(),
            hidden: [
                self.layers[0].output_dim(),
                self.layers[1].output_dim(),
                self.layers[2].output_dim(),
            ],
            output_dim: self.layers[3].output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.space.dim
    }

    pub fn space(&self) -> &EmbeddingSpace {
        &self.space
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    pub fn raw_radius(&self) -> f64 {
        self.raw_radius
    }

    pub fn set_raw_radius(&mut self, raw: f64) {
        self.stamp = fresh_stamp();
        self.raw_radius = raw;
    }

    /// Learned squared ball radius `b = softplus(b̂)`.
    pub fn b(&self) -> f64 {
        softplus(self.raw_radius)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum::<usize>() + 1
    }

    /// Frobenius norm of every layer's weights and bias, then `|b̂|`.
    pub fn parameter_norms(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .layers
            .iter()
            .map(|l| (l.weights.frobenius_norm().powi(2) + dot(&l.bias, &l.bias)).sqrt())
            .collect();
        out.push(self.raw_radius.abs());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.raw_radius.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Embedding of a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_vec())
    }

    /// Embeddings of every row of `inputs`.
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(inputs)?.output)
    }

    /// Forward pass keeping the activations needed by [`MlpModel::backward`].
    pub fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.cols(),
            });
        }
        if !inputs.is_finite() {
            return Err(Error::invalid("non-finite input feature"));
        }
        // activations[l] is the input to layer l; the last entry is the raw output
        let mut activations = Vec::with_capacity(LAYER_COUNT + 1);
        activations.push(inputs.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&activations[l]);
            if l + 1 < LAYER_COUNT {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        let raw = &activations[LAYER_COUNT];
        let (output, norms) = match self.space.kind {
            SpaceKind::Euclidean => (raw.clone(), Vec::new()),
            SpaceKind::Hypersphere => {
                let mut out = raw.clone();
                let mut norms = Vec::with_capacity(raw.rows());
                for i in 0..raw.rows() {
                    let norm = l2_norm(raw.row(i));
                    if !(norm > DEGENERATE_INPUT_NORM) {
                        return Err(Error::DegenerateInput { norm });
                    }
                    out.row_mut(i).iter_mut().for_each(|v| *v /= norm);
                    norms.push(norm);
                }
                (out, norms)
            }
        };
        if !output.is_finite() {
            return Err(Error::invalid("non-finite embedding"));
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            activations,
            norms,
            output,
        })
    }

    /// Gradients of a scalar loss given its gradient w.r.t. the embeddings of
    /// the cached batch and w.r.t. the raw radius.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix, grad_raw_radius: f64) -> Result<Gradients> {
        if cache.stamp != self.stamp {
            return Err(Error::ContractViolation(
                "forward cache does not belong to the current model parameters".into(),
            ));
        }
        if grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols() {
            return Err(Error::DimensionMismatch {
                expected: cache.output.rows() * cache.output.cols(),
                got: grad_output.rows() * grad_output.cols(),
            });
        }
        // delta = dL/dz for the current layer's pre-activation
        let mut delta = match self.space.kind {
            SpaceKind::Euclidean => grad_output.clone(),
            SpaceKind::Hypersphere => {
                // u = z/|z|  =>  dL/dz = (g - (g.u) u) / |z|
                let mut d = grad_output.clone();
                for i in 0..d.rows() {
                    let u = cache.output.row(i);
                    let along = dot(grad_output.row(i), u);
                    let inv = 1.0 / cache.norms[i];
                    for (dv, uv) in d.row_mut(i).iter_mut().zip(u) {
                        *dv = (*dv - along * uv) * inv;
                    }
                }
                d
            }
        };
        let mut layers = vec![Dense::zeros(1, 1); LAYER_COUNT];
        for l in (0..LAYER_COUNT).rev() {
            let layer = &self.layers[l];
            let input = &cache.activations[l];
            layers[l] = weight_gradient(&delta, input);
            if l == 0 {
                break;
            }
            // back through W and the ReLU that produced `input`
            let in_dim = layer.input_dim();
            let mut prev = Matrix::zeros(delta.rows(), in_dim);
            prev.as_mut_slice()
                .par_chunks_mut(in_dim)
                .enumerate()
                .for_each(|(i, pr)| {
                    let dr = delta.row(i);
                    for (o, &dv) in dr.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        for (p, w) in pr.iter_mut().zip(layer.weights.row(o)) {
                            *p += dv * w;
                        }
                    }
                    for (p, a) in pr.iter_mut().zip(input.row(i)) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                });
            delta = prev;
        }
        Ok(Gradients {
            layers,
            raw_radius: grad_raw_radius,
        })
    }
}

/// `dW = delta^T X`, `db = sum delta`; each output unit reduces over the batch
/// in index order, so the result does not depend on the thread count.
fn weight_gradient(delta: &Matrix, input: &Matrix) -> Dense {
    let out = delta.cols();
    let inp = input.cols();
    let n = delta.rows();
    let rows: Vec<(Vec<f64>, f64)> = (0..out)
        .into_par_iter()
        .map(|o| {
            let mut gw = vec![0.0; inp];
            let mut gb = 0.0;
            for i in 0..n {
                let dv = delta.get(i, o);
                if dv == 0.0 {
                    continue;
                }
                gb += dv;
                for (g, x) in gw.iter_mut().zip(input.row(i)) {
                    *g += dv * x;
                }
            }
            (gw, gb)
        })
        .collect();
    let mut weights = Matrix::zeros(out, inp);
    let mut bias = vec![0.0; out];
    for (o, (gw, gb)) in rows.into_iter().enumerate() {
        weights.row_mut(o).copy_from_slice(&gw);
        bias[o] = gb;
    }
    Dense { weights, bias }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    activations: Vec<Matrix>,
    norms: Vec<f64>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn into_output(self) -> Matrix {
        self.output
    }
}

/// Same shapes as the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub raw_radius: f64,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            raw_radius: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.raw_radius == 0.0
            && self
                .layers
                .iter()
                .all(|l| l.weights.as_slice().iter().chain(&l.bias).all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.raw_radius.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(kind: SpaceKind, seed: u64) -> MlpModel {
        let arch = Architecture {
            input_dim: 6,
            hidden: [7, 5, 4],
            output_dim: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::init(arch, kind, &mut rng).unwrap();
        for l in m.layers_mut() {
            for b in &mut l.bias {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        m
    }

    fn random_inputs(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    /// Plain nested loops, one layer at a time.
    fn reference_forward(m: &MlpModel, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (l, layer) in m.layers().iter().enumerate() {
            let mut next = Vec::new();
            for o in 0..layer.output_dim() {
                let mut s = layer.bias[o];
                for i in 0..layer.input_dim() {
                    s += layer.weights.get(o, i) * h[i];
                }
                next.push(if l < 3 && s < 0.0 { 0.0 } else { s });
            }
            h = next;
        }
        if m.space().is_hypersphere() {
            let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            h.iter_mut().for_each(|v| *v /= n);
        }
        h
    }

    #[test]
    fn default_architectures() {
        assert_eq!(Architecture::for_input(256).widths(), [256, 256, 128, 64, 64]);
        assert_eq!(Architecture::for_input(2048).widths(), [2048, 512, 256, 128, 64]);
        let m = MlpModel::init(
            Architecture::for_input(256),
            SpaceKind::Euclidean,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!((m.b() - 0.25).abs() < 1e-12);
        assert!(m.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        // Glorot bound of the first layer
        let limit = (6.0 / 512.0f64).sqrt();
        assert!(m.layers()[0].weights.as_slice().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn zero_model_gives_zero_embedding() {
        let layers = [(4, 3), (3, 3), (3, 2), (2, 2)]
            .iter()
            .map(|&(i, o)| Dense::zeros(i, o))
            .collect();
        let m = MlpModel::from_parts(layers, 0.0, SpaceKind::Euclidean).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_blocks_pass_positive_input_through() {
        let eye = |d: usize| {
            let mut l = Dense::zeros(d, d);
            for i in 0..d {
                l.weights.set(i, i, 1.0);
            }
            l
        };
        let m = MlpModel::from_parts(vec![eye(3), eye(3), eye(3), eye(3)], 0.0, SpaceKind::Euclidean).unwrap();
        assert_eq!(m.forward(&[0.5, 2.0, 7.25]).unwrap(), vec![0.5, 2.0, 7.25]);
    }

    #[test]
    fn forward_matches_reference() {
        for kind in [SpaceKind::Euclidean, SpaceKind::Hypersphere] {
            for seed in 0..10 {
                let m = small(kind, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let x = random_inputs(&mut rng, 8, 6);
                let out = m.forward_batch(&x).unwrap();
                for i in 0..8 {
                    let r = reference_forward(&m, x.row(i));
                    for (a, b) in out.row(i).iter().zip(&r) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dimension_checks() {
        let m = small(SpaceKind::Euclidean, 0);
        assert!(matches!(m.forward(&[1.0; 5]), Err(Error::DimensionMismatch { .. })));
        let bad = vec![
            Dense::zeros(3, 2),
            Dense::zeros(3, 2),
            Dense::zeros(2, 2),
            Dense::zeros(2, 2),
        ];
        assert!(MlpModel::from_parts(bad, 0.0, SpaceKind::Euclidean).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let m = small(SpaceKind::Hypersphere, 3);
        let x = random_inputs(&mut ChaCha8Rng::seed_from_u64(1), 5, 6);
        let cache = m.forward_cached(&x).unwrap();
        let g = m.backward(&cache, &Matrix::zeros(5, 3), 0.0).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = small(SpaceKind::Euclidean, 4);
        let x = random_inputs(&mut ChaCha8Rng::seed_from_u64(2), 3, 6);
        let cache = m.forward_cached(&x).unwrap();
        m.set_raw_radius(1.0);
        assert!(matches!(
            m.backward(&cache, &Matrix::zeros(3, 3), 0.0),
            Err(Error::ContractViolation(_))
        ));
        let other = small(SpaceKind::Euclidean, 4);
        let cache = other.forward_cached(&x).unwrap();
        assert!(m.backward(&cache, &Matrix::zeros(3, 3), 0.0).is_err());
    }

    #[test]
    fn single_linear_layer_closed_form() {
        // with identity layers after the first and a positive pre-activation,
        // L = |W x|^2 has dL/dW = 2 (W x) x^T
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut first = Dense::zeros(4, 3);
        for w in first.weights.as_mut_slice() {
            *w = rng.random_range(0.1..1.0);
        }
        let eye = |d: usize| {
            let mut l = Dense::zeros(d, d);
            for i in 0..d {
                l.weights.set(i, i, 1.0);
            }
            l
        };
        let m = MlpModel::from_parts(vec![first.clone(), eye(3), eye(3), eye(3)], 0.0, SpaceKind::Euclidean).unwrap();
        let x = [0.3, 0.9, 0.2, 0.7];
        let cache = m.forward_cached(&Matrix::from_vec(1, 4, x.to_vec()).unwrap()).unwrap();
        let f = cache.output().row(0).to_vec();
        let grad_out = Matrix::from_vec(1, 3, f.iter().map(|v| 2.0 * v).collect()).unwrap();
        let g = m.backward(&cache, &grad_out, 0.0).unwrap();
        for o in 0..3 {
            for i in 0..4 {
                assert!((g.layers[0].weights.get(o, i) - 2.0 * f[o] * x[i]).abs() < 1e-10);
            }
            assert!((g.layers[0].bias[o] - 2.0 * f[o]).abs() < 1e-10);
        }
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        const H: f64 = 1e-5;
        for kind in [SpaceKind::Euclidean, SpaceKind::Hypersphere] {
            for seed in 0..4 {
                let m = small(kind, 20 + seed);
                let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
                let x = random_inputs(&mut rng, 6, 6);
                let target = random_inputs(&mut rng, 6, 3);
                // L = sum (f - t)^2 + 0.5 * b̂^2 to exercise the radius path
                let loss = |m: &MlpModel| {
                    let f = m.forward_batch(&x).unwrap();
                    let s: f64 = f
                        .as_slice()
                        .iter()
                        .zip(target.as_slice())
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    s + 0.5 * m.raw_radius().powi(2)
                };
                let cache = m.forward_cached(&x).unwrap();
                let go: Vec<f64> = cache
                    .output()
                    .as_slice()
                    .iter()
                    .zip(target.as_slice())
                    .map(|(a, b)| 2.0 * (a - b))
                    .collect();
                let g = m
                    .backward(&cache, &Matrix::from_vec(6, 3, go).unwrap(), m.raw_radius())
                    .unwrap();
                assert!(m.parameter_count() <= 2000);
                let close = |a: f64, n: f64| (a - n).abs() <= 1e-7 || (a - n).abs() <= 1e-4 * a.abs().max(n.abs());
                for l in 0..LAYER_COUNT {
                    let count = m.layers()[l].weights.as_slice().len();
                    for idx in 0..count + m.layers()[l].bias.len() {
                        let eval = |delta: f64| {
                            let mut p = m.clone();
                            let layer = &mut p.layers_mut()[l];
                            if idx < count {
                                layer.weights.as_mut_slice()[idx] += delta;
                            } else {
                                layer.bias[idx - count] += delta;
                            }
                            loss(&p)
                        };
                        let numeric = (eval(H) - eval(-H)) / (2.0 * H);
                        let analytic = if idx < count {
                            g.layers[l].weights.as_slice()[idx]
                        } else {
                            g.layers[l].bias[idx - count]
                        };
                        assert!(
                            close(analytic, numeric),
                            "{kind:?} layer {l} idx {idx}: {analytic} vs {numeric}"
                        );
                    }
                }
                let mut p = m.clone();
                p.set_raw_radius(m.raw_radius() + H);
                let up = loss(&p);
                p.set_raw_radius(m.raw_radius() - H);
                let numeric = (up - loss(&p)) / (2.0 * H);
                assert!(close(g.raw_radius, numeric));
            }
        }
    }
}
