//! Heavy-ball SGD: `v <- mu v + g`, `p <- p - lr v`.

use super::mlp::{Gradients, MlpModel};

#[derive(Debug, Clone)]
pub struct Momentum {
    pub momentum: f64,
    velocity: Gradients,
}

impl Momentum {
    pub fn new(model: &MlpModel, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: Gradients::zeros_like(model),
        }
    }

    /// One update; the raw radius uses its own learning rate.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64, radius_lr: f64) {
        let mu = self.momentum;
        for ((layer, v), g) in model
            .layers_mut()
            .iter_mut()
            .zip(&mut self.velocity.layers)
            .zip(&grads.layers)
        {
            let params = layer.weights.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
            let vels = v.weights.as_mut_slice().iter_mut().chain(v.bias.iter_mut());
            let gs = g.weights.as_slice().iter().chain(&g.bias);
            for ((p, v), g) in params.zip(vels).zip(gs) {
                *v = mu * *v + g;
                *p -= lr * *v;
            }
        }
        self.velocity.raw_radius = mu * self.velocity.raw_radius + grads.raw_radius;
        let raw = model.raw_radius() - radius_lr * self.velocity.raw_radius;
        model.set_raw_radius(raw);
    }
}

/// Same rule for a free-standing parameter vector (the classifier head).
#[derive(Debug, Clone)]
pub struct MomentumVec {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl MomentumVec {
    pub fn new(len: usize, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
    }
}
