//! Stochastic gradient descent with momentum and weight decay.

use super::unet::SegModel;

pub const DEFAULT_MOMENTUM: f32 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f32 = 1e-4;

/// Heavy-ball SGD: `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(model: &SegModel, momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: model.params().iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, model: &mut SegModel, lr: f32) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        for (p, v) in model.params_mut().into_iter().zip(&mut self.velocity) {
            for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *v = mu * *v + (*g + wd * *w);
                *w -= lr * *v;
            }
        }
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    /// Replaces the momentum buffers; lengths must match the model's parameters.
    pub fn set_velocity(&mut self, velocity: Vec<Vec<f32>>) -> bool {
        let ok = velocity.len() == self.velocity.len()
            && velocity.iter().zip(&self.velocity).all(|(a, b)| a.len() == b.len());
        if ok {
            self.velocity = velocity;
        }
        ok
    }
}
