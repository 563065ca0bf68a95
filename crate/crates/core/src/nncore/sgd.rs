use super::{Gradients, LinearGrad, Mlp};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- momentum * v + grad + weight_decay * param`, `param <- param - lr * v`.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    velocity: Vec<LinearGrad>,
}

impl SgdState {
    pub fn new(model: &Mlp, learning_rate: f64, weight_decay: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Self {
            learning_rate,
            weight_decay,
            momentum,
            velocity: model.layers().map(|(_, l)| LinearGrad::zeros_like(l)).collect(),
        })
    }

    pub fn velocity(&self) -> &[LinearGrad] {
        &self.velocity
    }

    /// Applies one update. Layers that are frozen or have no gradient are
    /// left bit-identical.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.velocity.len() {
            return Err(Error::shape("sgd_step gradients", self.velocity.len(), grads.layers.len()));
        }
        let (lr, wd, mom) = (self.learning_rate, self.weight_decay, self.momentum);
        for (((_, layer), grad), vel) in model.layers_mut().zip(&grads.layers).zip(&mut self.velocity) {
            let Some(grad) = grad else { continue };
            if layer.frozen {
                continue;
            }
            if grad.weight.shape() != layer.weight.shape() || grad.bias.len() != layer.bias.len() {
                return Err(Error::shape(
                    "sgd_step layer gradient",
                    format!("{:?}", layer.weight.shape()),
                    format!("{:?}", grad.weight.shape()),
                ));
            }
            let params = layer.weight.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
            let g = grad.weight.as_slice().iter().chain(&grad.bias);
            let v = vel.weight.as_mut_slice().iter_mut().chain(vel.bias.iter_mut());
            for ((p, &g), v) in params.zip(g).zip(v) {
                *v = mom * *v + g + wd * *p;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

/// Convenience wrapper matching the functional form used in tests.
pub fn sgd_step(model: &mut Mlp, grads: &Gradients, state: &mut SgdState) -> Result<()> {
    state.step(model, grads)
}
