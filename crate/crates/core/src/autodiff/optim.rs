use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum:
///
/// ```text
/// v <- momentum * v + g
/// p <- p - lr * v
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocities: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, store: &ParamStore) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        let velocities = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Ok(Sgd { learning_rate, momentum, velocities })
    }

    pub fn velocities(&self) -> &[Vec<f64>] {
        &self.velocities
    }

    /// Restores velocity buffers, e.g. from a checkpoint.
    pub fn set_velocities(&mut self, velocities: Vec<Vec<f64>>) -> Result<()> {
        if velocities.len() != self.velocities.len()
            || velocities.iter().zip(&self.velocities).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::shape("sgd_momentum_step", "velocity buffers do not match parameters"));
        }
        self.velocities = velocities;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != self.velocities.len() || store.len() != self.velocities.len() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!(
                    "{} params, {} grads, {} velocity buffers",
                    store.len(),
                    grads.len(),
                    self.velocities.len()
                ),
            ));
        }
        for id in store.ids() {
            let g = grads.get(id);
            let v = &mut self.velocities[id.index()];
            let p = store.get_mut(id);
            if g.len() != v.len() || p.numel() != v.len() {
                return Err(Error::shape(
                    "sgd_momentum_step",
                    format!("param {:?} has {} values, grad {}, velocity {}", id, p.numel(), g.len(), v.len()),
                ));
            }
            for ((p, v), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g;
                *p -= self.learning_rate * *v;
            }
        }
        Ok(())
    }
}
