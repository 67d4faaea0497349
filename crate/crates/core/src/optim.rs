//! SGD with momentum.

use crate::error::Result;
use crate::tensor::Tensor;

/// One momentum step: `v <- momentum * v + grad; param <- param - lr * v`.
pub fn sgd_momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    param.same_shape(grad)?;
    param.same_shape(velocity)?;
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Holds one velocity buffer per parameter, matched by position.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocities: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocities: Vec::new() }
    }

    /// Updates every `(param, grad)` pair; velocities are created lazily on
    /// the first call, so the parameter list must keep the same order.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a mut Tensor, &'a Tensor)>) -> Result<()> {
        for (i, (p, g)) in params.into_iter().enumerate() {
            if self.velocities.len() == i {
                self.velocities.push(Tensor::zeros(p.shape())?);
            }
            sgd_momentum_step(p, g, &mut self.velocities[i], self.lr, self.momentum)?;
        }
        Ok(())
    }
}
