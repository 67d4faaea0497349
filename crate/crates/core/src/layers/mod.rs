//! Differentiable layers of the host network.

mod conv3d;
mod fc;
mod simple;

pub use conv3d::{conv3d_backward, conv3d_forward, conv3d_forward_reference, conv_out_extent, Conv3d};
pub use fc::{fc_backward, fc_forward, Fc};
pub use simple::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward, AvgPool3d, GlobalAvgPool, Relu,
};

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv3d(Conv3d),
    Relu(Relu),
    AvgPool3d(AvgPool3d),
    GlobalAvgPool(GlobalAvgPool),
    Fc(Fc),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv3d(_) => "conv3d",
            Layer::Relu(_) => "relu",
            Layer::AvgPool3d(_) => "avg_pool3d",
            Layer::GlobalAvgPool(_) => "global_avg_pool",
            Layer::Fc(_) => "fc",
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv3d(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::AvgPool3d(l) => l.forward(x),
            Layer::GlobalAvgPool(l) => l.forward(x),
            Layer::Fc(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv3d(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::AvgPool3d(l) => l.backward(grad_out),
            Layer::GlobalAvgPool(l) => l.backward(grad_out),
            Layer::Fc(l) => l.backward(grad_out),
        }
    }

    /// `(name, value, grad)` for each trainable tensor, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv3d(l) => {
                vec![("weight", &mut l.weight, &mut l.weight_grad), ("bias", &mut l.bias, &mut l.bias_grad)]
            }
            Layer::Fc(l) => {
                vec![("weight", &mut l.weight, &mut l.weight_grad), ("bias", &mut l.bias, &mut l.bias_grad)]
            }
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Conv3d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Fc(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Conv3d(l) => l.zero_grad(),
            Layer::Fc(l) => l.zero_grad(),
            _ => {}
        }
    }
}
