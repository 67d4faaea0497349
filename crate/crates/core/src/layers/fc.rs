use crate::error::{shape_err, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Fully connected layer `y = x W^T + b` with `W: [out, in]`.
///
/// When it is the last layer of a network its weight matrix is the classifier
/// `W_fc` (rows are per-class weight vectors) that class-regularization blocks
/// read through a snapshot.
#[derive(Debug, Clone)]
pub struct Fc {
    pub weight: Tensor,
    pub bias: Tensor,
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
    input: Option<Tensor>,
}

impl Fc {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        let weight = Tensor::zeros(&[out_features, in_features])?;
        let bias = Tensor::zeros(&[out_features])?;
        Ok(Self { weight_grad: weight.clone(), bias_grad: bias.clone(), weight, bias, input: None })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn init_kaiming(&mut self, rng: &mut SplitMix64) {
        let std = (2.0 / self.in_features() as f64).sqrt();
        self.weight.data_mut().iter_mut().for_each(|w| *w = rng.normal() * std);
        self.bias.fill(0.0);
    }

    pub fn zero_grad(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = fc_forward(self, x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| crate::Error::State("fc backward before forward".into()))?;
        let gx = fc_backward(self, &x, grad_out);
        self.input = Some(x);
        gx
    }
}

pub fn fc_forward(layer: &Fc, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[1] != layer.in_features() {
        return Err(shape_err!("fc expects [N, {}], got {:?}", layer.in_features(), x.shape()));
    }
    let mut y = x.matmul(&layer.weight.transpose()?)?;
    let out = layer.out_features();
    for row in y.data_mut().chunks_mut(out) {
        row.iter_mut().zip(layer.bias.data()).for_each(|(v, b)| *v += b);
    }
    Ok(y)
}

pub fn fc_backward(layer: &mut Fc, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    if grad_out.shape() != [n, layer.out_features()] {
        return Err(shape_err!("fc grad shape {:?} != [{n}, {}]", grad_out.shape(), layer.out_features()));
    }
    let gw = grad_out.transpose()?.matmul(x)?;
    layer.weight_grad.add_assign(&gw)?;
    for row in grad_out.data().chunks(layer.out_features()) {
        layer.bias_grad.data_mut().iter_mut().zip(row).for_each(|(b, g)| *b += g);
    }
    grad_out.matmul(&layer.weight)
}
