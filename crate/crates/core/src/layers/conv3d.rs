use std::ops::Range;

use crate::error::{shape_err, Result};
use crate::par;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// 3D cross-correlation over `[N, K_in, F, H, W]` activations.
///
/// A `1x1x1` kernel gives the pointwise convolution used by class-regularization
/// blocks to project classifier weights into a layer's channel space.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub weight_grad: Tensor,
    pub bias_grad: Tensor,
    input: Option<Tensor>,
}

/// Output extent along one axis: `floor((in + 2p - k) / s) + 1`.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(shape_err!("kernel and stride must be >= 1"));
    }
    if input + 2 * pad < kernel {
        return Err(shape_err!("kernel {kernel} larger than padded input {}", input + 2 * pad));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Output positions `o` for which `o * stride + k - pad` lands inside `[0, input)`.
fn valid_outputs(input: usize, output: usize, k: usize, stride: usize, pad: usize) -> Range<usize> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if input + pad > k { (input + pad - k - 1) / stride + 1 } else { 0 };
    lo.min(output)..hi.min(output).max(lo.min(output))
}

#[derive(Clone, Copy)]
struct Geometry {
    k_in: usize,
    k_out: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }
    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }
    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }
}

impl Conv3d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if stride.contains(&0) {
            return Err(shape_err!("stride must be >= 1, got {stride:?}"));
        }
        let weight = Tensor::zeros(&[out_channels, in_channels, kernel[0], kernel[1], kernel[2]])?;
        let bias = Tensor::zeros(&[out_channels])?;
        Ok(Self { weight_grad: weight.clone(), bias_grad: bias.clone(), weight, bias, stride, padding, input: None })
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, [1, 1, 1], [1, 1, 1], [0, 0, 0])
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    /// Kaiming fan-in normal init, zero bias.
    pub fn init_kaiming(&mut self, rng: &mut SplitMix64) {
        let fan_in = self.in_channels() * self.kernel().iter().product::<usize>();
        let std = (2.0 / fan_in as f64).sqrt();
        self.weight.data_mut().iter_mut().for_each(|w| *w = rng.normal() * std);
        self.bias.fill(0.0);
    }

    /// Output shape `[N, K_out, F', H', W']` for an input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(self.geometry(input)?.output_shape(input[0]))
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry> {
        if input.len() != 5 {
            return Err(shape_err!("conv3d expects [N, K, F, H, W], got {input:?}"));
        }
        if input[1] != self.in_channels() {
            return Err(shape_err!("conv3d expects {} input channels, got {}", self.in_channels(), input[1]));
        }
        let kernel = self.kernel();
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = conv_out_extent(input[2 + a], kernel[a], self.stride[a], self.padding[a])?;
        }
        Ok(Geometry {
            k_in: input[1],
            k_out: self.out_channels(),
            input: [input[2], input[3], input[4]],
            output,
            kernel,
            stride: self.stride,
            pad: self.padding,
        })
    }

    pub fn zero_grad(&mut self) {
        self.weight_grad.fill(0.0);
        self.bias_grad.fill(0.0);
    }

    /// Forward pass that also caches the input for [`Conv3d::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = conv3d_forward(self, x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| crate::Error::State("conv3d backward before forward".into()))?;
        let gx = conv3d_backward(self, &x, grad_out);
        self.input = Some(x);
        gx
    }
}

impl Geometry {
    fn output_shape(&self, n: usize) -> Vec<usize> {
        vec![n, self.k_out, self.output[0], self.output[1], self.output[2]]
    }
}

/// Per-sample forward; accumulates each output over `(ic, kf, kh, kw)` in
/// ascending order, then adds the bias. Matches [`conv3d_forward_reference`]
/// bit-for-bit.
fn forward_sample(g: &Geometry, weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let [fi, hi, wi] = g.input;
    let [fo, ho, wo] = g.output;
    let [kf, kh, kw] = g.kernel;
    let [sf, sh, sw] = g.stride;
    let [pf, ph, pw] = g.pad;
    let in_vol = g.in_volume();
    let out_vol = g.out_volume();
    let k_vol = g.kernel_volume();
    out.fill(0.0);
    for oc in 0..g.k_out {
        let plane = &mut out[oc * out_vol..(oc + 1) * out_vol];
        for ic in 0..g.k_in {
            let xin = &x[ic * in_vol..(ic + 1) * in_vol];
            let wbase = (oc * g.k_in + ic) * k_vol;
            for a in 0..kf {
                let rf = valid_outputs(fi, fo, a, sf, pf);
                for b in 0..kh {
                    let rh = valid_outputs(hi, ho, b, sh, ph);
                    for c in 0..kw {
                        let rw = valid_outputs(wi, wo, c, sw, pw);
                        let wv = weight[wbase + (a * kh + b) * kw + c];
                        for od in rf.clone() {
                            let id = od * sf + a - pf;
                            for oh in rh.clone() {
                                let ih = oh * sh + b - ph;
                                let orow = (od * ho + oh) * wo;
                                let irow = (id * hi + ih) * wi;
                                if sw == 1 {
                                    let iw0 = rw.start + c - pw;
                                    let dst = &mut plane[orow + rw.start..orow + rw.end];
                                    let src = &xin[irow + iw0..irow + iw0 + rw.len()];
                                    for (o, &v) in dst.iter_mut().zip(src) {
                                        *o += wv * v;
                                    }
                                } else {
                                    for ow in rw.clone() {
                                        plane[orow + ow] += wv * xin[irow + ow * sw + c - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let bv = bias[oc];
        plane.iter_mut().for_each(|o| *o += bv);
    }
}

/// Convolution forward pass, parallel over the batch axis when enabled.
pub fn conv3d_forward(layer: &Conv3d, x: &Tensor) -> Result<Tensor> {
    let g = layer.geometry(x.shape())?;
    let n = x.shape()[0];
    let mut out = Tensor::zeros(&g.output_shape(n))?;
    let in_len = g.k_in * g.in_volume();
    let out_len = g.k_out * g.out_volume();
    let (w, b, xd) = (layer.weight.data(), layer.bias.data(), x.data());
    par::for_each_chunk_mut(out.data_mut(), out_len, |i, chunk| {
        forward_sample(&g, w, b, &xd[i * in_len..(i + 1) * in_len], chunk);
    });
    Ok(out)
}

/// Direct loop over every output element; the reference the blocked
/// [`conv3d_forward`] must reproduce bit-exactly.
pub fn conv3d_forward_reference(layer: &Conv3d, x: &Tensor) -> Result<Tensor> {
    let g = layer.geometry(x.shape())?;
    let n = x.shape()[0];
    let mut out = Tensor::zeros(&g.output_shape(n))?;
    let [fi, hi, wi] = g.input;
    let [fo, ho, wo] = g.output;
    let [kf, kh, kw] = g.kernel;
    let w = layer.weight.data();
    let xd = x.data();
    let od_ = out.data_mut();
    let mut idx = 0;
    for s in 0..n {
        for oc in 0..g.k_out {
            for of in 0..fo {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..g.k_in {
                            for a in 0..kf {
                                let f = (of * g.stride[0] + a) as isize - g.pad[0] as isize;
                                if f < 0 || f >= fi as isize {
                                    continue;
                                }
                                for b in 0..kh {
                                    let h = (oh * g.stride[1] + b) as isize - g.pad[1] as isize;
                                    if h < 0 || h >= hi as isize {
                                        continue;
                                    }
                                    for c in 0..kw {
                                        let ww = (ow * g.stride[2] + c) as isize - g.pad[2] as isize;
                                        if ww < 0 || ww >= wi as isize {
                                            continue;
                                        }
                                        let xi = (((s * g.k_in + ic) * fi + f as usize) * hi + h as usize) * wi
                                            + ww as usize;
                                        let wi_ = (((oc * g.k_in + ic) * kf + a) * kh + b) * kw + c;
                                        acc += w[wi_] * xd[xi];
                                    }
                                }
                            }
                        }
                        od_[idx] = acc + layer.bias.data()[oc];
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

struct SampleGrads {
    gx: Vec<f64>,
    gw: Vec<f64>,
    gb: Vec<f64>,
}

fn backward_sample(g: &Geometry, weight: &[f64], x: &[f64], go: &[f64]) -> SampleGrads {
    let [fi, hi, wi] = g.input;
    let [fo, ho, wo] = g.output;
    let [kf, kh, kw] = g.kernel;
    let [sf, sh, sw] = g.stride;
    let [pf, ph, pw] = g.pad;
    let in_vol = g.in_volume();
    let out_vol = g.out_volume();
    let k_vol = g.kernel_volume();
    let mut gx = vec![0.0; g.k_in * in_vol];
    let mut gw = vec![0.0; g.k_out * g.k_in * k_vol];
    let mut gb = vec![0.0; g.k_out];
    for oc in 0..g.k_out {
        let gplane = &go[oc * out_vol..(oc + 1) * out_vol];
        gb[oc] = gplane.iter().sum();
        for ic in 0..g.k_in {
            let xin = &x[ic * in_vol..(ic + 1) * in_vol];
            let gxin = &mut gx[ic * in_vol..(ic + 1) * in_vol];
            let wbase = (oc * g.k_in + ic) * k_vol;
            for a in 0..kf {
                let rf = valid_outputs(fi, fo, a, sf, pf);
                for b in 0..kh {
                    let rh = valid_outputs(hi, ho, b, sh, ph);
                    for c in 0..kw {
                        let rw = valid_outputs(wi, wo, c, sw, pw);
                        let wv = weight[wbase + (a * kh + b) * kw + c];
                        let mut acc = 0.0;
                        for od in rf.clone() {
                            let id = od * sf + a - pf;
                            for oh in rh.clone() {
                                let ih = oh * sh + b - ph;
                                let orow = (od * ho + oh) * wo;
                                let irow = (id * hi + ih) * wi;
                                for ow in rw.clone() {
                                    let ii = irow + ow * sw + c - pw;
                                    let gv = gplane[orow + ow];
                                    acc += gv * xin[ii];
                                    gxin[ii] += wv * gv;
                                }
                            }
                        }
                        gw[wbase + (a * kh + b) * kw + c] = acc;
                    }
                }
            }
        }
    }
    SampleGrads { gx, gw, gb }
}

/// Accumulates parameter gradients into the layer buffers and returns the
/// input gradient. Per-sample parameter gradients are added to the buffers in
/// sample order, so the result does not depend on the thread count.
pub fn conv3d_backward(layer: &mut Conv3d, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let g = layer.geometry(x.shape())?;
    let n = x.shape()[0];
    let expected = g.output_shape(n);
    if grad_out.shape() != expected.as_slice() {
        return Err(shape_err!("conv3d grad_out shape {:?} != forward output {expected:?}", grad_out.shape()));
    }
    let in_len = g.k_in * g.in_volume();
    let out_len = g.k_out * g.out_volume();
    let (w, xd, gd) = (layer.weight.data(), x.data(), grad_out.data());
    let per_sample = par::map_indexed(n, |i| {
        backward_sample(&g, w, &xd[i * in_len..(i + 1) * in_len], &gd[i * out_len..(i + 1) * out_len])
    });
    let mut gx = Vec::with_capacity(n * in_len);
    for s in per_sample {
        layer.weight_grad.data_mut().iter_mut().zip(&s.gw).for_each(|(a, b)| *a += b);
        layer.bias_grad.data_mut().iter_mut().zip(&s.gb).for_each(|(a, b)| *a += b);
        gx.extend_from_slice(&s.gx);
    }
    Tensor::from_vec(x.shape(), gx)
}
