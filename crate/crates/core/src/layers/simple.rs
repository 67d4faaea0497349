use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// `max(0, x)`; the subgradient at exactly zero is 0.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.same_shape(grad_out)?;
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data)
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.input = Some(x.clone());
        Ok(relu_forward(x))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| crate::Error::State("relu backward before forward".into()))?;
        relu_backward(x, grad_out)
    }
}

/// Non-overlapping average pooling over `(F, H, W)`; stride equals kernel,
/// trailing remainders are dropped.
#[derive(Debug, Clone)]
pub struct AvgPool3d {
    pub kernel: [usize; 3],
    input_shape: Option<Vec<usize>>,
}

impl AvgPool3d {
    pub fn new(kernel: [usize; 3]) -> Result<Self> {
        if kernel.contains(&0) {
            return Err(shape_err!("pool kernel must be >= 1, got {kernel:?}"));
        }
        Ok(Self { kernel, input_shape: None })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 5 {
            return Err(shape_err!("avg_pool3d expects [N, K, F, H, W], got {input:?}"));
        }
        let mut out = input.to_vec();
        for a in 0..3 {
            out[2 + a] = input[2 + a] / self.kernel[a];
            if out[2 + a] == 0 {
                return Err(shape_err!("pool kernel {:?} larger than input {input:?}", self.kernel));
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let os = self.output_shape(x.shape())?;
        let is = x.shape();
        let [kf, kh, kw] = self.kernel;
        let norm = 1.0 / (kf * kh * kw) as f64;
        let mut out = Tensor::zeros(&os)?;
        let (fi, hi, wi) = (is[2], is[3], is[4]);
        let (fo, ho, wo) = (os[2], os[3], os[4]);
        let xd = x.data();
        let od = out.data_mut();
        for nk in 0..is[0] * is[1] {
            let xin = &xd[nk * fi * hi * wi..];
            let o = &mut od[nk * fo * ho * wo..(nk + 1) * fo * ho * wo];
            for f in 0..fo {
                for h in 0..ho {
                    for w in 0..wo {
                        let mut acc = 0.0;
                        for a in 0..kf {
                            for b in 0..kh {
                                let row = ((f * kf + a) * hi + h * kh + b) * wi + w * kw;
                                acc += xin[row..row + kw].iter().sum::<f64>();
                            }
                        }
                        o[(f * ho + h) * wo + w] = acc * norm;
                    }
                }
            }
        }
        self.input_shape = Some(is.to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let is =
            self.input_shape.clone().ok_or_else(|| crate::Error::State("avg_pool3d backward before forward".into()))?;
        let os = self.output_shape(&is)?;
        if grad_out.shape() != os.as_slice() {
            return Err(shape_err!("avg_pool3d grad shape {:?} != {os:?}", grad_out.shape()));
        }
        let [kf, kh, kw] = self.kernel;
        let norm = 1.0 / (kf * kh * kw) as f64;
        let mut gx = Tensor::zeros(&is)?;
        let (hi, wi) = (is[3], is[4]);
        let (fo, ho, wo) = (os[2], os[3], os[4]);
        let in_vol = is[2] * hi * wi;
        let gd = grad_out.data();
        let gxd = gx.data_mut();
        for nk in 0..is[0] * is[1] {
            for f in 0..fo {
                for h in 0..ho {
                    for w in 0..wo {
                        let g = gd[((nk * fo + f) * ho + h) * wo + w] * norm;
                        for a in 0..kf {
                            for b in 0..kh {
                                let row = nk * in_vol + ((f * kf + a) * hi + h * kh + b) * wi + w * kw;
                                gxd[row..row + kw].iter_mut().for_each(|v| *v = g);
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Mean over frames, height and width: `[N, K, F, H, W] -> [N, K]`.
pub fn global_avg_pool(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 5 {
        return Err(shape_err!("global pooling expects [N, K, F, H, W], got {s:?}"));
    }
    let vol = s[2] * s[3] * s[4];
    let count = vol as f64;
    let data = a.data().chunks(vol).map(|c| c.iter().sum::<f64>() / count).collect();
    Tensor::from_vec(&[s[0], s[1]], data)
}

/// Each input element receives `g[n, k] / (F * H * W)`.
pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if input_shape.len() != 5 || grad_out.shape() != [input_shape[0], input_shape[1]] {
        return Err(shape_err!("global pooling grad {:?} vs input {input_shape:?}", grad_out.shape()));
    }
    let vol = input_shape[2] * input_shape[3] * input_shape[4];
    let count = vol as f64;
    let mut data = Vec::with_capacity(grad_out.len() * vol);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / count, vol));
    }
    Tensor::from_vec(input_shape, data)
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = global_avg_pool(x)?;
        self.input_shape = Some(x.shape().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let is = self
            .input_shape
            .as_ref()
            .ok_or_else(|| crate::Error::State("global pooling backward before forward".into()))?;
        global_avg_pool_backward(is, grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, DEFAULT_EPS};
    use crate::rng::SplitMix64;

    fn random(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::ones(&[3]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_finite_differences_away_from_kink() {
        let mut rng = SplitMix64::new(4);
        let x = random(&[2, 3, 2, 2, 2], &mut rng).map(|v| if v.abs() < 1e-3 { v + 0.1 } else { v });
        let r = random(x.shape(), &mut rng);
        let g = relu_backward(&x, &r).unwrap();
        let num = gradcheck::numerical_gradient(&x, DEFAULT_EPS, |xp| gradcheck::dot(&relu_forward(xp), &r));
        assert!(gradcheck::max_relative_error(&g, &num) < 1e-6);
    }

    #[test]
    fn global_pool_hand_values() {
        let a = Tensor::full(&[2, 3, 2, 2, 2], 7.0).unwrap();
        assert!(global_avg_pool(&a).unwrap().data().iter().all(|&v| v == 7.0));
        let a = Tensor::from_vec(&[1, 1, 2, 1, 1], vec![2.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&a).unwrap().data(), &[3.0]);
    }

    #[test]
    fn global_pool_matches_summation_loop() {
        let mut rng = SplitMix64::new(17);
        let a = random(&[2, 3, 4, 3, 5], &mut rng);
        let p = global_avg_pool(&a).unwrap();
        for n in 0..2 {
            for k in 0..3 {
                let mut s = 0.0;
                for f in 0..4 {
                    for h in 0..3 {
                        for w in 0..5 {
                            s += a.get(&[n, k, f, h, w]).unwrap();
                        }
                    }
                }
                assert!((p.get(&[n, k]).unwrap() - s / 60.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_gradients() {
        let mut rng = SplitMix64::new(23);
        let x = random(&[2, 2, 4, 4, 5], &mut rng);
        let mut pool = AvgPool3d::new([2, 2, 2]).unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2, 2, 2]);
        let r = random(y.shape(), &mut rng);
        let g = pool.backward(&r).unwrap();
        let mut probe = AvgPool3d::new([2, 2, 2]).unwrap();
        let num = gradcheck::numerical_gradient(&x, DEFAULT_EPS, |xp| gradcheck::dot(&probe.forward(xp).unwrap(), &r));
        assert!(gradcheck::max_relative_error(&g, &num) < 1e-6);

        let mut gap = GlobalAvgPool::default();
        let y = gap.forward(&x).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = gap.backward(&r).unwrap();
        let num =
            gradcheck::numerical_gradient(&x, DEFAULT_EPS, |xp| gradcheck::dot(&global_avg_pool(xp).unwrap(), &r));
        assert!(gradcheck::max_relative_error(&g, &num) < 1e-6);
    }
}
