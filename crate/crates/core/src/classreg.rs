//! Class-regularization block.
//!
//! A block sits after a convolutional stage with activations `a` of shape
//! `[N, K, F, H, W]`. Per forward pass it
//!
//! 1. pools `a` over frames and space into a `[N, K]` descriptor,
//! 2. projects the classifier weights `W_fc: [CL, D]` into the block's channel
//!    space with a learned pointwise convolution, giving `W_i: [CL, K]`,
//! 3. scores every class, `Z = pool(a) W_i^T`, and picks the top class per sample,
//! 4. rescales that class's row of `W_i` into a band controlled by the
//!    affection rate `A`,
//! 5. multiplies each activation channel by its rescaled weight.
//!
//! The classifier weights come from a [`ClassifierSnapshot`], a detached copy
//! refreshed once per training iteration. No gradient ever reaches it, and the
//! class index is treated as a constant during backpropagation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::layers::{conv3d_backward, conv3d_forward, global_avg_pool, Conv3d};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Ranges below this are treated as a constant weight row.
pub const DEGENERATE_RANGE: f64 = 1e-12;

/// How a selected class-weight row is mapped onto channel scale factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `[A, 2 - A]`: weak channels are damped, strong ones amplified.
    #[default]
    Straddle,
    /// `[A, 1]`: only damping.
    UnitCap,
    /// `A * (w - min) * (1 - A) / (max - min)`, range `[0, A (1 - A)]`.
    PaperLiteral,
}

impl NormMode {
    /// `(offset, span)` such that `w_hat = offset + (w - min) * span / (max - min)`.
    fn affine(self, a: f64) -> (f64, f64) {
        match self {
            NormMode::Straddle => (a, 2.0 - 2.0 * a),
            NormMode::UnitCap => (a, 1.0 - a),
            NormMode::PaperLiteral => (0.0, a * (1.0 - a)),
        }
    }

    /// Closed interval every non-degenerate output lies in.
    pub fn bounds(self, a: f64) -> (f64, f64) {
        match self {
            NormMode::Straddle => (a, 2.0 - a),
            NormMode::UnitCap => (a, 1.0),
            NormMode::PaperLiteral => (0.0, a * (1.0 - a)),
        }
    }
}

pub fn check_affection_rate(a: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(config_err!("affection rate must lie in (0, 1], got {a}"));
    }
    Ok(())
}

/// Min/max bookkeeping needed to differentiate the normalization.
#[derive(Debug, Clone, Copy)]
struct NormState {
    argmin: usize,
    argmax: usize,
    min: f64,
    range: f64,
    span: f64,
    degenerate: bool,
}

fn norm_state(w: &[f64], a: f64, mode: NormMode) -> NormState {
    let (mut argmin, mut argmax) = (0, 0);
    for (i, &v) in w.iter().enumerate() {
        if v < w[argmin] {
            argmin = i;
        }
        if v > w[argmax] {
            argmax = i;
        }
    }
    let range = w[argmax] - w[argmin];
    NormState {
        argmin,
        argmax,
        min: w[argmin],
        range,
        span: mode.affine(a).1,
        degenerate: range.is_nan() || range <= DEGENERATE_RANGE,
    }
}

fn normalize_row(w: &[f64], a: f64, mode: NormMode, out: &mut [f64]) -> NormState {
    let st = norm_state(w, a, mode);
    if st.degenerate {
        out.fill(1.0);
        return st;
    }
    let (offset, span) = mode.affine(a);
    let (lo, hi) = mode.bounds(a);
    for (o, &v) in out.iter_mut().zip(w) {
        *o = (offset + (v - st.min) * span / st.range).clamp(lo, hi);
    }
    st
}

/// Gradient of the normalization with respect to the raw row `w`. Min and max
/// subgradients go to their first occurrence.
fn normalize_row_backward(w: &[f64], st: &NormState, grad: &[f64], out: &mut [f64]) {
    if st.degenerate {
        return;
    }
    let coef = st.span / st.range;
    let mut total = 0.0;
    let mut weighted = 0.0;
    for ((o, &g), &v) in out.iter_mut().zip(grad).zip(w) {
        *o += coef * g;
        total += g;
        weighted += g * (v - st.min);
    }
    let curv = st.span / (st.range * st.range);
    out[st.argmin] += -coef * total + curv * weighted;
    out[st.argmax] -= curv * weighted;
}

/// Rescales a weight vector into its mode's band; a constant vector maps to
/// all ones in every mode.
pub fn normalize_affection(w: &Tensor, affection_rate: f64, mode: NormMode) -> Result<Tensor> {
    check_affection_rate(affection_rate)?;
    if w.rank() != 1 {
        return Err(shape_err!("normalize_affection expects a vector, got {:?}", w.shape()));
    }
    let mut out = Tensor::zeros(w.shape())?;
    normalize_row(w.data(), affection_rate, mode, out.data_mut());
    Ok(out)
}

/// Detached copy of the classifier weight matrix `[CL, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSnapshot {
    weights: Tensor,
}

impl ClassifierSnapshot {
    pub fn new(weights: &Tensor) -> Result<Self> {
        if weights.rank() != 2 || weights.shape()[0] < 2 {
            return Err(shape_err!("classifier snapshot expects [CL >= 2, D], got {:?}", weights.shape()));
        }
        Ok(Self { weights: weights.clone() })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.weights.shape()[1]
    }

    fn as_volume(&self) -> Tensor {
        self.weights.clone().reshape(&[self.classes(), self.features(), 1, 1, 1]).expect("same length")
    }
}

/// Mean over `(F, H, W)`.
pub fn global_avg_pool_stfw(a: &Tensor) -> Result<Tensor> {
    global_avg_pool(a)
}

/// `Z[n, c] = sum_k W_i[c, k] * pooled[n, k]`.
pub fn class_logits(mapped: &Tensor, pooled: &Tensor) -> Result<Tensor> {
    if mapped.rank() != 2 || pooled.rank() != 2 || mapped.shape()[1] != pooled.shape()[1] {
        return Err(shape_err!("class logits: W_i {:?} vs pooled {:?}", mapped.shape(), pooled.shape()));
    }
    pooled.matmul(&mapped.transpose()?)
}

/// Per-row argmax, lowest index on ties. Softmax is monotone, so this is the
/// most probable class without materializing probabilities.
pub fn select_class(z: &Tensor) -> Result<Vec<usize>> {
    if z.rank() != 2 || z.shape()[1] < 2 {
        return Err(shape_err!("select_class expects [N, CL >= 2], got {:?}", z.shape()));
    }
    Ok(z.data().chunks(z.shape()[1]).map(Tensor::argmax).collect())
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    output: Tensor,
    mapped: Tensor,
    logits: Tensor,
    selected: Vec<usize>,
    scales: Tensor,
    states: Vec<NormState>,
    snapshot: Arc<ClassifierSnapshot>,
}

#[derive(Debug, Clone)]
pub struct ClassRegBlock {
    /// Pointwise convolution `D -> K` applied to the classifier weights.
    pub proj: Conv3d,
    affection_rate: f64,
    mode: NormMode,
    cache: Option<BlockCache>,
}

impl ClassRegBlock {
    pub fn new(features: usize, channels: usize, affection_rate: f64, mode: NormMode) -> Result<Self> {
        check_affection_rate(affection_rate)?;
        Ok(Self { proj: Conv3d::pointwise(features, channels)?, affection_rate, mode, cache: None })
    }

    pub fn init_kaiming(&mut self, rng: &mut SplitMix64) {
        self.proj.init_kaiming(rng);
    }

    pub fn affection_rate(&self) -> f64 {
        self.affection_rate
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.proj.out_channels()
    }

    pub fn features(&self) -> usize {
        self.proj.in_channels()
    }

    pub fn zero_grad(&mut self) {
        self.proj.zero_grad();
    }

    /// `W_i = conv(W_fc)`, shape `[CL, K]`.
    pub fn map_classifier_weights(&self, snap: &ClassifierSnapshot) -> Result<Tensor> {
        if snap.features() != self.features() {
            return Err(shape_err!(
                "classifier has {} features, block projection expects {}",
                snap.features(),
                self.features()
            ));
        }
        let out = conv3d_forward(&self.proj, &snap.as_volume())?;
        out.reshape(&[snap.classes(), self.channels()])
    }

    pub fn forward(&mut self, a: &Tensor, snap: &Arc<ClassifierSnapshot>) -> Result<Tensor> {
        if a.rank() != 5 || a.shape()[1] != self.channels() {
            return Err(shape_err!("class-reg block over {} channels got {:?}", self.channels(), a.shape()));
        }
        let n = a.shape()[0];
        let k = self.channels();
        let pooled = global_avg_pool_stfw(a)?;
        let mapped = self.map_classifier_weights(snap)?;
        let logits = class_logits(&mapped, &pooled)?;
        let selected = select_class(&logits)?;

        let mut scales = Tensor::zeros(&[n, k])?;
        let mut states = Vec::with_capacity(n);
        for (row, &c) in scales.data_mut().chunks_mut(k).zip(&selected) {
            let w = &mapped.data()[c * k..(c + 1) * k];
            states.push(normalize_row(w, self.affection_rate, self.mode, row));
        }

        let vol: usize = a.shape()[2..].iter().product();
        let mut output = a.clone();
        for (i, chunk) in output.data_mut().chunks_mut(vol).enumerate() {
            let s = scales.data()[i];
            chunk.iter_mut().for_each(|x| *x *= s);
        }
        self.cache = Some(BlockCache {
            input: a.clone(),
            output: output.clone(),
            mapped,
            logits,
            selected,
            scales,
            states,
            snapshot: Arc::clone(snap),
        });
        Ok(output)
    }

    /// Returns `d loss / d a` and accumulates the projection's gradients.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::State("class-reg backward before forward".into()))?;
        cache.input.same_shape(grad_out)?;
        let k = self.channels();
        let vol: usize = grad_out.shape()[2..].iter().product();
        let a = cache.input.data();

        let mut grad_a = grad_out.clone();
        let mut grad_scales = vec![0.0; cache.scales.len()];
        for (i, chunk) in grad_a.data_mut().chunks_mut(vol).enumerate() {
            let s = cache.scales.data()[i];
            let av = &a[i * vol..(i + 1) * vol];
            let mut acc = 0.0;
            for (g, &x) in chunk.iter_mut().zip(av) {
                acc += *g * x;
                *g *= s;
            }
            grad_scales[i] = acc;
        }

        let classes = cache.snapshot.classes();
        let mut grad_mapped = vec![0.0; classes * k];
        for (n, (&c, st)) in cache.selected.iter().zip(&cache.states).enumerate() {
            let w = &cache.mapped.data()[c * k..(c + 1) * k];
            normalize_row_backward(w, st, &grad_scales[n * k..(n + 1) * k], &mut grad_mapped[c * k..(c + 1) * k]);
        }
        let grad_mapped = Tensor::from_vec(&[classes, k, 1, 1, 1], grad_mapped)?;
        let volume = cache.snapshot.as_volume();
        // the input gradient here would belong to the snapshot; it is dropped
        conv3d_backward(&mut self.proj, &volume, &grad_mapped)?;
        Ok(grad_a)
    }

    /// Class chosen for each sample of the last forward pass.
    pub fn selected(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|c| c.selected.as_slice())
    }

    pub fn last_logits(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.logits)
    }

    /// Class-excited activations of the last forward pass.
    pub fn last_output(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.output)
    }

    /// Projected class weights `W_i` of the last forward pass.
    pub fn last_mapped(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.mapped)
    }

    pub fn last_scales(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.scales)
    }

    /// The snapshot consumed by the last forward pass.
    pub fn last_snapshot(&self) -> Option<&Arc<ClassifierSnapshot>> {
        self.cache.as_ref().map(|c| &c.snapshot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, DEFAULT_EPS};
    use proptest::prelude::*;

    fn vec1(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn straddle_hand_values() {
        let out = normalize_affection(&vec1(&[0.0, 1.0, 2.0]), 0.5, NormMode::Straddle).unwrap();
        assert_eq!(out.data(), &[0.5, 1.0, 1.5]);
    }

    #[test]
    fn paper_literal_hand_values() {
        let out = normalize_affection(&vec1(&[0.0, 1.0]), 0.5, NormMode::PaperLiteral).unwrap();
        assert_eq!(out.data(), &[0.0, 0.25]);
    }

    #[test]
    fn unit_rate_straddle_is_all_ones() {
        let out = normalize_affection(&vec1(&[-3.0, 0.2, 9.0, 1.0]), 1.0, NormMode::Straddle).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_row_is_identity_in_every_mode() {
        for mode in [NormMode::Straddle, NormMode::UnitCap, NormMode::PaperLiteral] {
            for a in [0.1, 0.5, 1.0] {
                let out = normalize_affection(&vec1(&[3.0, 3.0, 3.0]), a, mode).unwrap();
                assert_eq!(out.data(), &[1.0, 1.0, 1.0]);
            }
        }
    }

    #[test]
    fn affection_rate_is_validated() {
        for a in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(normalize_affection(&vec1(&[0.0, 1.0]), a, NormMode::Straddle), Err(Error::Config(_))));
            assert!(ClassRegBlock::new(2, 2, a, NormMode::Straddle).is_err());
        }
    }

    #[test]
    fn select_class_ordering_and_ties() {
        let z = Tensor::from_vec(&[2, 3], vec![0.1, 5.0, -2.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(select_class(&z).unwrap(), vec![1, 0]);
        assert_eq!(select_class(&z.map(|v| v + 10.0)).unwrap(), vec![1, 0]);
    }

    #[test]
    fn select_class_on_all_permutations() {
        let perms =
            [[1.0, 2.0, 3.0], [1.0, 3.0, 2.0], [2.0, 1.0, 3.0], [2.0, 3.0, 1.0], [3.0, 1.0, 2.0], [3.0, 2.0, 1.0]];
        for p in perms {
            let z = Tensor::from_vec(&[1, 3], p.to_vec()).unwrap();
            let mut best = 0;
            for i in 1..3 {
                if p[i] > p[best] {
                    best = i;
                }
            }
            assert_eq!(select_class(&z).unwrap(), vec![best]);
        }
    }

    fn snapshot(cl: usize, d: usize, rng: &mut SplitMix64) -> Arc<ClassifierSnapshot> {
        let w = Tensor::from_vec(&[cl, d], (0..cl * d).map(|_| rng.normal()).collect()).unwrap();
        Arc::new(ClassifierSnapshot::new(&w).unwrap())
    }

    #[test]
    fn mapped_weights_identity_zero_and_linear() {
        let mut rng = SplitMix64::new(1);
        let snap = snapshot(4, 3, &mut rng);
        let mut block = ClassRegBlock::new(3, 3, 0.5, NormMode::Straddle).unwrap();
        block.proj.weight = Tensor::eye(3).unwrap().reshape(&[3, 3, 1, 1, 1]).unwrap();
        assert!(block.map_classifier_weights(&snap).unwrap().bit_eq(snap.weights()));

        let zero = ClassRegBlock::new(3, 2, 0.5, NormMode::Straddle).unwrap();
        assert!(zero.map_classifier_weights(&snap).unwrap().data().iter().all(|&v| v == 0.0));

        let mut lin = ClassRegBlock::new(3, 2, 0.5, NormMode::Straddle).unwrap();
        lin.init_kaiming(&mut rng);
        let m = lin.map_classifier_weights(&snap).unwrap();
        let p = lin.proj.weight.clone().reshape(&[2, 3]).unwrap();
        let expected = snap.weights().matmul(&p.transpose().unwrap()).unwrap();
        assert!(m.max_abs_diff(&expected) < 1e-12);

        let wrong = ClassRegBlock::new(5, 2, 0.5, NormMode::Straddle).unwrap();
        assert!(wrong.map_classifier_weights(&snap).is_err());
    }

    #[test]
    fn logits_hand_case() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let p = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(class_logits(&w, &p).unwrap().data(), &[11.0, -1.0]);
        assert!(class_logits(&Tensor::eye(2).unwrap(), &p).unwrap().bit_eq(&p));
        let z = class_logits(&w, &Tensor::zeros(&[1, 2]).unwrap()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_traced_forward() {
        // K = 2, D = 2, CL = 2, identity projection so W_i = W_fc.
        let mut block = ClassRegBlock::new(2, 2, 0.5, NormMode::Straddle).unwrap();
        block.proj.weight = Tensor::eye(2).unwrap().reshape(&[2, 2, 1, 1, 1]).unwrap();
        let wfc = Tensor::from_vec(&[2, 2], vec![-1.0, 3.0, 0.0, 0.5]).unwrap();
        let snap = Arc::new(ClassifierSnapshot::new(&wfc).unwrap());
        // channel 0 = [2, 4] (mean 3), channel 1 = [1, 1] (mean 1)
        let a = Tensor::from_vec(&[1, 2, 2, 1, 1], vec![2.0, 4.0, 1.0, 1.0]).unwrap();
        // Z = [-3 + 3, 0 + 0.5] = [0, 0.5] -> class 1, row [0, 0.5] -> [0.5, 1.5]
        let out = block.forward(&a, &snap).unwrap();
        assert_eq!(block.selected().unwrap(), &[1]);
        assert_eq!(block.last_scales().unwrap().data(), &[0.5, 1.5]);
        assert_eq!(out.data(), &[1.0, 2.0, 1.5, 1.5]);
    }

    #[test]
    fn unit_rate_is_exact_identity_forward_and_backward() {
        let mut rng = SplitMix64::new(3);
        let snap = snapshot(3, 4, &mut rng);
        let mut block = ClassRegBlock::new(4, 2, 1.0, NormMode::Straddle).unwrap();
        block.init_kaiming(&mut rng);
        let a = Tensor::from_vec(&[2, 2, 2, 3, 2], (0..48).map(|_| rng.normal()).collect()).unwrap();
        let out = block.forward(&a, &snap).unwrap();
        assert!(out.bit_eq(&a));
        let g = Tensor::from_vec(a.shape(), (0..48).map(|_| rng.normal()).collect()).unwrap();
        let ga = block.backward(&g).unwrap();
        assert!(ga.bit_eq(&g));
        assert!(block.proj.weight_grad.data().iter().all(|&v| v == 0.0));
        assert!(block.proj.bias_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut block = ClassRegBlock::new(2, 2, 0.5, NormMode::Straddle).unwrap();
        assert!(matches!(block.backward(&Tensor::zeros(&[1, 2, 1, 1, 1]).unwrap()), Err(Error::State(_))));
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let mut rng = SplitMix64::new(12);
        let snap = snapshot(3, 2, &mut rng);
        let mut block = ClassRegBlock::new(2, 3, 0.6, NormMode::Straddle).unwrap();
        block.init_kaiming(&mut rng);
        let a = Tensor::from_vec(&[1, 3, 2, 2, 2], (0..24).map(|_| rng.normal()).collect()).unwrap();
        block.forward(&a, &snap).unwrap();
        let ga = block.backward(&Tensor::zeros(a.shape()).unwrap()).unwrap();
        assert!(ga.data().iter().all(|&v| v == 0.0));
        assert!(block.proj.weight_grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(77);
        for mode in [NormMode::Straddle, NormMode::UnitCap, NormMode::PaperLiteral] {
            let snap = snapshot(3, 4, &mut rng);
            let mut block = ClassRegBlock::new(4, 3, 0.6, mode).unwrap();
            block.init_kaiming(&mut rng);
            block.proj.bias = Tensor::from_vec(&[3], vec![0.3, -0.2, 0.1]).unwrap();
            let a = Tensor::from_vec(&[1, 3, 2, 2, 2], (0..24).map(|_| rng.normal() + 0.5).collect()).unwrap();
            let r = Tensor::from_vec(a.shape(), (0..24).map(|_| rng.normal()).collect()).unwrap();
            block.zero_grad();
            block.forward(&a, &snap).unwrap();
            let ga = block.backward(&r).unwrap();

            let probe = std::cell::RefCell::new(block.clone());
            let num_a = gradcheck::numerical_gradient(&a, DEFAULT_EPS, |ap| {
                gradcheck::dot(&probe.borrow_mut().forward(ap, &snap).unwrap(), &r)
            });
            assert!(gradcheck::max_relative_error(&ga, &num_a) < 1e-4, "{mode:?}");
            let num_w = gradcheck::numerical_gradient(&block.proj.weight, DEFAULT_EPS, |wp| {
                let mut b = probe.borrow_mut();
                b.proj.weight = wp.clone();
                gradcheck::dot(&b.forward(&a, &snap).unwrap(), &r)
            });
            assert!(gradcheck::max_relative_error(&block.proj.weight_grad, &num_w) < 1e-4, "{mode:?}");
        }
    }

    proptest! {
        #[test]
        fn bounds_and_rank_order(
            raw in prop::collection::vec(-10.0f64..10.0, 2..12),
            a in 0.01f64..=1.0,
        ) {
            for mode in [NormMode::Straddle, NormMode::UnitCap, NormMode::PaperLiteral] {
                let out = normalize_affection(&vec1(&raw), a, mode).unwrap();
                let (lo, hi) = mode.bounds(a);
                let range = raw.iter().cloned().fold(f64::MIN, f64::max) - raw.iter().cloned().fold(f64::MAX, f64::min);
                for (i, &v) in out.data().iter().enumerate() {
                    if range > DEGENERATE_RANGE {
                        prop_assert!(v >= lo && v <= hi);
                    } else {
                        prop_assert_eq!(v, 1.0);
                    }
                    for (j, &u) in out.data().iter().enumerate() {
                        if raw[i] < raw[j] {
                            prop_assert!(v <= u);
                        }
                    }
                }
            }
        }

        #[test]
        fn shape_preserved_and_shift_invariant(
            n in 1usize..3, k in 1usize..4, f in 1usize..3, h in 1usize..3, w in 1usize..3,
            seed in any::<u64>(), shift in -5.0f64..5.0,
        ) {
            let mut rng = SplitMix64::new(seed);
            let snap = snapshot(3, 2, &mut rng);
            let mut block = ClassRegBlock::new(2, k, 0.7, NormMode::Straddle).unwrap();
            block.init_kaiming(&mut rng);
            let len = n * k * f * h * w;
            let a = Tensor::from_vec(&[n, k, f, h, w], (0..len).map(|_| rng.normal()).collect()).unwrap();
            let out = block.forward(&a, &snap).unwrap();
            prop_assert_eq!(out.shape(), a.shape());
            let sel = block.selected().unwrap().to_vec();
            let z = block.last_logits().unwrap().clone();
            prop_assert_eq!(select_class(&z.map(|v| v + shift)).unwrap(), sel);
        }
    }
}
