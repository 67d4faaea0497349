//! Network description, shape propagation and the assembled model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classreg::{check_affection_rate, ClassRegBlock, ClassifierSnapshot, NormMode};
use crate::error::{config_err, Error, Result};
use crate::layers::{conv_out_extent, AvgPool3d, Conv3d, Fc, GlobalAvgPool, Layer, Relu};
use crate::rng::{self, SplitMix64};
use crate::tensor::Tensor;

fn unit3() -> [usize; 3] {
    [1, 1, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv3d {
        out_channels: usize,
        kernel: [usize; 3],
        #[serde(default = "unit3")]
        stride: [usize; 3],
        #[serde(default)]
        padding: [usize; 3],
    },
    Relu {},
    /// Non-overlapping average pooling, stride equal to the kernel.
    AvgPool3d {
        kernel: [usize; 3],
    },
    GlobalAvgPool {},
    Fc {
        out_features: usize,
    },
}

pub const DEFAULT_AFFECTION_RATE: f64 = 0.75;

fn default_rate() -> f64 {
    DEFAULT_AFFECTION_RATE
}

/// A class-regularization block inserted after `layers[placement]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRegSpec {
    pub placement: usize,
    #[serde(default = "default_rate")]
    pub affection_rate: f64,
    #[serde(default)]
    pub mode: NormMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `[C_in, F, H, W]`.
    pub input: [usize; 4],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub classreg: Vec<ClassRegSpec>,
}

impl NetworkSpec {
    /// Two conv stages with a block after each, global pooling, classifier.
    pub fn default_layers() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv3d { out_channels: 8, kernel: [3, 3, 3], stride: [1, 1, 1], padding: [1, 1, 1] },
            LayerSpec::Relu {},
            LayerSpec::AvgPool3d { kernel: [2, 2, 2] },
            LayerSpec::Conv3d { out_channels: 16, kernel: [3, 3, 3], stride: [1, 1, 1], padding: [1, 1, 1] },
            LayerSpec::Relu {},
            LayerSpec::GlobalAvgPool {},
            LayerSpec::Fc { out_features: 5 },
        ]
    }

    pub fn default_classreg() -> Vec<ClassRegSpec> {
        [1, 4]
            .into_iter()
            .map(|placement| ClassRegSpec {
                placement,
                affection_rate: DEFAULT_AFFECTION_RATE,
                mode: NormMode::Straddle,
            })
            .collect()
    }

    pub fn without_classreg(&self) -> Self {
        Self { classreg: Vec::new(), ..self.clone() }
    }

    /// Per-sample shapes: entry 0 is the input, entry `i + 1` the output of
    /// `layers[i]`. Fails with a config error if anything does not line up.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.classes < 2 {
            return Err(config_err!("need at least 2 classes, got {}", self.classes));
        }
        if self.input.contains(&0) {
            return Err(config_err!("input extents must be >= 1, got {:?}", self.input));
        }
        let mut shape = vec![1, self.input[0], self.input[1], self.input[2], self.input[3]];
        let mut shapes = vec![shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let at = |msg: String| config_err!("layer {i} ({layer:?}): {msg}");
            shape = match layer {
                LayerSpec::Conv3d { out_channels, kernel, stride, padding } => {
                    if shape.len() != 5 {
                        return Err(at("conv3d needs 5-d activations".into()));
                    }
                    if *out_channels == 0 || kernel.contains(&0) || stride.contains(&0) {
                        return Err(at("channels, kernel and stride must be >= 1".into()));
                    }
                    let mut out = vec![1, *out_channels, 0, 0, 0];
                    for a in 0..3 {
                        out[2 + a] = conv_out_extent(shape[2 + a], kernel[a], stride[a], padding[a])
                            .map_err(|e| at(e.to_string()))?;
                    }
                    out
                }
                LayerSpec::Relu {} => shape,
                LayerSpec::AvgPool3d { kernel } => {
                    AvgPool3d::new(*kernel).and_then(|p| p.output_shape(&shape)).map_err(|e| at(e.to_string()))?
                }
                LayerSpec::GlobalAvgPool {} => {
                    if shape.len() != 5 {
                        return Err(at("global pooling needs 5-d activations".into()));
                    }
                    vec![1, shape[1]]
                }
                LayerSpec::Fc { out_features } => {
                    if shape.len() != 2 {
                        return Err(at("fc needs pooled [N, D] features".into()));
                    }
                    if *out_features == 0 {
                        return Err(at("out_features must be >= 1".into()));
                    }
                    vec![1, *out_features]
                }
            };
            shapes.push(shape.clone());
        }
        match self.layers.last() {
            Some(LayerSpec::Fc { out_features }) if *out_features == self.classes => {}
            _ => return Err(config_err!("last layer must be fc with out_features = {}", self.classes)),
        }
        let mut seen = Vec::new();
        for cr in &self.classreg {
            check_affection_rate(cr.affection_rate)?;
            let p = cr.placement;
            if p >= self.layers.len() {
                return Err(config_err!("class-reg placement {p} beyond {} layers", self.layers.len()));
            }
            if shapes[p + 1].len() != 5 {
                return Err(config_err!("class-reg placement {p} must sit before global pooling"));
            }
            if !self.layers[..=p].iter().any(|l| matches!(l, LayerSpec::Conv3d { .. })) {
                return Err(config_err!("class-reg placement {p} must follow a conv3d layer"));
            }
            if seen.contains(&p) {
                return Err(config_err!("duplicate class-reg placement {p}"));
            }
            seen.push(p);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Input width of the final classifier.
    pub fn classifier_features(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(shapes[shapes.len() - 2][1])
    }

    /// FNV-1a of the canonical JSON encoding, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        format!("{:016x}", rng::hash_str(&json))
    }
}

/// Per-iteration gradient-carrying view of one parameter.
pub struct ParamRef<'a> {
    pub name: String,
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    /// Blocks ordered by placement.
    blocks: Vec<(usize, ClassRegBlock)>,
    snapshot: Arc<ClassifierSnapshot>,
}

fn param_rng(seed: u64, name: &str) -> SplitMix64 {
    SplitMix64::new(rng::mix(seed, rng::hash_str(name)))
}

impl Network {
    /// Builds and initializes a network. Every parameter tensor draws from a
    /// stream keyed by `(seed, name)`, so host weights do not depend on which
    /// blocks are present.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let in_shape = &shapes[i];
            let mut layer = match ls {
                LayerSpec::Conv3d { out_channels, kernel, stride, padding } => {
                    Layer::Conv3d(Conv3d::new(in_shape[1], *out_channels, *kernel, *stride, *padding)?)
                }
                LayerSpec::Relu {} => Layer::Relu(Relu::default()),
                LayerSpec::AvgPool3d { kernel } => Layer::AvgPool3d(AvgPool3d::new(*kernel)?),
                LayerSpec::GlobalAvgPool {} => Layer::GlobalAvgPool(GlobalAvgPool::default()),
                LayerSpec::Fc { out_features } => Layer::Fc(Fc::new(in_shape[1], *out_features)?),
            };
            match &mut layer {
                Layer::Conv3d(c) => c.init_kaiming(&mut param_rng(seed, &format!("layers.{i}.weight"))),
                Layer::Fc(f) => f.init_kaiming(&mut param_rng(seed, &format!("layers.{i}.weight"))),
                _ => {}
            }
            layers.push(layer);
        }
        let features = shapes[shapes.len() - 2][1];
        let mut placements = spec.classreg.clone();
        placements.sort_by_key(|c| c.placement);
        let mut blocks = Vec::with_capacity(placements.len());
        for cr in placements {
            let channels = shapes[cr.placement + 1][1];
            let mut block = ClassRegBlock::new(features, channels, cr.affection_rate, cr.mode)?;
            block.init_kaiming(&mut param_rng(seed, &format!("classreg.{}.proj.weight", cr.placement)));
            blocks.push((cr.placement, block));
        }
        let mut net = Self {
            spec: spec.clone(),
            layers,
            blocks,
            snapshot: Arc::new(ClassifierSnapshot::new(&Tensor::zeros(&[2, 1])?)?),
        };
        net.refresh_snapshot();
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn classifier(&self) -> &Fc {
        match self.layers.last() {
            Some(Layer::Fc(fc)) => fc,
            _ => unreachable!("validated spec ends with fc"),
        }
    }

    /// `(placement, block)` pairs in placement order.
    pub fn blocks(&self) -> &[(usize, ClassRegBlock)] {
        &self.blocks
    }

    pub fn snapshot(&self) -> &Arc<ClassifierSnapshot> {
        &self.snapshot
    }

    /// Copies the live classifier weights into a fresh snapshot.
    pub fn refresh_snapshot(&mut self) {
        let w = self.classifier().weight.clone();
        self.snapshot = Arc::new(ClassifierSnapshot::new(&w).expect("validated classifier"));
    }

    /// Logits `[N, CL]` for a batch `[N, C, F, H, W]`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let expect = &self.spec.input;
        if x.rank() != 5 || x.shape()[1..] != expect[..] {
            return Err(Error::Shape(format!("network expects [N, {expect:?}], got {:?}", x.shape())));
        }
        let mut h = x.clone();
        let mut next_block = 0;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h)?;
            if let Some((p, block)) = self.blocks.get_mut(next_block) {
                if *p == i {
                    h = block.forward(&h, &self.snapshot)?;
                    next_block += 1;
                }
            }
        }
        Ok(h)
    }

    /// Backpropagates the logit gradient, accumulating into parameter grads.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        let mut next_block = self.blocks.len();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            if next_block > 0 && self.blocks[next_block - 1].0 == i {
                next_block -= 1;
                g = self.blocks[next_block].1.backward(&g)?;
            }
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
        self.blocks.iter_mut().for_each(|(_, b)| b.zero_grad());
    }

    /// Host parameters in layer order, then block projections in placement order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.params() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        for (p, block) in &self.blocks {
            out.push((format!("classreg.{p}.proj.weight"), &block.proj.weight));
            out.push((format!("classreg.{p}.proj.bias"), &block.proj.bias));
        }
        out
    }

    /// Same order as [`Network::named_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, value, grad) in layer.params_mut() {
                out.push(ParamRef { name: format!("layers.{i}.{name}"), value, grad });
            }
        }
        for (p, block) in self.blocks.iter_mut() {
            let proj = &mut block.proj;
            out.push(ParamRef {
                name: format!("classreg.{p}.proj.weight"),
                value: &mut proj.weight,
                grad: &mut proj.weight_grad,
            });
            out.push(ParamRef {
                name: format!("classreg.{p}.proj.bias"),
                value: &mut proj.bias,
                grad: &mut proj.bias_grad,
            });
        }
        out
    }

    /// Replaces every parameter; names and shapes must match exactly.
    pub fn load_parameters(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != entries.len() {
            return Err(config_err!("checkpoint has {} tensors, model expects {}", entries.len(), params.len()));
        }
        for p in params.iter_mut() {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| config_err!("checkpoint is missing tensor {}", p.name))?;
            if t.shape() != p.value.shape() {
                return Err(config_err!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                ));
            }
            *p.value = t.clone();
        }
        drop(params);
        self.refresh_snapshot();
        Ok(())
    }

    /// Classes selected by each block during the last forward pass.
    pub fn block_selections(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|(_, b)| b.selected().map(<[usize]>::to_vec).unwrap_or_default()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> NetworkSpec {
        NetworkSpec {
            input: [1, 4, 6, 6],
            classes: 5,
            layers: NetworkSpec::default_layers(),
            classreg: NetworkSpec::default_classreg(),
        }
    }

    #[test]
    fn shape_propagation() {
        let s = spec().shapes().unwrap();
        assert_eq!(s[1], vec![1, 8, 4, 6, 6]);
        assert_eq!(s[3], vec![1, 8, 2, 3, 3]);
        assert_eq!(s.last().unwrap(), &vec![1, 5]);
        assert_eq!(spec().classifier_features().unwrap(), 16);
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec();
        s.classreg.push(ClassRegSpec { placement: 5, affection_rate: 0.5, mode: NormMode::Straddle });
        assert!(matches!(s.validate(), Err(Error::Config(_))));

        let mut s = spec();
        s.classreg[0].placement = 4;
        assert!(s.validate().is_err(), "duplicate placement");

        let mut s = spec();
        s.layers.insert(0, LayerSpec::Relu {});
        s.classreg = vec![ClassRegSpec { placement: 0, affection_rate: 0.5, mode: NormMode::Straddle }];
        assert!(s.validate().is_err(), "block before any conv");

        let mut s = spec();
        s.classes = 4;
        assert!(s.validate().is_err());

        let mut s = spec();
        s.input = [1, 1, 1, 1];
        s.layers[0] = LayerSpec::Conv3d { out_channels: 8, kernel: [3, 3, 3], stride: [1, 1, 1], padding: [0, 0, 0] };
        assert!(s.validate().is_err());
    }

    #[test]
    fn host_init_independent_of_blocks() {
        let a = Network::new(&spec(), 9).unwrap();
        let b = Network::new(&spec().without_classreg(), 9).unwrap();
        let pa = a.named_parameters();
        let pb = b.named_parameters();
        assert_eq!(pa.len(), pb.len() + 4);
        for ((na, ta), (nb, tb)) in pa.iter().zip(&pb) {
            assert_eq!(na, nb);
            assert!(ta.bit_eq(tb));
        }
    }

    #[test]
    fn forward_backward_shapes() {
        let mut net = Network::new(&spec(), 1).unwrap();
        let x = Tensor::full(&[3, 1, 4, 6, 6], 0.5).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 5]);
        assert_eq!(net.block_selections().len(), 2);
        let gx = net.backward(&Tensor::ones(&[3, 5]).unwrap()).unwrap();
        assert_eq!(gx.shape(), x.shape());
        assert!(net.forward(&Tensor::zeros(&[1, 1, 4, 6, 5]).unwrap()).is_err());
    }

    #[test]
    fn spec_json_roundtrip_and_unknown_keys() {
        let s = spec();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<NetworkSpec>(&json).unwrap(), s);
        let bad = r#"{"input":[1,4,6,6],"classes":5,"layers":[{"type":"relu","extra":1}]}"#;
        assert!(serde_json::from_str::<NetworkSpec>(bad).is_err());
    }
}
