//! Analytic multiply-accumulate counts and measured forward latency.
//!
//! Counting conventions (MACs, FLOPs = 2 x MACs):
//!
//! * conv3d: `N * K_out * F' * H' * W' * K_in * kf * kh * kw`
//! * fc: `N * out * in`
//! * avg_pool3d, global_avg_pool: one accumulate per input element
//! * relu: 0
//! * class-reg block over `[N, K, F, H, W]` with `CL` classes and classifier
//!   width `D`: pool `N*K*F*H*W` + projection `CL*D*K` + logits `N*CL*K` +
//!   normalization `3*K` + excitation `N*K*F*H*W`

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::network::{LayerSpec, Network, NetworkSpec};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub index: usize,
    pub kind: String,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCost {
    pub placement: usize,
    pub pool: u64,
    pub proj: u64,
    pub logits: u64,
    pub normalize: u64,
    pub excite: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyComparison {
    pub baseline: LatencyStats,
    pub classreg: LatencyStats,
    pub added_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub batch: usize,
    pub layers: Vec<LayerCost>,
    pub blocks: Vec<BlockCost>,
    pub total_macs_without: u64,
    pub total_macs_with: u64,
    pub classreg_macs: u64,
    pub flops_without: u64,
    pub flops_with: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyComparison>,
    pub host: String,
}

fn prod(v: &[usize]) -> u64 {
    v.iter().map(|&x| x as u64).product()
}

pub fn conv3d_macs(batch: usize, in_channels: usize, out_shape: &[usize], kernel: [usize; 3]) -> u64 {
    batch as u64 * out_shape[1] as u64 * prod(&out_shape[2..]) * in_channels as u64 * prod(&kernel)
}

pub fn classreg_cost(placement: usize, batch: usize, act: &[usize], classes: usize, features: usize) -> BlockCost {
    let k = act[1] as u64;
    let elems = batch as u64 * k * prod(&act[2..]);
    let (cl, d, n) = (classes as u64, features as u64, batch as u64);
    let c = BlockCost {
        placement,
        pool: elems,
        proj: cl * d * k,
        logits: n * cl * k,
        normalize: 3 * k,
        excite: elems,
        macs: 0,
    };
    BlockCost { macs: c.pool + c.proj + c.logits + c.normalize + c.excite, ..c }
}

pub fn host_description() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}-{} ({threads} hw threads, rayon={})", std::env::consts::OS, std::env::consts::ARCH, par::is_parallel())
}

/// Analytic costs for a batch of `batch` clips.
pub fn count_flops(spec: &NetworkSpec, batch: usize) -> Result<CostReport> {
    if batch == 0 {
        return Err(config_err!("batch must be >= 1"));
    }
    let shapes = spec.shapes()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, l) in spec.layers.iter().enumerate() {
        let (inp, out) = (&shapes[i], &shapes[i + 1]);
        let macs = match l {
            LayerSpec::Conv3d { kernel, .. } => conv3d_macs(batch, inp[1], out, *kernel),
            LayerSpec::Fc { out_features } => (batch * out_features * inp[1]) as u64,
            LayerSpec::AvgPool3d { .. } | LayerSpec::GlobalAvgPool {} => batch as u64 * prod(&inp[1..]),
            LayerSpec::Relu {} => 0,
        };
        let kind = serde_json::to_value(l)?["type"].as_str().unwrap_or("?").to_string();
        layers.push(LayerCost { index: i, kind, macs });
    }
    let features = shapes[shapes.len() - 2][1];
    let mut placements: Vec<usize> = spec.classreg.iter().map(|c| c.placement).collect();
    placements.sort_unstable();
    let blocks: Vec<BlockCost> =
        placements.into_iter().map(|p| classreg_cost(p, batch, &shapes[p + 1], spec.classes, features)).collect();
    let host: u64 = layers.iter().map(|l| l.macs).sum();
    let extra: u64 = blocks.iter().map(|b| b.macs).sum();
    Ok(CostReport {
        batch,
        layers,
        blocks,
        total_macs_without: host,
        total_macs_with: host + extra,
        classreg_macs: extra,
        flops_without: 2 * host,
        flops_with: 2 * (host + extra),
        latency: None,
        host: host_description(),
    })
}

/// Median and interquartile range, linear interpolation between order statistics.
pub fn summarize(mut ms: Vec<f64>) -> LatencyStats {
    ms.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (ms.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        ms[lo] + (ms[hi] - ms[lo]) * (pos - lo as f64)
    };
    let (q1, med, q3) = (q(0.25), q(0.5), q(0.75));
    LatencyStats { samples: ms.len(), median_ms: med, q1_ms: q1, q3_ms: q3, iqr_ms: q3 - q1 }
}

pub const WARMUP_RUNS: usize = 3;
pub const MIN_SAMPLES: usize = 10;

fn time_ms(f: &mut dyn FnMut()) -> f64 {
    let t = Instant::now();
    f();
    t.elapsed().as_secs_f64() * 1e3
}

fn timed_forward(net: &mut Network, clip: &Tensor) -> Result<f64> {
    let t = Instant::now();
    std::hint::black_box(net.forward(clip)?);
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Wall-clock latency of single-clip forward passes of `net`.
pub fn bench_latency(net: &mut Network, clip: &Tensor, samples: usize) -> Result<LatencyStats> {
    if samples < MIN_SAMPLES {
        return Err(config_err!("need at least {MIN_SAMPLES} samples, got {samples}"));
    }
    par::single_threaded(|| {
        for _ in 0..WARMUP_RUNS {
            net.forward(clip)?;
        }
        let ms = (0..samples).map(|_| timed_forward(net, clip)).collect::<Result<Vec<_>>>()?;
        Ok(summarize(ms))
    })
}

/// Times an empty pipeline: the harness floor.
pub fn bench_overhead_floor(samples: usize) -> LatencyStats {
    let ms = (0..samples.max(1)).map(|_| time_ms(&mut || std::hint::black_box(()))).collect();
    summarize(ms)
}

/// Baseline and class-regularized variants with identical host weights,
/// measured alternately so drift affects both arms alike.
pub fn compare_latency(spec: &NetworkSpec, seed: u64, clip: &Tensor, samples: usize) -> Result<LatencyComparison> {
    if samples < MIN_SAMPLES {
        return Err(config_err!("need at least {MIN_SAMPLES} samples, got {samples}"));
    }
    let mut base = Network::new(&spec.without_classreg(), seed)?;
    let mut reg = Network::new(spec, seed)?;
    par::single_threaded(|| {
        for _ in 0..WARMUP_RUNS {
            base.forward(clip)?;
            reg.forward(clip)?;
        }
        let (mut bms, mut rms) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
        for i in 0..samples {
            if i % 2 == 0 {
                bms.push(timed_forward(&mut base, clip)?);
                rms.push(timed_forward(&mut reg, clip)?);
            } else {
                rms.push(timed_forward(&mut reg, clip)?);
                bms.push(timed_forward(&mut base, clip)?);
            }
        }
        let (baseline, classreg) = (summarize(bms), summarize(rms));
        Ok(LatencyComparison { added_ms: classreg.median_ms - baseline.median_ms, baseline, classreg })
    })
}
