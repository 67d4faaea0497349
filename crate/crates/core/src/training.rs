//! Training, evaluation and paired with/without comparisons.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::loss::{cross_entropy_loss, softmax};
use crate::network::{Network, NetworkSpec};
use crate::optim::SgdMomentum;
use crate::par;
use crate::persistence::{save_checkpoint, CheckpointMeta};
use crate::rng::{mix, SplitMix64};
use crate::synth::{make_split, ClipSet, ClipSpec};
use crate::tensor::Tensor;

/// Multiply the learning rate by `gamma` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub every: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub lr_decay: Option<StepDecay>,
    /// Record per-epoch wall-clock time in the metrics. Off by default so
    /// metrics files stay byte-identical across runs.
    pub record_timing: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, lr: 0.05, momentum: 0.9, seed: 0, lr_decay: None, record_timing: false }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err!("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if let Some(d) = self.lr_decay {
            if d.every == 0 || !(d.gamma > 0.0 && d.gamma.is_finite()) {
                return Err(config_err!("lr_decay needs every >= 1 and gamma > 0"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * d.gamma.powi(((epoch - 1) / d.every) as i32),
            None => self.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkSpec,
    pub dataset: ClipSpec,
    pub train_size: usize,
    pub val_size: usize,
    pub params: TrainParams,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.params.validate()?;
        self.network.validate()?;
        if self.network.input != self.dataset.geometry() {
            return Err(config_err!(
                "network input {:?} != clip geometry {:?}",
                self.network.input,
                self.dataset.geometry()
            ));
        }
        if self.network.classes != self.dataset.classes {
            return Err(config_err!("network has {} classes, dataset {}", self.network.classes, self.dataset.classes));
        }
        if self.train_size == 0 || self.val_size == 0 {
            return Err(config_err!("train_size and val_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Running accuracy over the epoch's mini-batches.
    pub train_top1: f64,
    pub val_top1: f64,
    /// Per block: fraction of validation clips whose block-selected class
    /// equals the network's final prediction.
    pub block_agreement: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub top1: f64,
    pub block_agreement: Vec<f64>,
}

/// Hooks around each optimizer step.
pub trait TrainObserver {
    /// Called after the snapshot refresh and before the forward pass.
    fn before_step(&mut self, _iteration: usize, _net: &Network) {}
    /// Called after the forward/backward pass and before the parameter update.
    fn after_backward(&mut self, _iteration: usize, _net: &Network) {}
    /// Called after the parameter update.
    fn after_step(&mut self, _iteration: usize, _net: &Network) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

pub struct TrainOutcome {
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

const EVAL_BATCH: usize = 64;

/// Forward-only pass over a clip set.
pub fn evaluate(net: &mut Network, set: &ClipSet) -> Result<EvalReport> {
    if set.geometry() != net.spec().input {
        return Err(config_err!("model input {:?} does not match clips {:?}", net.spec().input, set.geometry()));
    }
    net.refresh_snapshot();
    let blocks = net.blocks().len();
    let mut correct = 0usize;
    let mut agree = vec![0usize; blocks];
    let positions: Vec<usize> = (0..set.len()).collect();
    for chunk in positions.chunks(EVAL_BATCH) {
        let (x, labels) = set.batch(chunk)?;
        let logits = net.forward(&x)?;
        let cl = logits.shape()[1];
        let preds: Vec<usize> = logits.data().chunks(cl).map(Tensor::argmax).collect();
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        for (b, sel) in net.block_selections().iter().enumerate() {
            agree[b] += sel.iter().zip(&preds).filter(|(s, p)| s == p).count();
        }
    }
    let n = set.len() as f64;
    Ok(EvalReport {
        samples: set.len(),
        top1: correct as f64 / n,
        block_agreement: agree.iter().map(|&a| a as f64 / n).collect(),
    })
}

fn best_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.best.{}", ext.to_string_lossy()),
        None => format!("{stem}.best"),
    };
    path.with_file_name(name)
}

/// Trains on pre-generated splits.
pub fn train_on(
    config: &TrainConfig,
    train: &ClipSet,
    val: &ClipSet,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    let p = &config.params;
    let mut net = Network::new(&config.network, p.seed)?;
    let mut opt = SgdMomentum::new(p.lr, p.momentum);
    let mut metrics = Vec::with_capacity(p.epochs);
    let mut metrics_file = match &config.metrics {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            Some(fs::File::create(path)?)
        }
        None => None,
    };
    let mut best: Option<(f64, usize)> = None;
    let mut iteration = 0;
    for epoch in 1..=p.epochs {
        let started = Instant::now();
        opt.lr = p.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        SplitMix64::new(mix(p.seed, epoch as u64)).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(p.batch_size) {
            let (x, labels) = train.batch(chunk)?;
            net.refresh_snapshot();
            observer.before_step(iteration, &net);
            net.zero_grad();
            let logits = net.forward(&x)?;
            let probs = softmax(&logits)?;
            let (loss, grad) = cross_entropy_loss(&probs, &labels)?;
            net.backward(&grad)?;
            observer.after_backward(iteration, &net);
            loss_sum += loss * chunk.len() as f64;
            let cl = probs.shape()[1];
            correct += probs.data().chunks(cl).zip(&labels).filter(|(row, &l)| Tensor::argmax(row) == l).count();
            let mut params = net.parameters_mut();
            opt.step(params.iter_mut().map(|pr| (&mut *pr.value, &*pr.grad)))?;
            drop(params);
            observer.after_step(iteration, &net);
            iteration += 1;
        }
        let eval = evaluate(&mut net, val)?;
        let m = EpochMetrics {
            epoch,
            lr: opt.lr,
            train_loss: loss_sum / train.len() as f64,
            train_top1: correct as f64 / train.len() as f64,
            val_top1: eval.top1,
            block_agreement: eval.block_agreement,
            wall_seconds: p.record_timing.then(|| started.elapsed().as_secs_f64()),
        };
        if let Some(f) = metrics_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&m)?)?;
        }
        if let Some(path) = &config.checkpoint {
            if best.is_none_or(|(v, _)| m.val_top1 > v) {
                best = Some((m.val_top1, epoch));
                save_checkpoint(
                    &best_path(path),
                    &net,
                    &CheckpointMeta::new(&net, epoch, p.seed, Some(m.clone())).with_dataset(&config.dataset),
                )?;
            }
        } else if best.is_none_or(|(v, _)| m.val_top1 > v) {
            best = Some((m.val_top1, epoch));
        }
        metrics.push(m);
    }
    if let Some(path) = &config.checkpoint {
        save_checkpoint(
            path,
            &net,
            &CheckpointMeta::new(&net, p.epochs, p.seed, metrics.last().cloned()).with_dataset(&config.dataset),
        )?;
    }
    Ok(TrainOutcome { network: net, metrics, best_epoch: best.map_or(p.epochs, |(_, e)| e) })
}

/// Generates the data split and trains.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (tr, va) = make_split(&config.dataset, config.train_size, config.val_size)?;
    train_on(config, &tr, &va, &mut NoopObserver)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub seed: u64,
    pub baseline_top1: f64,
    pub classreg_top1: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub epochs: usize,
    pub rows: Vec<PairRow>,
    pub mean_baseline: f64,
    pub mean_classreg: f64,
    pub mean_delta: f64,
    /// Seeds on which the class-regularized arm beat the baseline outright.
    pub wins: usize,
}

impl ComparisonReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:>6} {:>10} {:>10} {:>9}\n", "seed", "baseline", "classreg", "delta");
        for r in &self.rows {
            s += &format!("{:>6} {:>10.4} {:>10.4} {:>+9.4}\n", r.seed, r.baseline_top1, r.classreg_top1, r.delta);
        }
        s += &format!(
            "{:>6} {:>10.4} {:>10.4} {:>+9.4}\n",
            "mean", self.mean_baseline, self.mean_classreg, self.mean_delta
        );
        s += &format!("wins: {}/{}\n", self.wins, self.rows.len());
        s
    }
}

/// Trains baseline (blocks stripped) and class-regularized arms for seeds
/// `seed, seed + 1, ...`. Both arms of a seed share host initialization and
/// batch order; the reported accuracy is the final-epoch validation top-1.
pub fn paired_comparison(config: &TrainConfig, seeds: usize) -> Result<ComparisonReport> {
    config.validate()?;
    if seeds == 0 {
        return Err(config_err!("need at least one seed"));
    }
    let (tr, va) = make_split(&config.dataset, config.train_size, config.val_size)?;
    let mut rows = Vec::with_capacity(seeds);
    for s in 0..seeds as u64 {
        let seed = config.params.seed + s;
        let arm = |with_blocks: bool| {
            let mut c = config.clone();
            c.params.seed = seed;
            c.checkpoint = None;
            c.metrics = None;
            if !with_blocks {
                c.network = c.network.without_classreg();
            }
            train_on(&c, &tr, &va, &mut NoopObserver)
        };
        let (base, reg) = par::join(|| arm(false), || arm(true));
        let (b, r) = (base?.metrics.last().unwrap().val_top1, reg?.metrics.last().unwrap().val_top1);
        rows.push(PairRow { seed, baseline_top1: b, classreg_top1: r, delta: r - b });
    }
    let n = rows.len() as f64;
    let mean_baseline = rows.iter().map(|r| r.baseline_top1).sum::<f64>() / n;
    let mean_classreg = rows.iter().map(|r| r.classreg_top1).sum::<f64>() / n;
    Ok(ComparisonReport {
        epochs: config.params.epochs,
        wins: rows.iter().filter(|r| r.classreg_top1 > r.baseline_top1).count(),
        mean_delta: mean_classreg - mean_baseline,
        mean_baseline,
        mean_classreg,
        rows,
    })
}
