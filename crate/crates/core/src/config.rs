//! JSON run configuration.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "dataset":  { "frames": 8, "height": 16, "width": 16, "channels": 1, "classes": 5,
//!                 "noise": 0.1, "blob_sigma": 1.2, "amplitude": 1.0, "seed": 0,
//!                 "train_size": 500, "val_size": 200 },
//!   "network":  { "layers": [ {"type": "conv3d", "out_channels": 8, "kernel": [3,3,3], "padding": [1,1,1]},
//!                             {"type": "relu"}, ... , {"type": "fc", "out_features": 5} ] },
//!   "classreg": [ {"placement": 1, "affection_rate": 0.75, "mode": "straddle"}, ... ],
//!   "train":    { "epochs": 30, "batch_size": 16, "lr": 0.05, "momentum": 0.9, "seed": 0,
//!                 "lr_decay": null, "record_timing": false },
//!   "output":   { "checkpoint": "runs/model.crn", "metrics": "runs/metrics.jsonl" }
//! }
//! ```
//!
//! Only `schema_version` is required; every other key falls back to the
//! values shown. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::network::{ClassRegSpec, LayerSpec, NetworkSpec};
use crate::synth::ClipSpec;
use crate::training::{TrainConfig, TrainParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub noise: f64,
    pub blob_sigma: f64,
    pub amplitude: f64,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let c = ClipSpec::default();
        Self {
            frames: c.frames,
            height: c.height,
            width: c.width,
            channels: c.channels,
            classes: c.classes,
            noise: c.noise,
            blob_sigma: c.blob_sigma,
            amplitude: c.amplitude,
            seed: c.seed,
            train_size: 500,
            val_size: 200,
        }
    }
}

impl DatasetSection {
    pub fn clip_spec(&self) -> ClipSpec {
        ClipSpec {
            frames: self.frames,
            height: self.height,
            width: self.width,
            channels: self.channels,
            classes: self.classes,
            noise: self.noise,
            blob_sigma: self.blob_sigma,
            amplitude: self.amplitude,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "NetworkSpec::default_layers")]
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { layers: NetworkSpec::default_layers() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { checkpoint: Some("runs/model.crn".into()), metrics: Some("runs/metrics.jsonl".into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default = "NetworkSpec::default_classreg")]
    pub classreg: Vec<ClassRegSpec>,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: DatasetSection::default(),
            network: NetworkSection::default(),
            classreg: NetworkSpec::default_classreg(),
            train: TrainParams::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; every failure is a config error.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_err!("{e}"))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_err!("unsupported schema_version {} (expected {SCHEMA_VERSION})", cfg.schema_version));
        }
        cfg.train_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            input: [self.dataset.channels, self.dataset.frames, self.dataset.height, self.dataset.width],
            classes: self.dataset.classes,
            layers: self.network.layers.clone(),
            classreg: self.classreg.clone(),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let tc = TrainConfig {
            network: self.network_spec(),
            dataset: self.dataset.clip_spec(),
            train_size: self.dataset.train_size,
            val_size: self.dataset.val_size,
            params: self.train.clone(),
            checkpoint: self.output.checkpoint.clone(),
            metrics: self.output.metrics.clone(),
        };
        tc.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => config_err!("{other}"),
        })?;
        Ok(tc)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
