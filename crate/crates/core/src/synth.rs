//! Synthetic moving-blob clips.
//!
//! Each clip is a Gaussian blob translating at one pixel per frame over
//! uniform noise; the class is the motion direction. Clip `index` has label
//! `index % classes` and draws from its own stream
//! `SplitMix64::new(mix(seed, index))`: first the start column, then the
//! start row (each via `below`), then one uniform per pixel in `[C, F, H, W]`
//! order, mapped to `noise * (2u - 1)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::par;
use crate::rng::{mix, SplitMix64};
use crate::tensor::Tensor;

/// Motion per class as `(dx, dy)` in pixels per frame.
pub const MOTIONS: [(i64, i64, &str); 9] = [
    (0, -1, "up"),
    (0, 1, "down"),
    (-1, 0, "left"),
    (1, 0, "right"),
    (0, 0, "static"),
    (-1, -1, "up_left"),
    (1, -1, "up_right"),
    (-1, 1, "down_left"),
    (1, 1, "down_right"),
];

pub const MAX_CLASSES: usize = MOTIONS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    /// Half-width of the uniform noise.
    pub noise: f64,
    /// Standard deviation of the blob in pixels; its centre keeps
    /// `ceil(2 * blob_sigma)` pixels from every border.
    pub blob_sigma: f64,
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 16,
            width: 16,
            channels: 1,
            classes: 5,
            noise: 0.1,
            blob_sigma: 1.2,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

/// Inclusive range of start positions keeping the whole trajectory inside.
fn start_range(extent: usize, margin: usize, velocity: i64, frames: usize) -> Option<(usize, usize)> {
    let travel = frames - 1;
    let lo = margin + if velocity < 0 { travel } else { 0 };
    let hi = (extent - 1).checked_sub(margin + if velocity > 0 { travel } else { 0 })?;
    (lo <= hi).then_some((lo, hi))
}

impl ClipSpec {
    pub fn geometry(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    pub fn margin(&self) -> usize {
        (2.0 * self.blob_sigma).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(config_err!("clip extents must be >= 1"));
        }
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(config_err!("classes must be in 2..={MAX_CLASSES}, got {}", self.classes));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(config_err!("noise must be finite and >= 0"));
        }
        if !(self.blob_sigma > 0.0 && self.blob_sigma.is_finite()) {
            return Err(config_err!("blob_sigma must be finite and > 0"));
        }
        for &(dx, dy, name) in &MOTIONS[..self.classes] {
            if start_range(self.width, self.margin(), dx, self.frames).is_none()
                || start_range(self.height, self.margin(), dy, self.frames).is_none()
            {
                return Err(config_err!(
                    "a {}x{} frame cannot hold {} frames of '{name}' motion",
                    self.height,
                    self.width,
                    self.frames
                ));
            }
        }
        Ok(())
    }
}

/// One clip `[C, F, H, W]` and its label.
pub fn generate_clip(spec: &ClipSpec, index: usize) -> Result<(Tensor, usize)> {
    spec.validate()?;
    let label = index % spec.classes;
    let (dx, dy, _) = MOTIONS[label];
    let mut rng = SplitMix64::new(mix(spec.seed, index as u64));
    let margin = spec.margin();
    let (xlo, xhi) = start_range(spec.width, margin, dx, spec.frames).expect("validated");
    let (ylo, yhi) = start_range(spec.height, margin, dy, spec.frames).expect("validated");
    let cx = (xlo + rng.below((xhi - xlo + 1) as u64) as usize) as i64;
    let cy = (ylo + rng.below((yhi - ylo + 1) as u64) as usize) as i64;
    let inv = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
    let (f_, h_, w_) = (spec.frames, spec.height, spec.width);
    let mut data = Vec::with_capacity(spec.channels * f_ * h_ * w_);
    for _ in 0..spec.channels {
        for t in 0..f_ as i64 {
            let (px, py) = (cx + dx * t, cy + dy * t);
            for y in 0..h_ as i64 {
                for x in 0..w_ as i64 {
                    let d2 = ((x - px) * (x - px) + (y - py) * (y - py)) as f64;
                    let blob = spec.amplitude * (-d2 * inv).exp();
                    data.push(blob + spec.noise * (2.0 * rng.uniform() - 1.0));
                }
            }
        }
    }
    Ok((Tensor::from_vec(&spec.geometry(), data)?, label))
}

/// A materialized set of clips.
#[derive(Debug, Clone)]
pub struct ClipSet {
    pub indices: Vec<usize>,
    pub clips: Vec<Tensor>,
    pub labels: Vec<usize>,
    geometry: [usize; 4],
}

impl ClipSet {
    pub fn generate(spec: &ClipSpec, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        spec.validate()?;
        let indices: Vec<usize> = indices.into_iter().collect();
        let generated = par::map_indexed(indices.len(), |i| generate_clip(spec, indices[i]));
        let mut clips = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for g in generated {
            let (c, l) = g?;
            clips.push(c);
            labels.push(l);
        }
        Ok(Self { indices, clips, labels, geometry: spec.geometry() })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn geometry(&self) -> [usize; 4] {
        self.geometry
    }

    /// Stacks the selected positions into `[B, C, F, H, W]`.
    pub fn batch(&self, positions: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let g = self.geometry;
        let mut data = Vec::with_capacity(positions.len() * g.iter().product::<usize>());
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            data.extend_from_slice(self.clips[p].data());
            labels.push(self.labels[p]);
        }
        Ok((Tensor::from_vec(&[positions.len(), g[0], g[1], g[2], g[3]], data)?, labels))
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        self.labels.iter().for_each(|&l| h[l] += 1);
        h
    }
}

/// Train clips are indices `0..n_train`, validation `n_train..n_train + n_val`.
pub fn make_split(spec: &ClipSpec, n_train: usize, n_val: usize) -> Result<(ClipSet, ClipSet)> {
    if n_train == 0 || n_val == 0 {
        return Err(config_err!("split sizes must be >= 1, got {n_train}/{n_val}"));
    }
    Ok((ClipSet::generate(spec, 0..n_train)?, ClipSet::generate(spec, n_train..n_train + n_val)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub index: usize,
    pub label: usize,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data_file: String,
}

/// Writes `<prefix>_<index>.f64` (raw little-endian) and a JSON sidecar
/// `<prefix>_<index>.json`. Returns the data file path.
pub fn dump_clip(dir: &Path, prefix: &str, spec: &ClipSpec, index: usize) -> Result<PathBuf> {
    let (clip, label) = generate_clip(spec, index)?;
    fs::create_dir_all(dir)?;
    let data_name = format!("{prefix}_{index}.f64");
    let bytes: Vec<u8> = clip.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let data_path = dir.join(&data_name);
    fs::write(&data_path, bytes)?;
    let side = ClipSidecar { index, label, shape: clip.shape().to_vec(), dtype: "f64le".into(), data_file: data_name };
    fs::write(dir.join(format!("{prefix}_{index}.json")), serde_json::to_string_pretty(&side)?)?;
    Ok(data_path)
}
