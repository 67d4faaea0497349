//! Per-block class-specific saliency volumes and PGM export.
//!
//! A block's class-excited activations are weighted channel-wise by the
//! normalized weight row of the requested class, summed over channels,
//! clamped at zero and scaled so the peak is 1.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classreg::{normalize_affection, ClassRegBlock};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// Block ordinal in placement order.
    pub block: usize,
    pub class: usize,
    /// `[F, H, W]`, non-negative, peak 1 unless identically zero.
    pub volume: Tensor,
    /// `[C, F, H, W]` of the clip that produced it.
    pub source_geometry: [usize; 4],
}

/// `relu(sum_k weights[k] * act[k, ...])`, max-normalized. `act` is `[K, F, H, W]`.
pub fn weighted_channel_saliency(act: &Tensor, weights: &[f64]) -> Result<Tensor> {
    if act.rank() != 4 || act.shape()[0] != weights.len() {
        return Err(shape_err!("saliency expects [K, F, H, W] with K = {}, got {:?}", weights.len(), act.shape()));
    }
    let vol: usize = act.shape()[1..].iter().product();
    let mut out = vec![0.0; vol];
    for (chunk, &w) in act.data().chunks(vol).zip(weights) {
        out.iter_mut().zip(chunk).for_each(|(o, &a)| *o += w * a);
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    let peak = out.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    Tensor::from_vec(&act.shape()[1..], out)
}

/// Saliency of one sample of the block's last forward pass for class `class`.
pub fn compute_block_saliency(
    block: &ClassRegBlock,
    block_id: usize,
    sample: usize,
    class: usize,
    source_geometry: [usize; 4],
) -> Result<SaliencyMap> {
    let (out, mapped) = match (block.last_output(), block.last_mapped()) {
        (Some(o), Some(m)) => (o, m),
        _ => return Err(Error::State("saliency requested before a forward pass".into())),
    };
    let classes = mapped.shape()[0];
    if class >= classes {
        return Err(Error::Input(format!("class {class} out of range for {classes} classes")));
    }
    let n = out.shape()[0];
    if sample >= n {
        return Err(Error::Input(format!("sample {sample} out of range for batch of {n}")));
    }
    let k = block.channels();
    let row = Tensor::from_vec(&[k], mapped.data()[class * k..(class + 1) * k].to_vec())?;
    let weights = normalize_affection(&row, block.affection_rate(), block.mode())?;
    let per = out.len() / n;
    let act = Tensor::from_vec(&out.shape()[1..], out.data()[sample * per..(sample + 1) * per].to_vec())?;
    Ok(SaliencyMap {
        block: block_id,
        class,
        volume: weighted_channel_saliency(&act, weights.data())?,
        source_geometry,
    })
}

/// Nearest-neighbour upsampling of `[F, H, W]`: target index `t` reads
/// source index `floor(t * src / dst)`.
pub fn upsample_nearest(volume: &Tensor, target: [usize; 3]) -> Result<Tensor> {
    let s = volume.shape();
    if s.len() != 3 || (0..3).any(|a| target[a] < s[a]) {
        return Err(shape_err!("cannot upsample {s:?} to smaller {target:?}"));
    }
    let mut out = Vec::with_capacity(target.iter().product());
    for f in 0..target[0] {
        let sf = f * s[0] / target[0];
        for h in 0..target[1] {
            let sh = h * s[1] / target[1];
            for w in 0..target[2] {
                let sw = w * s[2] / target[2];
                out.push(volume.data()[(sf * s[1] + sh) * s[2] + sw]);
            }
        }
    }
    Tensor::from_vec(&target, out)
}

/// `floor(v * 255 + 0.5)` clamped to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary P5 file with maxval 255, returning `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field {s}")));
    if fields[0] != "P5" || parse(&fields[3])? != 255 {
        return Err(Error::Format("expected P5 with maxval 255".into()));
    }
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body =
        bytes.get(pos..).filter(|b| b.len() == w * h).ok_or_else(|| Error::Format("PGM body size mismatch".into()))?;
    Ok((w, h, body.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedFrame {
    pub file: String,
    pub block: usize,
    pub class: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaliencyIndex {
    pub frames: Vec<ExportedFrame>,
}

/// Writes one PGM per target frame, `<prefix>_b<block>_c<class>_f<frame>.pgm`.
pub fn export_frames(
    map: &SaliencyMap,
    upsample_to: [usize; 3],
    dir: &Path,
    prefix: &str,
) -> Result<Vec<ExportedFrame>> {
    let up = upsample_nearest(&map.volume, upsample_to)?;
    fs::create_dir_all(dir)?;
    let [frames, h, w] = upsample_to;
    let mut written = Vec::with_capacity(frames);
    for (f, plane) in up.data().chunks(h * w).enumerate() {
        let pixels: Vec<u8> = plane.iter().map(|&v| quantize(v)).collect();
        let file = format!("{prefix}_b{}_c{}_f{f}.pgm", map.block, map.class);
        fs::write(dir.join(&file), encode_pgm(w, h, &pixels))?;
        written.push(ExportedFrame { file, block: map.block, class: map.class, frame: f });
    }
    Ok(written)
}

pub fn write_index(dir: &Path, index: &SaliencyIndex) -> Result<()> {
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(index)?)?;
    Ok(())
}
