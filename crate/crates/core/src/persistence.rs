//! `CRN1` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CRN1"                 4 bytes magic
//! u32 version            = 1
//! u32 entry count
//! per entry:
//!   u16 name length, UTF-8 name
//!   u8 rank, rank x u32 extents
//!   product(extents) x f64 values
//! u32 metadata length, UTF-8 JSON metadata
//! ```
//!
//! Nothing may follow the metadata.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, NetworkSpec};
use crate::synth::ClipSpec;
use crate::tensor::Tensor;
use crate::training::EpochMetrics;

pub const MAGIC: &[u8; 4] = b"CRN1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkSpec,
    pub spec_hash: String,
    pub epoch: usize,
    pub seed: u64,
    pub metrics: Option<EpochMetrics>,
    /// Clip generator the model was trained on, when known.
    #[serde(default)]
    pub dataset: Option<ClipSpec>,
}

impl CheckpointMeta {
    pub fn new(net: &Network, epoch: usize, seed: u64, metrics: Option<EpochMetrics>) -> Self {
        Self { network: net.spec().clone(), spec_hash: net.spec().fingerprint(), epoch, seed, metrics, dataset: None }
    }

    pub fn with_dataset(self, dataset: &ClipSpec) -> Self {
        Self { dataset: Some(dataset.clone()), ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_network(net: &Network, meta: CheckpointMeta) -> Self {
        let entries = net.named_parameters().into_iter().map(|(n, t)| (n, t.clone())).collect();
        Self { entries, meta }
    }

    /// Rebuilds the network described by the metadata and loads the weights.
    pub fn to_network(&self) -> Result<Network> {
        if self.meta.network.fingerprint() != self.meta.spec_hash {
            return Err(Error::Format("network spec does not match its recorded hash".into()));
        }
        let mut net = Network::new(&self.meta.network, self.meta.seed)?;
        net.load_parameters(&self.entries)?;
        Ok(net)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(self.entries.len()).map_err(|_| fmt_err("too many entries"))?.to_le_bytes(),
        );
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| fmt_err("entry name too long"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(t.rank()).map_err(|_| fmt_err("rank too large"))?);
            for &e in t.shape() {
                out.extend_from_slice(&u32::try_from(e).map_err(|_| fmt_err("extent too large"))?.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&u32::try_from(meta.len()).map_err(|_| fmt_err("metadata too large"))?.to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut names = HashSet::new();
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| fmt_err("entry name is not UTF-8"))?.to_string();
            if !names.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate entry {name}")));
            }
            let rank = r.u8()? as usize;
            if rank == 0 {
                return Err(fmt_err("rank-0 entry"));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut elems: usize = 1;
            for _ in 0..rank {
                let e = r.u32()? as usize;
                if e == 0 {
                    return Err(fmt_err("zero extent"));
                }
                elems = elems.checked_mul(e).ok_or_else(|| fmt_err("extent product overflows"))?;
                shape.push(e);
            }
            let raw = r.take(elems.checked_mul(8).ok_or_else(|| fmt_err("entry too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            entries.push((name, Tensor::from_vec(&shape, data).map_err(|e| Error::Format(e.to_string()))?));
        }
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(fmt_err("trailing bytes after metadata"));
        }
        Ok(Self { entries, meta })
    }
}

fn fmt_err(msg: &str) -> Error {
    Error::Format(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| fmt_err("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Writes to a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, net: &Network, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &Checkpoint::from_network(net, meta.clone()).encode()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}
