//! Binary checkpoint layout, all integers little endian:
//!
//! ```text
//! "SIRE" | u32 version | str config | u32 best_epoch
//! u32 count, then per parameter:  str name | u8 decay | tensor
//! u32 count, then per BN layer:   str name | f32 momentum | u32 c | f32[c] mean | f32[c] var
//! u32 count, then per velocity:   str name | tensor
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 and `tensor` is a u32
//! rank, u32 extents and f32 data.

use std::collections::BTreeMap;
use std::path::Path;

use sire_tensor::{RunningStats, Tensor};

use crate::netgraph::{Param, ParamStore};
use crate::training::SgdState;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SIRE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved run configuration, as written to `config.resolved`.
    pub config: String,
    pub best_epoch: usize,
    pub params: ParamStore,
    pub velocity: SgdState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor(&mut self, t: &Tensor<f32>) {
        self.u32(t.rank());
        for &d in t.shape() {
            self.u32(d);
        }
        self.f32s(t.data());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated at byte {}: need {n} more bytes, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n} at byte {}", self.pos)))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint(format!("invalid UTF-8 at byte {at}")))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.u32()?;
        if rank > 4 {
            return Err(Error::Checkpoint(format!("tensor rank {rank} at byte {}", self.pos)));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let data = self.f32s(shape.iter().product())?;
        Ok(Tensor::from_vec(shape, data)?)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION as usize);
        w.str(&self.config);
        w.u32(self.best_epoch);
        w.u32(self.params.params.len());
        for (name, p) in &self.params.params {
            w.str(name);
            w.0.push(u8::from(p.decay));
            w.tensor(&p.value);
        }
        w.u32(self.params.stats.len());
        for (name, s) in &self.params.stats {
            w.str(name);
            w.f32s(&[s.momentum]);
            w.u32(s.channels());
            w.f32s(&s.mean);
            w.f32s(&s.var);
        }
        w.u32(self.velocity.velocity.len());
        for (name, v) in &self.velocity.velocity {
            w.str(name);
            w.tensor(v);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing SIRE magic".into()));
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let config = r.str()?;
        let best_epoch = r.u32()?;
        let mut params = ParamStore::default();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let decay = r.take(1)?[0] != 0;
            let value = r.tensor()?;
            params.params.insert(name, Param { value, decay });
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let momentum = r.f32s(1)?[0];
            let c = r.u32()?;
            let mean = r.f32s(c)?;
            let var = r.f32s(c)?;
            params.stats.insert(name, RunningStats { mean, var, momentum });
        }
        let mut velocity = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            velocity.insert(name, r.tensor()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after byte {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Ok(Self {
            config,
            best_epoch,
            params,
            velocity: SgdState { velocity },
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
