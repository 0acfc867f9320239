//! Little-endian binary checkpoint:
//!
//! ```text
//! "NGF1" | u32 version | u32 config length | config (UTF-8 JSON)
//!        | u64 param count n | f32 × n params | f32 × n first moments
//!        | f32 × n second moments | u64 step | u32 CRC-32 of everything before
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::params::ParamStore;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NGF1";
pub const VERSION: u32 = 1;

/// Size in bytes of a checkpoint with the given config blob and parameter count.
pub fn checkpoint_len(config_len: usize, params: usize) -> usize {
    4 + 4 + 4 + config_len + 8 + 3 * 4 * params + 8 + 4
}

pub fn encode_checkpoint<C: Serialize>(store: &ParamStore, config: &C) -> Result<Vec<u8>> {
    let blob = serde_json::to_vec(config)?;
    let blob_len = u32::try_from(blob.len()).map_err(|_| Error::Checkpoint("config blob larger than 4 GiB".into()))?;
    let n = store.len();
    let mut out = Vec::with_capacity(checkpoint_len(blob.len(), n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&blob_len.to_le_bytes());
    out.extend_from_slice(&blob);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for buf in [&store.params, &store.m, &store.v] {
        for &x in buf.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out.extend_from_slice(&store.step.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated: wanted {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

pub fn decode_checkpoint<C: DeserializeOwned>(bytes: &[u8]) -> Result<(ParamStore, C)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file {version}, expected {VERSION}"
        )));
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let mut r = Reader { bytes: body, pos: 8 };
    let blob_len = r.u32()? as usize;
    let blob = r.take(blob_len)?;
    let n = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("param count overflow".into()))?;
    let params = r.f32s(n)?;
    let m = r.f32s(n)?;
    let v = r.f32s(n)?;
    let step = r.u64()?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let config: C = serde_json::from_slice(blob).map_err(|e| Error::Checkpoint(format!("config blob: {e}")))?;
    Ok((
        ParamStore {
            params,
            offsets: Vec::new(),
            m,
            v,
            step,
        },
        config,
    ))
}

/// Writes the checkpoint atomically (temp file + rename).
pub fn save_checkpoint<C: Serialize>(store: &ParamStore, config: &C, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(store, config)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint. The returned store has no layer offsets; callers
/// rebuild them from the config.
pub fn load_checkpoint<C: DeserializeOwned>(path: &Path) -> Result<(ParamStore, C)> {
    decode_checkpoint(&fs::read(path)?)
}
