//! Binary checkpoints.
//!
//! Layout (little-endian): 8-byte magic `DSEPCKPT`, `u32` version, `u32`
//! config length and the config as JSON, `u32` parameter count, then per
//! parameter a `u16` name length, the UTF-8 name, three `u32` dims and the
//! values as `f64`.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Result, ToyError};
use crate::model::{Separator, SeparatorConfig};

pub const MAGIC: &[u8; 8] = b"DSEPCKPT";
pub const VERSION: u32 = 1;

pub fn encode(sep: &Separator) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&sep.config)?;
    let mut out = Vec::with_capacity(64 + config.len() + 8 * sep.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(sep.params.len() as u32).to_le_bytes());
    for (name, t) in sep.names.iter().zip(&sep.params) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
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
            .ok_or_else(|| ToyError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint and checks its parameter names and shapes against
/// the layout the stored config implies.
pub fn decode(bytes: &[u8]) -> Result<Separator> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ToyError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ToyError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: SeparatorConfig = serde_json::from_slice(r.take(len)?)?;
    let mut sep = Separator::new(config, 0)?;
    let count = r.u32()? as usize;
    if count != sep.params.len() {
        return Err(ToyError::Checkpoint(format!(
            "{count} parameters stored, the config defines {}",
            sep.params.len()
        )));
    }
    for i in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| ToyError::Checkpoint("parameter name is not UTF-8".into()))?;
        if name != sep.names[i] {
            return Err(ToyError::Checkpoint(format!("expected parameter {}, found {name}", sep.names[i])));
        }
        let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        if shape != sep.params[i].shape() {
            return Err(ToyError::Checkpoint(format!(
                "{name} has shape {shape:?}, expected {:?}",
                sep.params[i].shape()
            )));
        }
        let raw = r.take(8 * sep.params[i].len())?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        sep.params[i] = Tensor::new(shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(ToyError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(sep)
}

pub fn save(sep: &Separator, path: &Path) -> Result<()> {
    std::fs::write(path, encode(sep)?).map_err(|e| ToyError::io(path, e))
}

pub fn load(path: &Path) -> Result<Separator> {
    decode(&std::fs::read(path).map_err(|e| ToyError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::tiny_separator_config;

    #[test]
    fn round_trip_is_exact() {
        let sep = Separator::new(tiny_separator_config(), 5).unwrap();
        let bytes = encode(&sep).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, sep);
        assert_eq!(encode(&back).unwrap(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&sep, &path).unwrap();
        assert_eq!(load(&path).unwrap(), sep);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let sep = Separator::new(tiny_separator_config(), 5).unwrap();
        let bytes = encode(&sep).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(ToyError::Checkpoint(_))));
        let mut version = bytes;
        version[8] = 9;
        assert!(decode(&version).is_err());
    }
}
