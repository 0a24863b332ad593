//! Binary checkpoint format.
//!
//! All integers are little-endian `u32` unless noted, floats are
//! little-endian IEEE-754 `f64`:
//!
//! ```text
//! magic              8 bytes  "DXPLCKPT"
//! format_version     u32      (currently 1)
//! d_model            u32
//! n_layers           u32
//! n_heads            u32
//! vocab_size         u32
//! max_len            u32
//! threshold          f64
//! vocab_fingerprint  u64
//! block_count        u32
//! block_count times:
//!   name_len         u32
//!   name             name_len bytes, UTF-8 (e.g. "layers.0.attn_q")
//!   rank             u32
//!   dims             rank × u32
//!   values           product(dims) × f64, row-major
//! ```
//!
//! Blocks appear in [`ParamSet::entries`](super::ParamSet::entries) order.

use std::fs;
use std::path::Path;

use super::params::param_shapes;
use super::{ModelConfig, ModelError, ModelParams};
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 8] = b"DXPLCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A checkpoint: parameters plus the fingerprint of the vocabulary they
/// were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab_fingerprint: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.params.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for v in [cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.vocab_size, cfg.max_len] {
            put_u32(&mut out, v as u32);
        }
        out.extend_from_slice(&cfg.threshold.to_le_bytes());
        out.extend_from_slice(&self.vocab_fingerprint.to_le_bytes());
        let entries = self.params.weights.entries();
        put_u32(&mut out, entries.len() as u32);
        for (name, t) in entries {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let config = ModelConfig {
            d_model: r.u32()? as usize,
            n_layers: r.u32()? as usize,
            n_heads: r.u32()? as usize,
            vocab_size: r.u32()? as usize,
            max_len: r.u32()? as usize,
            threshold: r.f64()?,
        };
        config.validate()?;
        let vocab_fingerprint = r.u64()?;
        let expected = param_shapes(&config);
        let expected_entries = expected.entries();
        let count = r.u32()? as usize;
        if count != expected_entries.len() {
            return Err(corrupt(&format!(
                "expected {} parameter blocks, found {count}",
                expected_entries.len()
            )));
        }
        let mut blocks = Vec::with_capacity(count);
        for (want_name, want_shape) in &expected_entries {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("non-UTF-8 block name"))?;
            if name != want_name {
                return Err(corrupt(&format!("expected block {want_name}, found {name}")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if &&shape != want_shape {
                return Err(corrupt(&format!("block {name} has shape {shape:?}, expected {want_shape:?}")));
            }
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            blocks.push(Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after last block"));
        }
        let mut it = blocks.into_iter();
        let weights = expected.map(|_, _| it.next().expect("one block per entry"));
        Ok(Checkpoint {
            params: ModelParams { config, weights },
            vocab_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn corrupt(reason: &str) -> ModelError {
    ModelError::Checkpoint(reason.to_string())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            vocab_size: 12,
            max_len: 16,
            threshold: 0.4,
        };
        Checkpoint {
            params: ModelParams::init(cfg, 5).unwrap(),
            vocab_fingerprint: 0xdead_beef,
        }
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 0.4);
        assert_eq!(u64::from_le_bytes(bytes[40..48].try_into().unwrap()), 0xdead_beef);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(ModelError::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(ModelError::Checkpoint(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(ModelError::Checkpoint(_))));
    }
}
