//! WSHP encoder checkpoints (little-endian):
//!
//! ```text
//! 0   magic "WSHP"
//! 4   version u32 (= 1)
//! 8   layer count L u32
//! 12  reserved u32 (zero)
//! 16  L × { d_in u32, d_out u32, activation u8, 3 zero bytes }
//!     L × { d_out·d_in f32 weights (row-major), d_out f32 biases }
//! ```
//!
//! Parameters are stored as `f32`, so saving rounds an `f64` encoder;
//! save∘load∘save is byte-identical.

use super::ShaperEncoder;
use crate::tensor::{Activation, DenseNet, Layer};
use ndarray::{Array1, Array2};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const WSHP_MAGIC: [u8; 4] = *b"WSHP";
pub const WSHP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?} at byte {offset}")]
    BadMagic { offset: usize, found: [u8; 4] },
    #[error("unsupported version {found} at byte {offset}")]
    Version { offset: usize, found: u32 },
    #[error("truncated checkpoint at byte {offset}: need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("unknown activation code {code} at byte {offset}")]
    Activation { offset: usize, code: u8 },
    #[error("invalid layer stack: {0}")]
    Layers(String),
    #[error("{extra} unexpected trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn write_wshp<W: Write>(encoder: &ShaperEncoder, out: &mut W) -> std::io::Result<()> {
    let layers = encoder.net().layers();
    let mut buf = Vec::new();
    buf.extend_from_slice(&WSHP_MAGIC);
    buf.extend_from_slice(&WSHP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for l in layers {
        buf.extend_from_slice(&(l.d_in() as u32).to_le_bytes());
        buf.extend_from_slice(&(l.d_out() as u32).to_le_bytes());
        buf.extend_from_slice(&[l.activation.code(), 0, 0, 0]);
    }
    for l in layers {
        for v in l.weight.iter().chain(l.bias.iter()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
}

pub fn save_wshp(encoder: &ShaperEncoder, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_wshp(encoder, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_wshp(path: impl AsRef<Path>) -> Result<ShaperEncoder, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_wshp(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| CheckpointError::Layers("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

/// Parses a checkpoint. The compression check is not applied so square
/// test encoders round-trip too.
pub fn read_wshp(bytes: &[u8]) -> Result<ShaperEncoder, CheckpointError> {
    let mut r = Reader { bytes, offset: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != WSHP_MAGIC {
        return Err(CheckpointError::BadMagic { offset: 0, found: magic });
    }
    let version = r.u32()?;
    if version != WSHP_VERSION {
        return Err(CheckpointError::Version {
            offset: 4,
            found: version,
        });
    }
    let count = r.u32()? as usize;
    r.take(4)?;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        let act_offset = r.offset;
        let code = r.take(4)?[0];
        let act = Activation::from_code(code).ok_or(CheckpointError::Activation {
            offset: act_offset,
            code,
        })?;
        shapes.push((d_in, d_out, act));
    }
    let mut layers = Vec::with_capacity(count);
    for (d_in, d_out, act) in shapes {
        let w = r.f32s(d_in * d_out)?;
        let b = r.f32s(d_out)?;
        let weight = Array2::from_shape_vec((d_out, d_in), w).expect("length matches shape");
        layers.push(Layer::new(weight, Array1::from(b), act));
    }
    if r.offset != bytes.len() {
        return Err(CheckpointError::TrailingBytes {
            offset: r.offset,
            extra: bytes.len() - r.offset,
        });
    }
    let net = DenseNet::new(layers).map_err(|e| CheckpointError::Layers(e.to_string()))?;
    Ok(ShaperEncoder::from_net_unchecked(net))
}
