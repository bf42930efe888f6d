//! EMBD binary layout (all integers little-endian):
//!
//! ```text
//! 0   magic "EMBD"
//! 4   version u32 (= 1)
//! 8   N u64
//! 16  D u32
//! 20  N_l u32
//! 24  N_s u32
//! 28  reserved, zero-filled up to byte 64
//! 64  N·D f32, row-major
//!     per label column (task columns first, then sensitive):
//!       name length u16, UTF-8 name, N u8 labels
//! ```

use super::{DatasetError, EmbeddingDataset, LabelColumn, Result};
use ndarray::Array2;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const EMBD_MAGIC: [u8; 4] = *b"EMBD";
pub const EMBD_VERSION: u32 = 1;
pub const EMBD_HEADER_LEN: usize = 64;

pub fn write_embd<W: Write>(dataset: &EmbeddingDataset, out: &mut W) -> std::io::Result<()> {
    let mut header = [0u8; EMBD_HEADER_LEN];
    header[0..4].copy_from_slice(&EMBD_MAGIC);
    header[4..8].copy_from_slice(&EMBD_VERSION.to_le_bytes());
    header[8..16].copy_from_slice(&(dataset.n() as u64).to_le_bytes());
    header[16..20].copy_from_slice(&(dataset.dim() as u32).to_le_bytes());
    header[20..24].copy_from_slice(&(dataset.task_labels().len() as u32).to_le_bytes());
    header[24..28].copy_from_slice(&(dataset.sens_labels().len() as u32).to_le_bytes());
    out.write_all(&header)?;

    let mut payload = Vec::with_capacity(4 * dataset.x().len());
    for v in dataset.x().iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload)?;

    for col in dataset.task_labels().iter().chain(dataset.sens_labels()) {
        let name = col.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("label name '{}' longer than 65535 bytes", col.name),
            )
        })?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&col.values)?;
    }
    Ok(())
}

pub fn save_embd(dataset: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write_embd(dataset, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_embd(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut ds = read_embd(&bytes)?;
    ds.provenance = format!("embd:{}", path.display());
    Ok(ds)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(DatasetError::Truncated {
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_embd(bytes: &[u8]) -> Result<EmbeddingDataset> {
    let mut cur = Cursor { bytes, offset: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != EMBD_MAGIC {
        return Err(DatasetError::BadMagic {
            offset: 0,
            found: magic,
        });
    }
    let version = cur.u32()?;
    if version != EMBD_VERSION {
        return Err(DatasetError::Version {
            offset: 4,
            found: version,
        });
    }
    let n = usize::try_from(cur.u64()?).map_err(|_| DatasetError::Invalid("row count overflows usize".into()))?;
    let d = cur.u32()? as usize;
    let n_task = cur.u32()? as usize;
    let n_sens = cur.u32()? as usize;
    cur.take(EMBD_HEADER_LEN - cur.offset)?;

    let matrix_bytes = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| DatasetError::Invalid(format!("matrix {n}x{d} too large")))?;
    let raw = cur.take(matrix_bytes)?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let x = Array2::from_shape_vec((n, d), values).expect("length checked above");

    let mut columns = Vec::with_capacity(n_task + n_sens);
    for _ in 0..n_task + n_sens {
        let len = cur.u16()? as usize;
        let name_offset = cur.offset;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| DatasetError::LabelName { offset: name_offset })?
            .to_owned();
        let label_offset = cur.offset;
        let labels = cur.take(n)?;
        if let Some(pos) = labels.iter().position(|&v| v > 1) {
            return Err(DatasetError::LabelByte {
                offset: label_offset + pos,
                value: labels[pos],
            });
        }
        columns.push(LabelColumn::new(name, labels.to_vec()));
    }
    if cur.offset != bytes.len() {
        return Err(DatasetError::TrailingBytes {
            offset: cur.offset,
            extra: bytes.len() - cur.offset,
        });
    }
    let sens = columns.split_off(n_task);
    EmbeddingDataset::new(x, columns, sens, "embd")
}
