//! `EMB1` embedding matrices.
//!
//! ```text
//! offset 0   "EMB1"
//! offset 4   u32 LE version (= 1)
//! offset 8   u32 LE row count
//! offset 12  u32 LE dimension
//! offset 16  rows × dim f32 LE, row-major
//! ```

use std::path::Path;

use crate::tensor::Matrix;
use crate::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u32 = 1;
pub const EMB_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbHeader {
    pub version: u32,
    pub rows: u32,
    pub dim: u32,
}

impl EmbHeader {
    pub fn payload_len(&self) -> u64 {
        u64::from(self.rows) * u64::from(self.dim) * 4
    }
}

/// Parses and validates the 16-byte header.
pub fn decode_header(bytes: &[u8], origin: &Path) -> Result<EmbHeader> {
    if bytes.len() < EMB_HEADER_LEN {
        return Err(Error::format(
            origin,
            bytes.len() as u64,
            format!("truncated header: {} of {EMB_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != EMB_MAGIC {
        return Err(Error::format(origin, 0, "bad magic, expected \"EMB1\""));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let header = EmbHeader {
        version: word(4),
        rows: word(8),
        dim: word(12),
    };
    if header.version != EMB_VERSION {
        return Err(Error::format(
            origin,
            4,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.dim == 0 {
        return Err(Error::format(origin, 12, "dimension is zero"));
    }
    Ok(header)
}

pub fn decode_embeddings(bytes: &[u8], origin: &Path) -> Result<Matrix> {
    let header = decode_header(bytes, origin)?;
    let expected = EMB_HEADER_LEN as u64 + header.payload_len();
    let actual = bytes.len() as u64;
    if actual < expected {
        let whole_rows = (actual - EMB_HEADER_LEN as u64) / (u64::from(header.dim) * 4);
        return Err(Error::format(
            origin,
            actual,
            format!(
                "truncated payload: header declares {} rows of dim {} ({expected} bytes), file holds {actual} bytes ({whole_rows} complete rows)",
                header.rows, header.dim
            ),
        ));
    }
    if actual > expected {
        return Err(Error::format(
            origin,
            expected,
            format!("{} trailing bytes after payload", actual - expected),
        ));
    }
    let payload = &bytes[EMB_HEADER_LEN..];
    let mut data = Vec::with_capacity(payload.len() / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(
                origin,
                (EMB_HEADER_LEN + 4 * i) as u64,
                format!("non-finite value {v}"),
            ));
        }
        data.push(f64::from(v));
    }
    Ok(Matrix::from_vec(header.rows as usize, header.dim as usize, data)?)
}

/// Narrows to `f32`; values outside the `f32` range are an error.
pub fn encode_embeddings(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Data("too many rows for EMB1".into()))?;
    let dim = u32::try_from(m.cols()).map_err(|_| Error::Data("dimension too large for EMB1".into()))?;
    if dim == 0 {
        return Err(Error::Data("cannot write zero-dimensional embeddings".into()));
    }
    let mut out = Vec::with_capacity(EMB_HEADER_LEN + 4 * m.len());
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for &v in m.as_slice() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::Data(format!("value {v} does not fit in f32")));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, path)
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_embeddings(m)?).map_err(|e| Error::io(path, e))
}

/// Reads only the header, for inspection of large files.
pub fn read_header(path: impl AsRef<Path>) -> Result<(EmbHeader, u64)> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut buf = Vec::with_capacity(EMB_HEADER_LEN);
    file.by_ref()
        .take(EMB_HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok((decode_header(&buf, path)?, len))
}
