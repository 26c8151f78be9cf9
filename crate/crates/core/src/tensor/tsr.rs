//! `TSR1` binary tensor files.
//!
//! Layout: magic `b"TSR1"`, `u8` dtype code (0 = f32, 1 = f64), `u8` rank,
//! two zero bytes, `rank` little-endian `u32` extents, then the row-major
//! little-endian element data.

use std::path::Path;

use super::{numel_of, DType, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSR1";

/// Raw decoded contents of a `TSR1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TsrHeader {
    pub dtype: DType,
    pub dims: Vec<usize>,
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    encode_raw(t.shape(), t.data())
}

pub fn encode_raw<T: Scalar>(dims: &[usize], data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + data.len() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(T::DTYPE.code());
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        v.write_le(&mut out);
    }
    out
}

pub fn decode_header(bytes: &[u8]) -> std::result::Result<(TsrHeader, usize), String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("missing TSR1 magic".into());
    }
    let dtype = DType::from_code(bytes[4]).ok_or_else(|| format!("unknown dtype code {}", bytes[4]))?;
    let ndim = bytes[5] as usize;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err("reserved header bytes are not zero".into());
    }
    let header_len = 8 + 4 * ndim;
    if bytes.len() < header_len {
        return Err("truncated extents".into());
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let expected = header_len + numel_of(&dims) * dtype.size();
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes, found {}", bytes.len()));
    }
    Ok((TsrHeader { dtype, dims }, header_len))
}

/// Decodes into element type `T`; the stored dtype must match.
pub fn decode<T: Scalar>(bytes: &[u8]) -> std::result::Result<Tensor<T>, String> {
    let (header, at) = decode_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(format!(
            "stored dtype {} but {} requested",
            header.dtype.name(),
            T::DTYPE.name()
        ));
    }
    let size = T::DTYPE.size();
    let data: Vec<T> = bytes[at..].chunks_exact(size).map(T::read_le).collect();
    if header.dims.is_empty() {
        return Ok(Tensor::scalar(data[0]));
    }
    Tensor::from_vec(data, &header.dims).map_err(|e| e.to_string())
}

pub fn write<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::parse(path, 0, msg))
}
