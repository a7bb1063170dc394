//! LFTB feature blobs: `"LFTB"`, u32 version (1), u8 dtype (0 = f32 LE),
//! u32 N, C, H, W, then `4·N·C·H·W` payload bytes, width fastest.

use std::path::Path;

use super::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const BLOB_MAGIC: &[u8; 4] = b"LFTB";
pub const BLOB_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
/// Bytes before the payload.
pub const BLOB_HEADER_LEN: usize = 25;

pub fn encode_blob(t: &Tensor) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(BLOB_MAGIC);
    w.u32(BLOB_VERSION);
    w.u8(DTYPE_F32);
    for d in t.dims() {
        w.u32(d as u32);
    }
    for &v in t.data() {
        w.f32(v);
    }
    w.into_inner()
}

pub fn decode_blob(bytes: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes, "blob");
    r.magic(BLOB_MAGIC)?;
    let version = r.u32()?;
    if version != BLOB_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype(dtype).into());
    }
    let dims = [
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    ];
    let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let numel = numel.ok_or_else(|| FormatError::Truncated(format!("extents {dims:?} overflow")))?;
    if r.remaining() != numel * 4 {
        let msg = format!(
            "payload is {} bytes, extents {dims:?} need {}",
            r.remaining(),
            numel * 4
        );
        return Err(if r.remaining() < numel * 4 {
            FormatError::Truncated(msg)
        } else {
            FormatError::ConfigMismatch(msg)
        }
        .into());
    }
    let data = r.f32_vec(numel)?;
    Tensor::new(dims, data).map_err(|e| FormatError::ConfigMismatch(e.to_string()).into())
}

pub fn write_blob(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_blob(t)).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_blob(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_blob(&bytes).map_err(|e| e.in_file(path))
}
