//! LFTW weight files.
//!
//! ```text
//! "LFTW"            4 bytes
//! version           u32 (= 1)
//! feature_dim       u32
//! patch             u32
//! stage count S     u32
//! channels          S x u32
//! use_image         u8 (0 or 1)
//! then, until end of file, one record per tensor in model order:
//!   name length u32, name bytes (UTF-8), rank u32, rank x u32 extents,
//!   numel x f32 values
//! ```
//!
//! All integers and floats are little-endian. Vectors (biases, norm affine
//! parameters) are written with rank 1; convolution kernels with rank 4.
//! The seed is not stored; loaded configs carry seed 0.

use std::path::Path;

use super::{LiftConfig, LiftModel};
use crate::error::{Error, FormatError, Result};
use crate::io::bytes::{ByteReader, ByteWriter};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LFTW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights(model: &LiftModel) -> Vec<u8> {
    let cfg = model.config();
    let mut w = ByteWriter::default();
    w.bytes(WEIGHTS_MAGIC);
    w.u32(WEIGHTS_VERSION);
    w.u32(cfg.feature_dim as u32);
    w.u32(cfg.patch as u32);
    w.u32(cfg.stages() as u32);
    for &c in &cfg.encoder_channels {
        w.u32(c as u32);
    }
    w.u8(cfg.use_image as u8);
    for (name, t) in model.names().iter().zip(model.tensors()) {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        let [a, b, c, d] = t.dims();
        if a == 1 && c == 1 && d == 1 {
            w.u32(1);
            w.u32(b as u32);
        } else {
            w.u32(4);
            for e in [a, b, c, d] {
                w.u32(e as u32);
            }
        }
        for &v in t.data() {
            w.f32(v);
        }
    }
    w.into_inner()
}

pub fn read_weights(bytes: &[u8]) -> Result<LiftModel> {
    let mut r = ByteReader::new(bytes, "weights");
    r.magic(WEIGHTS_MAGIC)?;
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let feature_dim = r.u32()? as usize;
    let patch = r.u32()? as usize;
    let stages = r.u32()? as usize;
    if stages > 16 {
        return Err(FormatError::ConfigMismatch(format!("implausible stage count {stages}")).into());
    }
    let encoder_channels = (0..stages)
        .map(|_| r.u32().map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let use_image = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(FormatError::ConfigMismatch(format!("use_image flag {other}")).into()),
    };
    let config = LiftConfig {
        feature_dim,
        patch,
        encoder_channels,
        use_image,
        seed: 0,
    };
    config
        .validate()
        .map_err(|e| FormatError::ConfigMismatch(e.to_string()))?;

    let mut named = Vec::new();
    while !r.is_empty() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| FormatError::ConfigMismatch("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = match rank {
            1 => [1, r.u32()? as usize, 1, 1],
            4 => [
                r.u32()? as usize,
                r.u32()? as usize,
                r.u32()? as usize,
                r.u32()? as usize,
            ],
            _ => return Err(FormatError::ConfigMismatch(format!("tensor `{name}` has rank {rank}")).into()),
        };
        let numel: usize = dims.iter().product();
        let data = r.f32_vec(numel)?;
        let t = Tensor::new(dims, data).map_err(|e| FormatError::ConfigMismatch(e.to_string()))?;
        named.push((name, t));
    }
    let expected = config.parameter_shapes();
    if named.len() < expected.len() && named.iter().zip(&expected).all(|((n, _), (e, _))| n == e) {
        return Err(FormatError::Truncated(format!(
            "weights end after {} of {} tensors",
            named.len(),
            expected.len()
        ))
        .into());
    }
    LiftModel::from_parts(config, named).map_err(|e| match e {
        Error::InvalidArgument(msg) => FormatError::ConfigMismatch(msg).into(),
        other => other,
    })
}

pub fn save_weights(model: &LiftModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_weights(model)).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<LiftModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    read_weights(&bytes).map_err(|e| e.in_file(path))
}
