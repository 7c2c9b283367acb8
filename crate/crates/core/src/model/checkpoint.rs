//! `MIANCKPT` parameter files:
//!
//! ```text
//! magic "MIANCKPT" | u32 version = 1 | u64 config fingerprint | u32 count
//! per param: u16 path len | UTF-8 path | u32 rank | u32 dims[rank] | f64 values
//! ```
//!
//! All integers and floats little-endian; parameters in path order.

use std::fs;
use std::path::Path;

use super::{check_params, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ModelParams, Tensor};

pub const CKPT_MAGIC: &[u8; 8] = b"MIANCKPT";
pub const CKPT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams, fingerprint: u64) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&fingerprint.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (path, t) in params.iter() {
        let len = u16::try_from(path.len())
            .map_err(|_| Error::Data(format!("parameter path too long: {path}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated checkpoint: {what} needs {n} bytes, {left} remain"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint; returns its fingerprint and parameters.
pub fn decode_checkpoint(buf: &[u8]) -> Result<(u64, ModelParams)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != CKPT_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"MIANCKPT\""));
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(Error::format(
            8,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let fingerprint = r.u64("fingerprint")?;
    let count = r.u32("parameter count")?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let len = r.u16("path length")? as usize;
        let path = std::str::from_utf8(r.take(len, "path")?)
            .map_err(|_| Error::format(at + 2, "parameter path is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format(
                r.pos as u64 - 4,
                format!("implausible rank {rank} for `{path}`"),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(at, format!("invalid shape {shape:?} for `{path}`")))?;
        let values_at = r.pos;
        let bytes = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::format(at, "shape overflow"))?,
            "values",
        )?;
        let mut data = Vec::with_capacity(n);
        for (i, c) in bytes.chunks_exact(8).enumerate() {
            let x = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            if !x.is_finite() {
                return Err(Error::format(
                    (values_at + 8 * i) as u64,
                    format!("non-finite value in `{path}`"),
                ));
            }
            data.push(x);
        }
        params
            .insert(path, Tensor::new(shape, data)?)
            .map_err(|e| Error::format(at, e.to_string()))?;
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            r.pos as u64,
            "trailing bytes after last parameter",
        ));
    }
    Ok((fingerprint, params))
}

pub fn save_checkpoint(
    params: &ModelParams,
    cfg: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_checkpoint(params, cfg.fingerprint())?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(u64, ModelParams)> {
    decode_checkpoint(&fs::read(path)?)
}

/// Reads a checkpoint and checks it was written for a model shaped like
/// `cfg`.
pub fn load_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<ModelParams> {
    let (fp, params) = read_checkpoint(path)?;
    if fp != cfg.fingerprint() {
        return Err(Error::Fingerprint {
            expected: cfg.fingerprint(),
            found: fp,
        });
    }
    check_params(cfg, &params)?;
    Ok(params)
}
