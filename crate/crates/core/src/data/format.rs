//! `MIANEMB1` embedding files.
//!
//! Little-endian throughout:
//!
//! ```text
//! header   magic "MIANEMB1" | u32 version = 1 | u32 N | u32 m | u32 u | u32 d
//! record   u8 label | u8 fake_type | u32 n_valid_text_tokens
//!          f32[d] text_cls | f32[m·d] text tokens (rows >= n_valid are zero)
//!          f32[d] image_cls | f32[u·d] image patches
//! ```
//!
//! Values are widened to `f64` on read. Every parse error carries the byte
//! offset where it was detected.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FakeType, NewsSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"MIANEMB1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 5;

fn record_len(m: usize, u: usize, d: usize) -> usize {
    2 + 4 + 4 * (d + m * d + d + u * d)
}

pub fn encode_embeddings(samples: &[NewsSample]) -> Result<Vec<u8>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("cannot write an empty sample set".into()))?;
    let (m, u, d) = (first.m(), first.u(), first.d());
    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * record_len(m, u, d));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, samples.len() as u32, m as u32, u as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, s) in samples.iter().enumerate() {
        if (s.m(), s.u(), s.d()) != (m, u, d) {
            return Err(Error::Data(format!(
                "sample {i} has shape (m={}, u={}, d={}), expected (m={m}, u={u}, d={d})",
                s.m(),
                s.u(),
                s.d()
            )));
        }
        s.validate()
            .map_err(|e| Error::Data(format!("sample {i}: {e}")))?;
        if !s.mask_is_prefix() {
            return Err(Error::Data(format!(
                "sample {i}: valid text tokens must form a prefix"
            )));
        }
        out.push(s.label);
        out.push(s.fake_type.code());
        out.extend_from_slice(&(s.n_valid_text() as u32).to_le_bytes());
        for t in [&s.text_cls, &s.text_tokens, &s.image_cls, &s.image_patches] {
            for &x in t.data() {
                if !x.is_finite() {
                    return Err(Error::Data(format!("sample {i}: non-finite value")));
                }
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_embeddings(samples: &[NewsSample], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_embeddings(samples)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<NewsSample>> {
    decode_embeddings(&fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated file: {what} needs {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let b = self.take(4 * n, what)?;
        b.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if x.is_finite() {
                    Ok(x as f64)
                } else {
                    Err(Error::format(
                        (start + 4 * i) as u64,
                        format!("non-finite value {x} in {what}"),
                    ))
                }
            })
            .collect()
    }
}

pub fn decode_embeddings(buf: &[u8]) -> Result<Vec<NewsSample>> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(
            0,
            format!(
                "bad magic {:?}, expected \"MIANEMB1\"",
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            8,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let n = cur.u32("record count")? as usize;
    let dims_at = cur.pos;
    let (m, u, d) = (
        cur.u32("m")? as usize,
        cur.u32("u")? as usize,
        cur.u32("d")? as usize,
    );
    if m == 0 || u == 0 || d == 0 {
        return Err(Error::format(
            dims_at as u64,
            format!("zero dimension (m={m}, u={u}, d={d})"),
        ));
    }
    let rec = record_len(m, u, d);
    let body = buf.len() - HEADER_LEN;
    if body.is_multiple_of(rec) && body / rec != n {
        return Err(Error::format(
            HEADER_LEN as u64,
            format!(
                "record count mismatch: header declares {n} records, file holds {}",
                body / rec
            ),
        ));
    }

    let mut out = Vec::with_capacity(n.min(body / rec + 1));
    for i in 0..n {
        let at = cur.pos as u64;
        let label = cur.u8("label")?;
        let code = cur.u8("fake_type")?;
        let n_valid = cur.u32("n_valid_text_tokens")? as usize;
        if label > 1 {
            return Err(Error::format(
                at,
                format!("record {i}: label {label} is not 0 or 1"),
            ));
        }
        let fake_type = FakeType::from_code(code).ok_or_else(|| {
            Error::format(at + 1, format!("record {i}: unknown fake_type {code}"))
        })?;
        if n_valid == 0 || n_valid > m {
            return Err(Error::format(
                at + 2,
                format!("record {i}: n_valid_text_tokens {n_valid} outside 1..={m}"),
            ));
        }
        let text_cls = cur.f32s(d, "text_cls")?;
        let tokens_at = cur.pos;
        let text = cur.f32s(m * d, "text tokens")?;
        if let Some(j) = text[n_valid * d..].iter().position(|&x| x != 0.0) {
            return Err(Error::format(
                (tokens_at + 4 * (n_valid * d + j)) as u64,
                format!("record {i}: padding row {} is not zero", n_valid + j / d),
            ));
        }
        let image_cls = cur.f32s(d, "image_cls")?;
        let image = cur.f32s(u * d, "image patches")?;
        let sample = NewsSample {
            text_tokens: Tensor::matrix(m, d, text)?,
            text_cls: Tensor::vector(text_cls)?,
            text_mask: (0..m).map(|r| r < n_valid).collect(),
            image_patches: Tensor::matrix(u, d, image)?,
            image_cls: Tensor::vector(image_cls)?,
            label,
            fake_type,
        };
        sample
            .validate()
            .map_err(|e| Error::format(at, format!("record {i}: {e}")))?;
        out.push(sample);
    }
    if cur.pos != buf.len() {
        return Err(Error::format(
            cur.pos as u64,
            format!("{} trailing bytes after {n} records", buf.len() - cur.pos),
        ));
    }
    Ok(out)
}
