//! Binary weight container shared by generators, discriminators and
//! estimators.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "AVTRCKPT"
//! version    u32      currently 1
//! header_len u32
//! header     header_len bytes of UTF-8 JSON (kind, architecture, seed, ...)
//! n_arrays   u32
//! n_arrays times:
//!   name_len u16, name (UTF-8)
//!   dtype    u8       0 = f32, 1 = f64
//!   ndim     u8, then ndim x u32 dims
//!   data     prod(dims) values, little-endian
//! checksum   32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AVTRCKPT";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(header: &Value, params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let h = serde_json::to_vec(header).expect("header serializes");
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE);
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            x.to_le(&mut out);
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a container, converting arrays to `T` whatever their stored dtype.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Value, ParamSet<T>)> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Corrupted("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = r.u32()? as usize;
    let header: Value = serde_json::from_slice(r.take(hlen)?)?;
    let n = r.u32()? as usize;
    let mut names = Vec::with_capacity(n);
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let dtype = r.u8()?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            0 => r
                .take(count * 4)?
                .chunks_exact(4)
                .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
                .collect(),
            1 => r
                .take(count * 8)?
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())).unwrap())
                .collect(),
            d => return Err(Error::Format(format!("unknown dtype tag {d}"))),
        };
        names.push(name);
        tensors.push(Tensor::new(&shape, data));
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after arrays".into()));
    }
    Ok((header, ParamSet::from_parts(names, tensors)))
}

pub fn save<T: Scalar>(path: &Path, header: &Value, params: &ParamSet<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode(header, params))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<(Value, ParamSet<T>)> {
    decode(&std::fs::read(path)?)
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Checks that the header's `kind` field matches.
pub fn expect_kind(header: &Value, kind: &str) -> Result<()> {
    match header.get("kind").and_then(|k| k.as_str()) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::Format(format!(
            "expected a {kind} checkpoint, found {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.push(
            "a",
            Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 1e-3, 7.0]),
        );
        p.push("b.bias", Tensor::from_f64(&[1], &[0.25]));
        p
    }

    #[test]
    fn round_trip_and_cast() {
        let p = sample();
        let h = json!({"kind": "test", "seed": 4});
        let bytes = encode(&h, &p);
        assert_eq!(&bytes[..8], MAGIC);
        let (h2, p2) = decode::<f32>(&bytes).unwrap();
        assert_eq!((h2, &p2), (h.clone(), &p));
        let (_, p64) = decode::<f64>(&bytes).unwrap();
        assert_eq!(p64.cast::<f32>(), p);
        assert_eq!(encode(&h, &p), bytes);
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = encode(&json!({"kind": "x"}), &sample());
        let n = bytes.len();
        bytes[n / 2] ^= 1;
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Corrupted(_))));
        assert!(decode::<f32>(b"garbage").is_err());
    }
}
