//! `PCKP` checkpoint files.
//!
//! Layout (little-endian): magic `PCKP`, `u32` version (1), `u32` tensor
//! count, then per tensor: `u32` name length, UTF-8 name, `u32` rank, `rank`
//! `u32` dims, and the values as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCKP";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<F: Real>(tensors: &[Tensor<F>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<F: Real>(bytes: &[u8]) -> Result<Vec<Tensor<F>>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 4, "payload")?;
        let values = raw
            .chunks_exact(4)
            .map(|b| F::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        tensors.push(Tensor::new(name, shape, values)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(tensors)
}

pub fn write_checkpoint<F: Real>(tensors: &[Tensor<F>], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(tensors))?;
    Ok(())
}

pub fn read_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<Vec<Tensor<F>>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let t = vec![
            Tensor::new("a.w", vec![2, 3], vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.25, 1e-7, -8.0]).unwrap(),
            Tensor::new("b", vec![1], vec![0.1f32]).unwrap(),
        ];
        let bytes = encode_checkpoint(&t);
        let back: Vec<Tensor<f32>> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in t.iter().zip(&back) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.shape, y.shape);
            let xb: Vec<u32> = x.values.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = vec![Tensor::new("x", vec![2], vec![1.0f32, 2.0]).unwrap()];
        let mut bytes = encode_checkpoint(&t);
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bytes).is_err());
    }
}
