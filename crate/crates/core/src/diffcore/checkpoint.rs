//! Binary checkpoint container.
//!
//! Layout: `RMM1`, u32 tensor count, then per tensor a u16 name length, the
//! UTF-8 name, a u8 rank, one u64 per extent and the raw f32 payload. All
//! integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RMM1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| Error::InvalidArgument("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("name too long: {name}")))?;
            let rank = u8::try_from(t.rank())
                .map_err(|_| Error::InvalidArgument(format!("rank too large: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    usize::try_from(r.u64()?)
                        .map_err(|_| Error::Format(format!("extent overflow in {name}")))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("size overflow in {name}")))?;
            let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                buf.len() - r.pos
            )));
        }
        Ok(Self { tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Stores a u64 exactly as four 16-bit limbs, least significant first; every
/// limb is an integer below 2^16 and therefore exact in f32.
pub fn encode_u64(v: u64) -> Tensor {
    let limbs = (0..4).map(|i| ((v >> (16 * i)) & 0xFFFF) as f32).collect();
    Tensor::new(vec![4], limbs).expect("4 limbs")
}

pub fn decode_u64(t: &Tensor) -> Result<u64> {
    if t.shape() != [4] {
        return Err(Error::Format(format!("u64 field has shape {:?}", t.shape())));
    }
    let mut v = 0u64;
    for (i, &limb) in t.data().iter().enumerate() {
        if !(0.0..65536.0).contains(&limb) || limb.fract() != 0.0 {
            return Err(Error::Format(format!("bad u64 limb {limb}")));
        }
        v |= (limb as u64) << (16 * i);
    }
    Ok(v)
}

/// Bit-exact f64 storage via its IEEE bits.
pub fn encode_f64s(values: &[f64]) -> Tensor {
    let mut limbs = Vec::with_capacity(values.len() * 4);
    for v in values {
        limbs.extend_from_slice(encode_u64(v.to_bits()).data());
    }
    Tensor::new(vec![values.len(), 4], limbs).expect("4 limbs per value")
}

pub fn decode_f64s(t: &Tensor) -> Result<Vec<f64>> {
    if t.rank() != 2 || t.shape()[1] != 4 {
        return Err(Error::Format(format!("f64 field has shape {:?}", t.shape())));
    }
    t.data()
        .chunks_exact(4)
        .map(|c| {
            let limb = Tensor::new(vec![4], c.to_vec())?;
            Ok(f64::from_bits(decode_u64(&limb)?))
        })
        .collect()
}
