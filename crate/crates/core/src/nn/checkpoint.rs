//! Binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes   "CNAS"
//! version      u16       1
//! input rank   u16       r
//! input dims   r × u32
//! layer count  u32       L
//! layer table  L entries: tag u8, then
//!                0 dense    inputs u32, units u32
//!                1 conv     in_channels u32, filters u32
//!                2 pool
//!                3 dropout  rate f32
//!                4 flatten
//!                5 softmax  inputs u32, classes u32
//! parameters   for each dense/conv/softmax layer in order:
//!                weight block f32 × (count), bias block f32 × (units)
//! ```

use std::path::Path;

use super::layer::{Conv2d, Dense, Layer};
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CNAS";
pub const VERSION: u16 = 1;

const TAG_DENSE: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_DROPOUT: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + net.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.input_shape().len() as u16).to_le_bytes());
    for d in net.input_shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) | Layer::SoftmaxOutput(d) => {
                let tag = if matches!(layer, Layer::Dense(_)) {
                    TAG_DENSE
                } else {
                    TAG_SOFTMAX
                };
                out.push(tag);
                out.extend_from_slice(&(d.inputs as u32).to_le_bytes());
                out.extend_from_slice(&(d.units as u32).to_le_bytes());
            }
            Layer::Conv2d(c) => {
                out.push(TAG_CONV);
                out.extend_from_slice(&(c.in_channels as u32).to_le_bytes());
                out.extend_from_slice(&(c.filters as u32).to_le_bytes());
            }
            Layer::MaxPool2d => out.push(TAG_POOL),
            Layer::Dropout(rate) => {
                out.push(TAG_DROPOUT);
                out.extend_from_slice(&rate.to_le_bytes());
            }
            Layer::Flatten => out.push(TAG_FLATTEN),
        }
    }
    for block in net.params() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::Checkpoint("parameter block too large".into())
        })?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let rank = r.u16()? as usize;
    let input_shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let layer = match r.u8()? {
            TAG_DENSE => Layer::Dense(Dense::zeros(r.u32()?, r.u32()?)),
            TAG_SOFTMAX => Layer::SoftmaxOutput(Dense::zeros(r.u32()?, r.u32()?)),
            TAG_CONV => Layer::Conv2d(Conv2d::zeros(r.u32()?, r.u32()?)),
            TAG_POOL => Layer::MaxPool2d,
            TAG_DROPOUT => Layer::Dropout(r.f32()?),
            TAG_FLATTEN => Layer::Flatten,
            tag => return Err(Error::Checkpoint(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    for layer in &mut layers {
        for block in layer.params_mut() {
            let values = r.floats(block.len())?;
            block.copy_from_slice(&values);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Network::new(input_shape, layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
