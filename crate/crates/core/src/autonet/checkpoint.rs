//! Versioned binary checkpoints.
//!
//! ```text
//! magic        8 bytes  "DAMXNET\0"
//! version      u32      1
//! networks     u32
//! per network:
//!   name       u32 length + UTF-8 bytes
//!   layers     u32
//!   per layer: kind u8, a u32, b u32, has_bias u8
//! per network, per learnable layer in declaration order:
//!   count      u32
//!   values     count x f32
//! ```
//!
//! All integers and floats are little-endian. `a`/`b` are in/out channels
//! for conv and dense layers and zero otherwise.

use std::fs;
use std::path::Path;

use super::{LayerSpec, Network};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DAMXNET\0";
pub const VERSION: u32 = 1;

fn kind_code(layer: &LayerSpec) -> (u8, u32, u32, u8) {
    match *layer {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            has_bias,
        } => (0, in_channels as u32, out_channels as u32, u8::from(has_bias)),
        LayerSpec::Relu => (1, 0, 0, 0),
        LayerSpec::Downsample2 => (2, 0, 0, 0),
        LayerSpec::Upsample2 => (3, 0, 0, 0),
        LayerSpec::GlobalAvgPool => (4, 0, 0, 0),
        LayerSpec::Dense {
            in_features,
            out_features,
            has_bias,
        } => (5, in_features as u32, out_features as u32, u8::from(has_bias)),
        LayerSpec::L2Normalize => (6, 0, 0, 0),
    }
}

fn layer_from_code(code: u8, a: u32, b: u32, bias: u8) -> Result<LayerSpec> {
    let (a, b, has_bias) = (a as usize, b as usize, bias != 0);
    Ok(match code {
        0 => LayerSpec::Conv3x3 {
            in_channels: a,
            out_channels: b,
            has_bias,
        },
        1 => LayerSpec::Relu,
        2 => LayerSpec::Downsample2,
        3 => LayerSpec::Upsample2,
        4 => LayerSpec::GlobalAvgPool,
        5 => LayerSpec::Dense {
            in_features: a,
            out_features: b,
            has_bias,
        },
        6 => LayerSpec::L2Normalize,
        other => return Err(Error::Checkpoint(format!("unknown layer kind {other}"))),
    })
}

pub fn encode(nets: &[(&str, &Network)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for (name, net) in nets {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for layer in net.layers() {
            let (k, a, b, bias) = kind_code(layer);
            out.push(k);
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&b.to_le_bytes());
            out.push(bias);
        }
    }
    for (_, net) in nets {
        for p in net.params().iter() {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            for &v in &p.value {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
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
            return Err(Error::TruncatedPayload {
                context: "checkpoint".into(),
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Network)>> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::MalformedHeader("checkpoint magic".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut topologies = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("network name is not UTF-8".into()))?;
        let nlayers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(nlayers);
        for _ in 0..nlayers {
            let (k, a, b, bias) = (r.u8()?, r.u32()?, r.u32()?, r.u8()?);
            layers.push(layer_from_code(k, a, b, bias)?);
        }
        topologies.push((name, layers));
    }
    let mut nets = Vec::with_capacity(count);
    for (name, layers) in topologies {
        let learnable = layers.iter().filter(|l| l.param_layout().is_some()).count();
        let mut values = Vec::with_capacity(learnable);
        for _ in 0..learnable {
            let n = r.u32()? as usize;
            values.push((0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?);
        }
        nets.push((name, Network::from_parts(layers, values)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(nets)
}

pub fn save(nets: &[(&str, &Network)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(nets)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Network)>> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Removes the network called `name` from a decoded checkpoint.
pub fn take_named(nets: &mut Vec<(String, Network)>, name: &str) -> Result<Network> {
    let pos = nets
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no network '{name}'")))?;
    Ok(nets.remove(pos).1)
}
