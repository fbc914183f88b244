//! Mapping-network checkpoint file.
//!
//! Layout (little-endian): `"TAPSCKPT"`, version `u32`, network count `u32`;
//! per network: branch tag `u8`, activation slope `f64`, noise dim `u32`,
//! adapter layer count `u32`, total layer count `u32`, then per layer
//! `fan_in u32`, `fan_out u32`, `fan_in·fan_out` weights (row-major `f64`) and
//! `fan_out` biases (`f64`); finally the training-config digest as a
//! length-prefixed (`u32`) UTF-8 string.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::mapping::{Branch, Dense, MappingNetwork};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TAPSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const WHAT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub geometry: MappingNetwork,
    pub texture: MappingNetwork,
    pub config_digest: String,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn write_network(out: &mut Vec<u8>, net: &MappingNetwork) {
    out.push(net.branch.tag());
    out.extend_from_slice(&net.slope.to_le_bytes());
    put_u32(out, net.noise_dim);
    put_u32(out, net.adapter.len());
    put_u32(out, net.adapter.len() + net.trunk.len());
    for l in net.layers() {
        put_u32(out, l.weight.nrows());
        put_u32(out, l.weight.ncols());
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::at_offset(WHAT, self.pos as u64, format!("truncated {field}"))),
        }
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::at_offset(WHAT, self.pos as u64, "size overflow"))?;
        Ok(self
            .take(len, field)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn read_network(r: &mut Reader<'_>) -> Result<MappingNetwork> {
    let at = r.pos as u64;
    let branch = Branch::from_tag(r.u8("branch")?)
        .ok_or_else(|| Error::at_offset(WHAT, at, "unknown branch tag"))?;
    let slope = r.f64s(1, "slope")?[0];
    let noise_dim = r.u32("noise dim")?;
    let n_adapter = r.u32("adapter layer count")?;
    let n_layers = r.u32("layer count")?;
    if n_adapter == 0 || n_adapter >= n_layers {
        return Err(Error::at_offset(WHAT, r.pos as u64, "bad layer counts"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let at = r.pos as u64;
        let fan_in = r.u32("fan in")?;
        let fan_out = r.u32("fan out")?;
        let weight = r.f64s(fan_in * fan_out, "weights")?;
        let bias = r.f64s(fan_out, "biases")?;
        let weight = Array2::from_shape_vec((fan_in, fan_out), weight)
            .map_err(|e| Error::at_offset(WHAT, at, e.to_string()))?;
        layers.push(Dense {
            weight,
            bias: Array1::from(bias),
        });
    }
    let trunk = layers.split_off(n_adapter);
    Ok(MappingNetwork {
        branch,
        noise_dim,
        slope,
        adapter: layers,
        trunk,
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        put_u32(&mut out, 2);
        write_network(&mut out, &self.geometry);
        write_network(&mut out, &self.texture);
        put_u32(&mut out, self.config_digest.len());
        out.extend_from_slice(self.config_digest.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::at_offset(WHAT, 0, "bad magic, expected TAPSCKPT"));
        }
        let version = r.u32("version")?;
        if version as u32 != CHECKPOINT_VERSION {
            return Err(Error::at_offset(WHAT, 8, format!("unsupported version {version}")));
        }
        if r.u32("network count")? != 2 {
            return Err(Error::at_offset(WHAT, 12, "expected two networks"));
        }
        let a = read_network(&mut r)?;
        let b = read_network(&mut r)?;
        let (geometry, texture) = match (a.branch, b.branch) {
            (Branch::Geometry, Branch::Texture) => (a, b),
            (Branch::Texture, Branch::Geometry) => (b, a),
            _ => return Err(Error::at_offset(WHAT, 16, "need one geometry and one texture network")),
        };
        let len = r.u32("digest length")?;
        let at = r.pos as u64;
        let config_digest = std::str::from_utf8(r.take(len, "digest")?)
            .map_err(|_| Error::at_offset(WHAT, at, "digest is not UTF-8"))?
            .to_string();
        if r.pos != bytes.len() {
            return Err(Error::at_offset(WHAT, r.pos as u64, "trailing bytes"));
        }
        Ok(Self {
            geometry,
            texture,
            config_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
