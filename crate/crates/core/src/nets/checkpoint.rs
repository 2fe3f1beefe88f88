//! Binary checkpoint format.
//!
//! Layout: magic `ACFC`, `u32` version, `u64` header length, a JSON header,
//! then every parameter vector as little-endian `f64` in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NetworkArch, ParamVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ACFC";
const VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParams {
    pub name: String,
    pub arch: NetworkArch,
    #[serde(skip)]
    pub params: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub iteration: usize,
    pub problem: String,
    pub networks: Vec<NamedParams>,
    /// Free-form metadata, typically the resolved run configuration.
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&NamedParams> {
        self.networks.iter().find(|n| n.name == name)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    iteration: usize,
    problem: String,
    networks: Vec<HeaderEntry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    arch: NetworkArch,
    len: usize,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        format: "acflow-checkpoint".into(),
        version: VERSION,
        seed: ckpt.seed,
        iteration: ckpt.iteration,
        problem: ckpt.problem.clone(),
        networks: ckpt
            .networks
            .iter()
            .map(|n| HeaderEntry {
                name: n.name.clone(),
                arch: n.arch.clone(),
                len: n.params.len(),
            })
            .collect(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for n in &ckpt.networks {
        let mut buf = Vec::with_capacity(8 * n.params.len());
        for v in n.params.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(Error::Checkpoint("header too large".into()));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut networks = Vec::with_capacity(header.networks.len());
    for e in header.networks {
        let expected = super::Network::new(e.arch.clone())?.num_params();
        if expected != e.len {
            return Err(Error::Checkpoint(format!(
                "network {} stores {} parameters, architecture needs {}",
                e.name, e.len, expected
            )));
        }
        let mut buf = vec![0u8; 8 * e.len];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated parameters for {}", e.name)))?;
        let params = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect::<Vec<_>>();
        networks.push(NamedParams {
            name: e.name,
            arch: e.arch,
            params: params.into(),
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        seed: header.seed,
        iteration: header.iteration,
        problem: header.problem,
        networks,
        meta: header.meta,
    })
}
