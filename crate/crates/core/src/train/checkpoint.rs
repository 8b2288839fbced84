//! Checkpoint files.
//!
//! ```text
//! "SNCK" | version u32 | architecture hash u64
//! meta length u32 | meta JSON (architecture, time steps, counters)
//! 3 sections (parameters, buffers, velocities):
//!     count u32, then per entry: name length u32 | name | tensor
//! ```
//! All integers little-endian; tensors use the standalone tensor format.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::network::{Architecture, NamedTensor, Network};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    /// Time steps used in training.
    pub time_steps: usize,
    /// Optimiser steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
    pub velocity: Vec<NamedTensor>,
}

fn write_section(out: &mut Vec<u8>, items: &[NamedTensor]) {
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for it in items {
        out.extend_from_slice(&(it.name.len() as u32).to_le_bytes());
        out.extend_from_slice(it.name.as_bytes());
        it.value.write_to(out).expect("writing to a Vec cannot fail");
    }
}

fn read_u32(r: &mut &[u8], what: &str) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| format!("truncated {what}"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_section(r: &mut &[u8], what: &str) -> std::result::Result<Vec<NamedTensor>, String> {
    let n = read_u32(r, what)? as usize;
    let mut out = Vec::with_capacity(n.min(4096));
    for i in 0..n {
        let len = read_u32(r, what)? as usize;
        if r.len() < len {
            return Err(format!("truncated {what} entry {i} name"));
        }
        let name = std::str::from_utf8(&r[..len])
            .map_err(|_| format!("{what} entry {i}: name is not UTF-8"))?
            .to_string();
        *r = &r[len..];
        let value = Tensor::read_from(r).map_err(|e| format!("{what} {name}: {e}"))?;
        out.push(NamedTensor { name, value });
    }
    Ok(out)
}

impl Checkpoint {
    pub fn from_network(net: &Network, velocity: &[Tensor], time_steps: usize, step: u64, epoch: u64) -> Self {
        let named = |items: Vec<(String, Tensor)>| -> Vec<NamedTensor> {
            items
                .into_iter()
                .map(|(name, value)| NamedTensor { name, value })
                .collect()
        };
        Self {
            meta: CheckpointMeta {
                architecture: net.architecture().clone(),
                time_steps,
                step,
                epoch,
            },
            params: named(net.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()),
            buffers: net.buffers.clone(),
            velocity: named(
                net.params
                    .iter()
                    .zip(velocity)
                    .map(|(p, v)| (p.name.clone(), v.clone()))
                    .collect(),
            ),
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_named(self.meta.architecture.clone(), &self.params, &self.buffers)
    }

    /// Velocities aligned with `net.params`.
    pub fn velocity_for(&self, net: &Network) -> Result<Vec<Tensor>> {
        net.params
            .iter()
            .map(|p| {
                self.velocity
                    .iter()
                    .find(|v| v.name == p.name && v.value.shape() == p.value.shape())
                    .map(|v| v.value.clone())
                    .ok_or_else(|| Error::Invalid(format!("checkpoint lacks velocity for {}", p.name)))
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.meta.architecture.hash().to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("checkpoint meta serialises");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        write_section(&mut out, &self.params);
        write_section(&mut out, &self.buffers);
        write_section(&mut out, &self.velocity);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| "truncated header")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = read_u32(&mut r, "header")?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let mut hash = [0u8; 8];
        r.read_exact(&mut hash).map_err(|_| "truncated header")?;
        let hash = u64::from_le_bytes(hash);
        let meta_len = read_u32(&mut r, "meta")? as usize;
        if r.len() < meta_len {
            return Err("truncated meta".into());
        }
        let meta: CheckpointMeta =
            serde_json::from_slice(&r[..meta_len]).map_err(|e| format!("meta: {e}"))?;
        r = &r[meta_len..];
        if meta.architecture.hash() != hash {
            return Err("architecture hash does not match the stored architecture".into());
        }
        let params = read_section(&mut r, "parameters")?;
        let buffers = read_section(&mut r, "buffers")?;
        let velocity = read_section(&mut r, "velocities")?;
        if !r.is_empty() {
            return Err("trailing bytes after checkpoint".into());
        }
        Ok(Self {
            meta,
            params,
            buffers,
            velocity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}
