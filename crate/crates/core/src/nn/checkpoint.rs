//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GDIFCKPT"
//! version  u32
//! hlen     u64      byte length of the JSON header
//! header   hlen bytes of UTF-8 JSON
//! payload  f64 values, little-endian, addressed by the header's tensor table
//! ```
//!
//! The header carries the architecture, optimizer hyperparameters, training
//! step, seed lineage and a table of named tensors with explicit shapes and
//! element offsets into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Architecture, Mlp, TensorSpec};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GDIFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 8 + 4 + 8;

/// Denoiser parameters plus everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserCheckpoint {
    pub net: Mlp,
    pub adam: AdamState,
    pub train_step: u64,
    /// Seeds that produced this state, oldest first.
    pub seed_lineage: Vec<u64>,
}

impl DenoiserCheckpoint {
    pub fn new(net: Mlp, learning_rate: f64, seed_lineage: Vec<u64>) -> Self {
        let adam = AdamState::new(net.num_params(), learning_rate);
        Self {
            net,
            adam,
            train_step: 0,
            seed_lineage,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    train_step: u64,
    seed_lineage: Vec<u64>,
    adam: AdamState,
    tensors: Vec<TensorSpec>,
}

const FIRST_MOMENT: &str = "adam.first_moment";
const SECOND_MOMENT: &str = "adam.second_moment";

pub fn save_checkpoint(ckpt: &DenoiserCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn to_bytes(ckpt: &DenoiserCheckpoint) -> Result<Vec<u8>> {
    let p = ckpt.net.num_params();
    let mut tensors = ckpt.net.tensor_specs();
    tensors.push(TensorSpec {
        name: FIRST_MOMENT.into(),
        shape: vec![p],
        offset: p,
    });
    tensors.push(TensorSpec {
        name: SECOND_MOMENT.into(),
        shape: vec![p],
        offset: 2 * p,
    });
    let header = Header {
        architecture: ckpt.net.architecture().clone(),
        train_step: ckpt.train_step,
        seed_lineage: ckpt.seed_lineage.clone(),
        adam: ckpt.adam.clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + 3 * p * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for values in [
        ckpt.net.params(),
        &ckpt.adam.first_moment,
        &ckpt.adam.second_moment,
    ] {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn from_bytes(bytes: &[u8]) -> Result<DenoiserCheckpoint> {
    if bytes.len() < PREFIX_LEN {
        return Err(Error::format("checkpoint shorter than its fixed prefix"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[PREFIX_LEN..];
    if hlen > body.len() as u64 {
        return Err(Error::format("checkpoint truncated inside header"));
    }
    let (header, payload) = body.split_at(hlen as usize);
    let header: Header =
        serde_json::from_slice(header).map_err(|e| Error::format(format!("bad header: {e}")))?;
    if payload.len() % 8 != 0 {
        return Err(Error::format("payload is not a whole number of f64 values"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let arch = header.architecture;
    let p = arch.num_params();
    let mut expected = Mlp::zeros(arch.clone())?.tensor_specs();
    expected.push(TensorSpec {
        name: FIRST_MOMENT.into(),
        shape: vec![p],
        offset: p,
    });
    expected.push(TensorSpec {
        name: SECOND_MOMENT.into(),
        shape: vec![p],
        offset: 2 * p,
    });
    if header.tensors != expected {
        return Err(Error::format(
            "tensor table does not match the declared architecture",
        ));
    }
    if values.len() != 3 * p {
        return Err(Error::format(format!(
            "payload holds {} values, tensor table needs {}",
            values.len(),
            3 * p
        )));
    }
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(format!(
            "non-finite value at payload index {pos}"
        )));
    }
    let mut adam = header.adam;
    adam.first_moment = values[p..2 * p].to_vec();
    adam.second_moment = values[2 * p..].to_vec();
    Ok(DenoiserCheckpoint {
        net: Mlp::from_params(arch, values[..p].to_vec())?,
        adam,
        train_step: header.train_step,
        seed_lineage: header.seed_lineage,
    })
}
