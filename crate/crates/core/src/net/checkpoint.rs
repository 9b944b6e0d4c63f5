//! Binary checkpoints: `TFPC`, u32 version, u32 header length, JSON header,
//! then every tensor as little-endian f32 in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::unet::{NetworkConfig, ParamTensor, ParameterSet, PredictionHead, UNet};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TFPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in f32 elements from the start of the payload.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: NetworkConfig,
    head: PredictionHead,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub head: PredictionHead,
    pub params: ParameterSet<f32>,
    /// Free-form run information (training config, seed, ...).
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len();
                e
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            head: self.head,
            tensors,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |reason: &str| Error::format(origin, reason);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing TFPC magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        let payload = &bytes[12 + hlen..];
        if payload.len() % 4 != 0 {
            return Err(bad("payload not a whole number of f32 values"));
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected = 0;
        for e in header.tensors {
            let len: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + len > floats.len() {
                return Err(bad(&format!("tensor {} outside payload", e.name)));
            }
            expected += len;
            tensors.push(ParamTensor {
                name: e.name,
                shape: e.shape,
                data: floats[e.offset..e.offset + len].to_vec(),
            });
        }
        if expected != floats.len() {
            return Err(bad("trailing payload bytes"));
        }
        let params = ParameterSet::new(tensors)?;
        UNet::new(header.config.clone(), header.head)?.check_parameters(&params)?;
        Ok(Checkpoint {
            config: header.config,
            head: header.head,
            params,
            metadata: header.metadata,
        })
    }

    /// Network described by this checkpoint.
    pub fn network(&self) -> Result<UNet> {
        UNet::new(self.config.clone(), self.head)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes, &path.display().to_string())
}
