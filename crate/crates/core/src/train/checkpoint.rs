//! Checkpoint file: magic, version, JSON header, raw little-endian `f32` payload, SHA-256 trailer.
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::Adam;
use crate::model::{Model, ModelConfig};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"RTEV";
const DIGEST_LEN: usize = 32;
const PREAMBLE: usize = 4 + 4 + 8;

/// Which training phase produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Pretrain,
    Main,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: String,
    pub stage: Stage,
    /// Completed iterations of `stage`.
    pub iteration: u64,
    /// Run seed; per-step randomness is derived from it and the iteration counter.
    pub seed: u64,
    pub model: Model<f32>,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    stage: Stage,
    iteration: u64,
    seed: u64,
    model: ModelConfig,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Freshly initialized weights.
    pub fn initial(config: ModelConfig, seed: u64, config_hash: String) -> Result<Self> {
        Ok(Self {
            config_hash,
            stage: Stage::Init,
            iteration: 0,
            seed,
            model: Model::init(config, seed)?,
            optimizer: None,
        })
    }

    pub fn ensure_config(&self, expected_hash: &str) -> Result<()> {
        if self.config_hash == expected_hash {
            Ok(())
        } else {
            Err(Error::ConfigMismatch {
                found: self.config_hash.clone(),
                expected: expected_hash.to_string(),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = &self.model.params;
        let header = Header {
            config_hash: self.config_hash.clone(),
            stage: self.stage,
            iteration: self.iteration,
            seed: self.seed,
            model: self.model.config().clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            tensors: params
                .iter()
                .map(|(_, name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 12 * params.num_scalars() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f32]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for (_, _, t) in params.iter() {
            put(t.data());
        }
        if let Some(opt) = &self.optimizer {
            opt.m.iter().for_each(|m| put(m));
            opt.v.iter().for_each(|v| put(v));
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE + DIGEST_LEN {
            return Err(Error::Corrupt(format!("file is truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt("checksum mismatch; the file is truncated or damaged".into()));
        }
        let header_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let header_end = PREAMBLE
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Corrupt("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[PREAMBLE..header_end])
            .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
        let mut model = Model::<f32>::init(header.model, header.seed)?;
        let mut payload = body[header_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        if (body.len() - header_end) % 4 != 0 {
            return Err(Error::Corrupt("payload is not a whole number of floats".into()));
        }
        let ids: Vec<_> = model.params.ids().collect();
        if ids.len() != header.tensors.len() {
            return Err(Error::Corrupt(format!(
                "{} tensors stored, architecture has {}",
                header.tensors.len(),
                ids.len()
            )));
        }
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let v: Vec<f32> = payload.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(Error::Corrupt("payload shorter than header announces".into()))
            }
        };
        for (id, entry) in ids.iter().zip(&header.tensors) {
            let expected = model.params.name(*id);
            if expected != entry.name {
                return Err(Error::Corrupt(format!("tensor `{}` found where `{expected}` was expected", entry.name)));
            }
            let t = model.params.get_mut(*id);
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Corrupt(format!("tensor `{}` has shape {:?}", entry.name, entry.shape)));
            }
            let n = t.numel();
            t.data_mut().copy_from_slice(&take(n)?);
        }
        let optimizer = match header.optimizer_step {
            None => None,
            Some(step) => {
                let sizes: Vec<usize> = ids.iter().map(|id| model.params.get(*id).numel()).collect();
                let m = sizes.iter().map(|&n| take(n)).collect::<Result<_>>()?;
                let v = sizes.iter().map(|&n| take(n)).collect::<Result<_>>()?;
                Some(Adam { step, m, v })
            }
        };
        if payload.next().is_some() {
            return Err(Error::Corrupt("trailing data after payload".into()));
        }
        Ok(Self {
            config_hash: header.config_hash,
            stage: header.stage,
            iteration: header.iteration,
            seed: header.seed,
            model,
            optimizer,
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_os_string();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    c.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
