//! Versioned checkpoint container.
//!
//! Layout: magic `GAFXCKPT`, u32 version, config JSON, stats JSON, the
//! training RNG state (ChaCha8 seed + word position), then named tensors
//! with dtype/shape/little-endian payload. Loading rebuilds the model from
//! the embedded config — which overrides any caller config, with a warning
//! — and overwrites its parameters by name.

use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{Linear, StateDict};
use crate::tensor::{Dtype, Element};

use super::pretrain::PretrainPipelineConfig;
use super::{PipelineConfig, PipelineModel, Result, TrainError};

const MAGIC: &[u8; 8] = b"GAFXCKPT";
const VERSION: u32 = 1;

/// What kind of model a checkpoint holds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckpointConfig {
    Classify(PipelineConfig),
    Pretrain(PretrainPipelineConfig),
}

/// Normalization statistics that ride along with the weights; pretraining
/// stores the corpus min/max of its target maps here.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointStats {
    pub pretrain_min: Option<f32>,
    pub pretrain_max: Option<f32>,
}

/// Raw parsed checkpoint, before any model is built.
pub struct RawCheckpoint {
    pub config: CheckpointConfig,
    pub stats: CheckpointStats,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub tensors: Vec<RawTensor>,
}

pub struct RawTensor {
    pub name: String,
    pub dtype: u8,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl RawCheckpoint {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(format!("integrity error: {}", msg.into()))
}

pub fn save_checkpoint<E: Element>(
    path: impl AsRef<Path>,
    config: &CheckpointConfig,
    stats: &CheckpointStats,
    rng: &ChaCha8Rng,
    state: &StateDict<E>,
) -> Result<()> {
    let cfg_json = serde_json::to_vec(config)?;
    let stats_json = serde_json::to_vec(stats)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&cfg_json);
    bytes.extend_from_slice(&(stats_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&stats_json);
    bytes.extend_from_slice(&rng.get_seed());
    bytes.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    bytes.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for (name, tensor, trainable) in state {
        let name_bytes = name.as_bytes();
        bytes.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        bytes.extend_from_slice(name_bytes);
        bytes.push(E::DTYPE.code());
        bytes.push(u8::from(*trainable));
        bytes.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let values = tensor.values();
        let payload_len = match E::DTYPE {
            Dtype::F32 => values.len() * 4,
            Dtype::F64 => values.len() * 8,
        };
        bytes.extend_from_slice(&(payload_len as u64).to_le_bytes());
        for v in values.iter() {
            match E::DTYPE {
                Dtype::F32 => bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                Dtype::F64 => bytes.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<RawCheckpoint> {
    let bytes = fs::read(path.as_ref())?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unknown checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let config: CheckpointConfig = serde_json::from_slice(r.take(cfg_len)?)?;
    let stats_len = r.u32()? as usize;
    let stats: CheckpointStats = serde_json::from_slice(r.take(stats_len)?)?;
    let rng_seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let rng_word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| corrupt("tensor name not utf-8"))?;
        let dtype = r.take(1)?[0];
        let trainable = r.take(1)?[0] != 0;
        let ndim = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let payload_len = r.u64()? as usize;
        let payload = r.take(payload_len)?.to_vec();
        tensors.push(RawTensor {
            name,
            dtype,
            trainable,
            shape,
            payload,
        });
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after the last tensor"));
    }
    Ok(RawCheckpoint {
        config,
        stats,
        rng_seed,
        rng_word_pos,
        tensors,
    })
}

/// Overwrites `state` in place from raw tensors, by name. Every entry must
/// be present with matching dtype and shape.
pub fn apply_state<E: Element>(state: &StateDict<E>, raw: &[RawTensor]) -> Result<()> {
    for (name, tensor, _) in state {
        let r = raw
            .iter()
            .find(|r| &r.name == name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if r.dtype != E::DTYPE.code() {
            return Err(corrupt(format!("tensor {name} has dtype code {}", r.dtype)));
        }
        if r.shape != tensor.shape() {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, model wants {:?}",
                r.shape,
                tensor.shape()
            )));
        }
        let values: Vec<E> = match E::DTYPE {
            Dtype::F32 => {
                if r.payload.len() != tensor.numel() * 4 {
                    return Err(corrupt(format!("tensor {name} payload length")));
                }
                r.payload
                    .chunks_exact(4)
                    .map(|b| E::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                    .collect()
            }
            Dtype::F64 => {
                if r.payload.len() != tensor.numel() * 8 {
                    return Err(corrupt(format!("tensor {name} payload length")));
                }
                r.payload
                    .chunks_exact(8)
                    .map(|b| E::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                    .collect()
            }
        };
        tensor.set_data(values)?;
    }
    Ok(())
}

/// Loads a classify checkpoint. The embedded config wins; if the caller
/// passed a different one, a warning is returned alongside.
pub fn load_classify_checkpoint<E: Element>(
    path: impl AsRef<Path>,
    caller: Option<&PipelineConfig>,
) -> Result<(PipelineModel<E>, CheckpointStats, Vec<String>)> {
    let raw = read_checkpoint(path)?;
    let config = match raw.config {
        CheckpointConfig::Classify(c) => c,
        CheckpointConfig::Pretrain(_) => {
            return Err(TrainError::Checkpoint(
                "expected a classify checkpoint, found a pretrain one".into(),
            ))
        }
    };
    let mut warnings = Vec::new();
    if let Some(c) = caller {
        if *c != config {
            warnings.push(
                "caller config differs from the checkpoint; using the checkpoint's".to_string(),
            );
        }
    }
    let model = PipelineModel::new(config)?;
    apply_state(&model.state(), &raw.tensors)?;
    Ok((model, raw.stats, warnings))
}

/// Loads a pretrain checkpoint: extractor plus the per-frame head.
pub fn load_pretrain_checkpoint<E: Element>(
    path: impl AsRef<Path>,
) -> Result<(
    crate::extractors::Extractor<E>,
    Linear<E>,
    CheckpointStats,
    PretrainPipelineConfig,
)> {
    let raw = read_checkpoint(path)?;
    let config = match raw.config {
        CheckpointConfig::Pretrain(c) => c,
        CheckpointConfig::Classify(_) => {
            return Err(TrainError::Checkpoint(
                "expected a pretrain checkpoint, found a classify one".into(),
            ))
        }
    };
    let (extractor, head) = super::pretrain::build_pretrain_model::<E>(&config)?;
    let mut state = StateDict::new();
    extractor.state_into("extractor", &mut state);
    head.state_into("head", &mut state);
    apply_state(&state, &raw.tensors)?;
    Ok((extractor, head, raw.stats, config))
}
