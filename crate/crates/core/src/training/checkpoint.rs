//! Binary tensor container used for checkpoints and feature caches.
//!
//! Little-endian layout:
//! `"PTTS1"`, u32 version, u64 blob length, JSON blob, u64 step, u64 rng state, u32 tensor
//! count, then per tensor: u32 name length, UTF-8 name, u32 rank, rank × u64 dims, f32 payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 5] = b"PTTS1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("tensor {name:?} has shape {found:?}, config expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0:?} missing from checkpoint")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("config blob: {0}")]
    Config(String),
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config: serde_json::Value,
    pub step: u64,
    pub rng_state: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn encode(c: &Container) -> Vec<u8> {
    let blob = serde_json::to_vec(&c.config).expect("json value serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    out.extend_from_slice(&c.step.to_le_bytes());
    out.extend_from_slice(&c.rng_state.to_le_bytes());
    out.extend_from_slice(&(c.tensors.len() as u32).to_le_bytes());
    for (name, t) in &c.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated { what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Container, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic").map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let blob_len = r.u64("config length")? as usize;
    let blob = r.take(blob_len, "config blob")?;
    let config = serde_json::from_slice(blob).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let step = r.u64("step")?;
    let rng_state = r.u64("rng state")?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32("tensor name length")? as usize;
        let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
            .map_err(|_| CheckpointError::Config("tensor name is not UTF-8".into()))?;
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated { what: "tensor payload" })?, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data).expect("length matches shape")));
    }
    Ok(Container {
        config,
        step,
        rng_state,
        tensors,
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_container(path: impl AsRef<Path>, c: &Container) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&encode(c)).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container, CheckpointError> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| io_err(path, e))?)
}

/// What a checkpoint's config blob holds besides the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub seed: u64,
    /// Caller-supplied provenance (run configuration, feature stats, phoneme table, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn to_container<T: Scalar>(params: &ModelParams<T>, extra: serde_json::Value, step: u64) -> Container {
    let meta = CheckpointMeta {
        model: params.config.clone(),
        seed: params.seed,
        extra,
    };
    Container {
        config: serde_json::to_value(meta).expect("meta serializes"),
        step,
        rng_state: params.seed,
        tensors: params
            .names()
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| {
                let data = t.data().iter().map(|v| v.as_f32()).collect();
                (n.clone(), Tensor::new(t.shape().to_vec(), data).expect("same shape"))
            })
            .collect(),
    }
}

pub fn save_checkpoint<T: Scalar>(
    params: &ModelParams<T>,
    extra: serde_json::Value,
    step: u64,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    write_container(path, &to_container(params, extra, step))
}

/// Rebuilds parameters from a container. With `expected`, every tensor must match the shape
/// that config implies.
pub fn from_container<T: Scalar>(
    c: &Container,
    expected: Option<&ModelConfig>,
) -> Result<(ModelParams<T>, CheckpointMeta), CheckpointError> {
    let meta: CheckpointMeta = serde_json::from_value(c.config.clone()).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let config = expected.cloned().unwrap_or_else(|| meta.model.clone());
    let mut params = ModelParams::<T>::new(config, meta.seed).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let mut seen = vec![false; params.tensors.len()];
    for (name, t) in &c.tensors {
        let i = params
            .index_of(name)
            .ok_or_else(|| CheckpointError::UnexpectedTensor(name.clone()))?;
        if params.tensors[i].shape() != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: params.tensors[i].shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        let dst = params.tensors[i].data_mut();
        for (d, &s) in dst.iter_mut().zip(t.data()) {
            *d = T::of(s as f64);
        }
        seen[i] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CheckpointError::MissingTensor(params.names()[i].clone()));
    }
    Ok((params, meta))
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    expected: Option<&ModelConfig>,
) -> Result<(ModelParams<T>, CheckpointMeta), CheckpointError> {
    from_container(&read_container(path)?, expected)
}
