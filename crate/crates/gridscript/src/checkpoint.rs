//! Binary checkpoints: magic, training position, config identity hash, a
//! tensor manifest (name, group, dtype, shape, byte offset), then one flat
//! little-endian f32 payload.
//!
//! Optimizer state rides along as tensors in a reserved group so resumed
//! runs continue bit-exactly. Loading validates every length and offset
//! before touching the payload; installing validates names and shapes
//! against the live parameter store.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::Stage;
use crate::params::{ParamGroup, ParamStore};

pub const MAGIC: [u8; 8] = *b"GSCKPT01";
/// Manifest group byte for optimizer state tensors.
const GROUP_OPT: u8 = 255;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: magic bytes are {got:02x?}")]
    BadMagic { got: [u8; 8] },
    #[error("truncated checkpoint while reading {what}")]
    Truncated { what: &'static str },
    #[error("unknown {what} code {code}")]
    BadCode { what: &'static str, code: u8 },
    #[error("tensor {name} points outside the payload")]
    BadOffset { name: String },
    #[error("checkpoint was built for config {found}, current config is {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("checkpoint tensor {name} has shape {found:?}, the store expects {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub group: Option<ParamGroup>,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub step: u64,
    pub config_hash: String,
    pub params: Vec<Tensor>,
    pub opt_state: Vec<Tensor>,
}

fn stage_code(stage: Stage) -> u8 {
    match stage {
        Stage::Pair => 0,
        Stage::Triple => 1,
        Stage::E2e => 2,
    }
}

fn stage_from(code: u8) -> Result<Stage, CheckpointError> {
    match code {
        0 => Ok(Stage::Pair),
        1 => Ok(Stage::Triple),
        2 => Ok(Stage::E2e),
        code => Err(CheckpointError::BadCode { what: "stage", code }),
    }
}

fn group_code(group: Option<ParamGroup>) -> u8 {
    match group {
        None => GROUP_OPT,
        Some(g) => ParamGroup::ALL.iter().position(|&x| x == g).expect("listed") as u8,
    }
}

fn group_from(code: u8) -> Result<Option<ParamGroup>, CheckpointError> {
    if code == GROUP_OPT {
        return Ok(None);
    }
    ParamGroup::ALL
        .get(code as usize)
        .copied()
        .map(Some)
        .ok_or(CheckpointError::BadCode { what: "group", code })
}

impl Checkpoint {
    pub fn from_store(
        stage: Stage,
        step: u64,
        config_hash: String,
        store: &ParamStore,
        opt_state: Vec<Tensor>,
    ) -> Checkpoint {
        let params = store
            .iter()
            .map(|p| Tensor {
                name: p.name.clone(),
                group: Some(p.group),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect();
        Checkpoint { stage, step, config_hash, params, opt_state }
    }

    /// Copies parameter tensors into the store, by name, shape-checked.
    /// Store entries absent from the checkpoint are an error, as are
    /// checkpoint params absent from the store.
    pub fn install(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        for p in store.iter() {
            let t = self
                .params
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| CheckpointError::MissingTensor(p.name.clone()))?;
            if t.shape != p.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.shape.clone(),
                    found: t.shape.clone(),
                });
            }
        }
        let store_names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
        if let Some(extra) = self.params.iter().find(|t| !store_names.contains(&t.name)) {
            return Err(CheckpointError::MissingTensor(format!("{} (present in file, not in store)", extra.name)));
        }
        for t in &self.params {
            store.set_data(&t.name, t.data.clone()).expect("name checked above");
        }
        Ok(())
    }

    pub fn verify_hash(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.config_hash != expected {
            return Err(CheckpointError::HashMismatch {
                expected: expected.to_string(),
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }
}

// ── writing ──

fn put_bytes(out: &mut Vec<u8>, tensor: &Tensor, payload: &mut Vec<u8>) {
    let name = tensor.name.as_bytes();
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.push(group_code(tensor.group));
    out.push(DTYPE_F32);
    out.push(tensor.shape.len() as u8);
    for &d in &tensor.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for &v in &tensor.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut head = Vec::new();
    head.extend_from_slice(&MAGIC);
    head.push(stage_code(ckpt.stage));
    head.extend_from_slice(&ckpt.step.to_le_bytes());
    let hash = ckpt.config_hash.as_bytes();
    head.extend_from_slice(&(hash.len() as u16).to_le_bytes());
    head.extend_from_slice(hash);
    let all: Vec<&Tensor> = ckpt.params.iter().chain(&ckpt.opt_state).collect();
    head.extend_from_slice(&(all.len() as u32).to_le_bytes());
    let mut payload = Vec::new();
    for t in &all {
        put_bytes(&mut head, t, &mut payload);
    }
    head.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(&head).map_err(|e| CheckpointError::Io { path: path.to_path_buf(), source: e })?;
    w.write_all(&payload).map_err(|e| CheckpointError::Io { path: path.to_path_buf(), source: e })?;
    w.flush().map_err(|e| CheckpointError::Io { path: path.to_path_buf(), source: e })
}

// ── reading ──

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { what });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("len 2")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("len 4")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("len 8")))
    }
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    BufReader::new(File::open(path).map_err(io_err)?)
        .read_to_end(&mut bytes)
        .map_err(|e| CheckpointError::Io { path: path.to_path_buf(), source: e })?;
    let mut c = Cursor { bytes: &bytes, at: 0 };

    let magic: [u8; 8] = c.take(8, "magic")?.try_into().expect("len 8");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { got: magic });
    }
    let stage = stage_from(c.u8("stage")?)?;
    let step = c.u64("step")?;
    let hash_len = c.u16("hash length")? as usize;
    let config_hash = String::from_utf8(c.take(hash_len, "hash")?.to_vec())
        .map_err(|_| CheckpointError::Truncated { what: "hash utf8" })?;
    let count = c.u32("tensor count")? as usize;

    struct Entry {
        name: String,
        group: Option<ParamGroup>,
        shape: Vec<usize>,
        offset: u64,
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name = String::from_utf8(c.take(name_len, "name")?.to_vec())
            .map_err(|_| CheckpointError::Truncated { what: "name utf8" })?;
        let group = group_from(c.u8("group")?)?;
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::BadCode { what: "dtype", code: dtype });
        }
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("dim")? as usize);
        }
        let offset = c.u64("offset")?;
        entries.push(Entry { name, group, shape, offset });
    }
    let payload_len = c.u64("payload length")? as usize;
    let payload = c.take(payload_len, "payload")?;

    let mut params = Vec::new();
    let mut opt_state = Vec::new();
    for e in entries {
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + numel * 4;
        if end > payload.len() {
            return Err(CheckpointError::BadOffset { name: e.name });
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("len 4")))
            .collect();
        let tensor = Tensor { name: e.name, group: e.group, shape: e.shape, data };
        if tensor.group.is_some() {
            params.push(tensor);
        } else {
            opt_state.push(tensor);
        }
    }
    Ok(Checkpoint { stage, step, config_hash, params, opt_state })
}
