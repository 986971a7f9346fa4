//! Binary checkpoint format.
//!
//! ```text
//! "EQLF"                      4 bytes
//! version                     u32 LE
//! tensor count                u32 LE
//! per tensor:
//!   name length               u16 LE
//!   name                      UTF-8
//!   rank                      u8
//!   dims                      u32 LE × rank
//!   values                    f64 LE × Π dims
//! CRC32 of all bytes above    u32 LE
//! ```
//!
//! A training checkpoint stores every parameter with its Adam moments, the
//! batch-norm running statistics, the normalization statistics, optimizer
//! and loop counters, the seed and the config hash. Strings (hashes) are
//! stored one byte per value.

use std::path::Path;

use thiserror::Error;

use crate::compute::{Activation, Adam, AdamConfig, Matrix, Parameterized, RngStream};
use crate::data::NormStats;
use crate::model::{EmbeddingConfig, LiftingModel, ModelConfig};

pub const MAGIC: &[u8; 4] = b"EQLF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("checkpoint does not match the configuration: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims,
            values,
        }
    }

    pub fn vector(name: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len() as u32;
        Self::new(name, vec![n], values)
    }

    pub fn matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self::new(name, vec![m.rows() as u32, m.cols() as u32], m.data().to_vec())
    }

    pub fn text(name: impl Into<String>, s: &str) -> Self {
        Self::vector(name, s.bytes().map(f64::from).collect())
    }

    fn as_text(&self) -> Result<String, CheckpointError> {
        let bytes: Vec<u8> = self.values.iter().map(|v| *v as u8).collect();
        String::from_utf8(bytes).map_err(|_| CheckpointError::SchemaMismatch(format!("{} is not text", self.name)))
    }
}

pub fn encode(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::CrcMismatch { stored, computed });
    }
    let mut c = Cursor { buf: body, pos: 4 };
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| CheckpointError::SchemaMismatch("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().map(|d| *d as usize).product();
        if n > (body.len() - c.pos) / 8 {
            return Err(CheckpointError::Truncated);
        }
        let values = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        out.push(Tensor { name, dims, values });
    }
    if c.pos != body.len() {
        return Err(CheckpointError::SchemaMismatch("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[Tensor]) -> Result<(), CheckpointError> {
    Ok(crate::io::write_atomic_bytes(path, &encode(tensors))?)
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>, CheckpointError> {
    decode(&std::fs::read(path)?)
}

/// Loop position and provenance stored alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub model: LiftingModel,
    pub adam: Adam,
    /// Next epoch and step to run.
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
    pub best_test_mpjpe: f64,
    pub config_hash: String,
    /// Dropout/sampling stream state, for callers that keep one.
    pub rng: RngStream,
}

fn activation_code(a: Activation) -> [f64; 2] {
    match a {
        Activation::LeakyRelu { slope } => [0.0, slope],
        Activation::Relu => [1.0, 0.0],
    }
}

impl TrainingState {
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let m = &self.model;
        let c = &m.config;
        let act = activation_code(c.activation);
        let mut t = vec![
            Tensor::vector(
                "meta.arch",
                vec![
                    c.hidden as f64,
                    c.embedding.m as f64,
                    c.embedding.norm_epsilon,
                    c.dropout,
                    act[0],
                    act[1],
                ],
            ),
            Tensor::vector(
                "meta.adam",
                vec![
                    self.adam.step as f64,
                    self.adam.config.beta1,
                    self.adam.config.beta2,
                    self.adam.config.eps,
                ],
            ),
            Tensor::vector(
                "meta.loop",
                vec![self.epoch as f64, self.step as f64, self.best_test_mpjpe],
            ),
            // u64 values are split into exact 32-bit halves.
            Tensor::vector("meta.seed", split_u64(self.seed).to_vec()),
            Tensor::vector(
                "meta.rng",
                [split_u64(self.rng.seed()), split_u64(self.rng.counter())].concat(),
            ),
            Tensor::text("meta.config_hash", &self.config_hash),
        ];
        for p in m.params() {
            t.push(Tensor::matrix(p.name.clone(), &p.value));
            t.push(Tensor::matrix(format!("{}.adam_m", p.name), &p.adam_m));
            t.push(Tensor::matrix(format!("{}.adam_v", p.name), &p.adam_v));
        }
        for bn in m.batch_norms() {
            let base = bn.gamma.name.trim_end_matches(".gamma");
            t.push(Tensor::vector(format!("{base}.running_mean"), bn.running_mean.clone()));
            t.push(Tensor::vector(format!("{base}.running_var"), bn.running_var.clone()));
        }
        if let Some(s) = &m.stats {
            t.push(Tensor::vector("stats.mean2d", s.mean2d.clone()));
            t.push(Tensor::vector("stats.std2d", s.std2d.clone()));
            t.push(Tensor::vector("stats.mean3d", s.mean3d.clone()));
            t.push(Tensor::vector("stats.std3d", s.std3d.clone()));
            t.push(Tensor::text("stats.fingerprint", &s.fingerprint));
        }
        t
    }

    /// Rebuilds the state. When `expected` is given, the stored
    /// architecture must match it.
    pub fn from_tensors(tensors: &[Tensor], expected: Option<&ModelConfig>) -> Result<Self, CheckpointError> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| CheckpointError::SchemaMismatch(format!("missing tensor {name}")))
        };
        let arch = fixed::<6>(find("meta.arch")?)?;
        let activation = match arch[4] as u8 {
            0 => Activation::LeakyRelu { slope: arch[5] },
            1 => Activation::Relu,
            k => return Err(CheckpointError::SchemaMismatch(format!("unknown activation code {k}"))),
        };
        let config = ModelConfig {
            hidden: arch[0] as usize,
            embedding: EmbeddingConfig {
                m: arch[1] as usize,
                norm_epsilon: arch[2],
            },
            dropout: arch[3],
            activation,
        };
        if let Some(e) = expected {
            if e.hidden != config.hidden || e.embedding.m != config.embedding.m {
                return Err(CheckpointError::SchemaMismatch(format!(
                    "checkpoint has hidden={} M={}, configuration has hidden={} M={}",
                    config.hidden, config.embedding.m, e.hidden, e.embedding.m
                )));
            }
            if e.activation != config.activation {
                return Err(CheckpointError::SchemaMismatch("activation differs".into()));
            }
        }
        let mut model = LiftingModel::new(config, &mut RngStream::new(0));
        for p in model.params_mut() {
            for (suffix, dst) in [("", &mut p.value), (".adam_m", &mut p.adam_m), (".adam_v", &mut p.adam_v)] {
                let name = format!("{}{suffix}", p.name);
                let t = find(&name)?;
                if t.dims != [dst.rows() as u32, dst.cols() as u32] {
                    return Err(CheckpointError::SchemaMismatch(format!(
                        "{name} has shape {:?}, expected {:?}",
                        t.dims,
                        dst.shape()
                    )));
                }
                dst.data_mut().copy_from_slice(&t.values);
            }
        }
        for bn in model.batch_norms_mut() {
            let base = bn.gamma.name.trim_end_matches(".gamma").to_string();
            let n = bn.features();
            for (suffix, dst) in [("running_mean", &mut bn.running_mean), ("running_var", &mut bn.running_var)] {
                let t = find(&format!("{base}.{suffix}"))?;
                if t.values.len() != n {
                    return Err(CheckpointError::SchemaMismatch(format!("{base}.{suffix} has wrong length")));
                }
                dst.copy_from_slice(&t.values);
            }
        }
        if tensors.iter().any(|t| t.name == "stats.mean2d") {
            model.stats = Some(NormStats {
                mean2d: find("stats.mean2d")?.values.clone(),
                std2d: find("stats.std2d")?.values.clone(),
                mean3d: find("stats.mean3d")?.values.clone(),
                std3d: find("stats.std3d")?.values.clone(),
                fingerprint: find("stats.fingerprint")?.as_text()?,
            });
        }
        let adam_t = fixed::<4>(find("meta.adam")?)?;
        let lp = fixed::<3>(find("meta.loop")?)?;
        let seed = fixed::<2>(find("meta.seed")?)?;
        let rng = fixed::<4>(find("meta.rng")?)?;
        Ok(Self {
            model,
            adam: Adam {
                config: AdamConfig {
                    beta1: adam_t[1],
                    beta2: adam_t[2],
                    eps: adam_t[3],
                },
                step: adam_t[0] as u64,
            },
            epoch: lp[0] as usize,
            step: lp[1] as usize,
            best_test_mpjpe: lp[2],
            seed: join_u64(seed[0], seed[1]),
            rng: RngStream::from_state(join_u64(rng[0], rng[1]), join_u64(rng[2], rng[3])),
            config_hash: find("meta.config_hash")?.as_text()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        save_tensors(path, &self.to_tensors())
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self, CheckpointError> {
        Self::from_tensors(&load_tensors(path)?, expected)
    }
}

fn fixed<const N: usize>(t: &Tensor) -> Result<[f64; N], CheckpointError> {
    t.values
        .as_slice()
        .try_into()
        .map_err(|_| CheckpointError::SchemaMismatch(format!("{} should hold {N} values", t.name)))
}

fn split_u64(v: u64) -> [f64; 2] {
    [(v >> 32) as f64, (v & 0xFFFF_FFFF) as f64]
}

fn join_u64(hi: f64, lo: f64) -> u64 {
    ((hi as u64) << 32) | (lo as u64)
}
