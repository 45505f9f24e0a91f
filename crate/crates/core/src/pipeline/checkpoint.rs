//! Checkpoint files: a named-tensor archive plus a JSON sidecar
//! (`<path>.json`) holding counters, the configuration and the RNG state.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::archive::{decode_archive, encode_archive, verify_manifest, NamedTensor};
use crate::model::{ModelConfig, Network, ParamSpec, ParamStore, ENCODER_PREFIX};

pub const FORMAT_VERSION: u32 = 1;

const STUDENT: &str = "student/";
const TEACHER: &str = "teacher/";
const MOMENT1: &str = "optim.m/";
const MOMENT2: &str = "optim.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

/// Everything needed to continue a run bit-identically. Random streams are
/// keyed by `(seed, step)`, so the seed and step counter are the RNG state.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub step: u64,
    pub opt_step: u64,
    pub epoch: usize,
    pub student: Vec<NamedTensor>,
    pub teacher: Vec<NamedTensor>,
    pub optimizer: OptimizerState,
    pub ema_momentum: f64,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl CheckpointRecord {
    pub fn student_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::default();
        for t in &self.student {
            let tensor = candle_core::Tensor::from_slice(&t.data, t.shape.as_slice(), &candle_core::Device::Cpu)?;
            store.insert(&t.name, tensor)?;
        }
        Ok(store)
    }

    /// The student network described by this record.
    pub fn network(&self) -> Result<(Network, ParamStore)> {
        let store = self.student_store()?;
        Ok((Network::from_store(&self.config.model, &store)?, store))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    step: u64,
    opt_step: u64,
    epoch: usize,
    optimizer_t: u64,
    /// Bit pattern, so the value survives JSON exactly.
    ema_momentum_bits: u64,
    rng_state: RngState,
    config_toml: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    next_step: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = {
        let mut s = path.as_os_str().to_owned();
        s.push(".tmp");
        PathBuf::from(s)
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn prefixed<'a>(prefix: &str, tensors: &'a [NamedTensor]) -> impl Iterator<Item = NamedTensor> + 'a {
    let prefix = prefix.to_string();
    tensors
        .iter()
        .map(move |t| NamedTensor::new(format!("{prefix}{}", t.name), t.shape.clone(), t.data.clone()))
}

pub fn save_checkpoint(record: &CheckpointRecord, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tensors: Vec<NamedTensor> = prefixed(STUDENT, &record.student)
        .chain(prefixed(TEACHER, &record.teacher))
        .chain(prefixed(MOMENT1, &record.optimizer.m))
        .chain(prefixed(MOMENT2, &record.optimizer.v))
        .collect();
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        step: record.step,
        opt_step: record.opt_step,
        epoch: record.epoch,
        optimizer_t: record.optimizer.t,
        ema_momentum_bits: record.ema_momentum.to_bits(),
        rng_state: RngState {
            seed: record.seed,
            next_step: record.step,
        },
        config_toml: record.config.to_toml(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_atomic(path, &encode_archive(&tensors)?)?;
    write_atomic(&sidecar_path(path), &json)
}

/// Loads a checkpoint and checks it against its own recorded configuration.
pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    load_inner(path, None)
}

/// Loads a checkpoint that must match `model`, naming the first tensor that
/// differs in name or shape.
pub fn load_checkpoint_expecting(path: &Path, model: &ModelConfig) -> Result<CheckpointRecord> {
    load_inner(path, Some(model))
}

fn load_inner(path: &Path, expected: Option<&ModelConfig>) -> Result<CheckpointRecord> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let side_path = sidecar_path(path);
    let side_bytes = std::fs::read(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_slice(&side_bytes).map_err(|e| fail(format!("metadata: {e}")))?;
    if side.format_version != FORMAT_VERSION {
        return Err(fail(format!(
            "format version {} is not the supported {FORMAT_VERSION}",
            side.format_version
        )));
    }
    let config = ExperimentConfig::from_toml_str(&side.config_toml, &[]).map_err(|e| fail(format!("config: {e}")))?;
    let tensors = decode_archive(&bytes).map_err(fail)?;

    let model = expected.unwrap_or(&config.model);
    let specs = Network::param_specs(model)?;
    let encoder_specs: Vec<ParamSpec> = specs.iter().filter(|s| s.name.starts_with(ENCODER_PREFIX)).cloned().collect();
    let section = |prefix: &str| -> Vec<NamedTensor> {
        tensors
            .iter()
            .filter_map(|t| {
                t.name
                    .strip_prefix(prefix)
                    .map(|n| NamedTensor::new(n, t.shape.clone(), t.data.clone()))
            })
            .collect()
    };
    let (student, teacher, m, v) = (section(STUDENT), section(TEACHER), section(MOMENT1), section(MOMENT2));
    if student.len() + teacher.len() + m.len() + v.len() != tensors.len() {
        return Err(fail("archive holds tensors outside the known sections".into()));
    }
    for (name, part, want) in [
        (STUDENT, &student, &specs),
        (TEACHER, &teacher, &encoder_specs),
        (MOMENT1, &m, &specs),
        (MOMENT2, &v, &specs),
    ] {
        verify_manifest(want, part).map_err(|diff| fail(format!("{name} {diff}")))?;
    }
    Ok(CheckpointRecord {
        step: side.step,
        opt_step: side.opt_step,
        epoch: side.epoch,
        student,
        teacher,
        optimizer: OptimizerState {
            t: side.optimizer_t,
            m,
            v,
        },
        ema_momentum: f64::from_bits(side.ema_momentum_bits),
        seed: side.rng_state.seed,
        config,
    })
}
