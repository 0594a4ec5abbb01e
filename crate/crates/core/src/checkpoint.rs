//! Portable checkpoint files.
//!
//! ```text
//! b"IMRG1" | u64 LE header length | UTF-8 JSON header | payload
//! ```
//!
//! The header lists every tensor as `{name, dtype: "f32", shape, offset, length}`
//! with offsets relative to the payload start, ascending and contiguous, and
//! carries a `trailer` object echoing the configs plus resume progress. The
//! payload is the concatenation of little-endian `f32` values.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::MergeConfig;
use crate::model::{ArchConfig, Model};
use crate::rng::Purpose;
use crate::tensor::Tensor;
use crate::train::{TrainConfig, TrainLog, TrainState};

pub const MAGIC: &[u8; 5] = b"IMRG1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamPosition {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub next_epoch: usize,
    pub log: TrainLog,
    pub has_best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trailer {
    pub arch: ArchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge: Option<MergeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<Progress>,
    /// Where each random stream resumes. Streams are re-keyed per epoch, so at
    /// an epoch boundary every position is the start of the next epoch's stream.
    #[serde(default)]
    pub rng: BTreeMap<String, StreamPosition>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<TensorEntry>,
    trailer: serde_json::Value,
}

/// Writes `tensors` and `trailer` atomically (temp file, then rename).
pub fn write_checkpoint(
    path: &Path,
    tensors: &[(String, &Tensor)],
    trailer: &serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        let length = 4 * t.len() as u64;
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        trailer: trailer.clone(),
    })?;
    let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header.len() + offset as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = temp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Reads and validates a checkpoint file.
pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let bytes = fs::read(path)?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::CorruptHeader("missing header length".into()));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
    if header_len == 0 {
        return Err(Error::CorruptHeader("header length is zero".into()));
    }
    let rest = &rest[8..];
    if header_len > rest.len() as u64 {
        return Err(Error::CorruptHeader(format!(
            "header length {header_len} exceeds file size"
        )));
    }
    let (header_bytes, payload) = rest.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::CorruptHeader(e.to_string()))?;

    let mut names = HashSet::new();
    let mut expected_end = 0u64;
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(Error::UnknownDtype(e.dtype.clone()));
        }
        if !names.insert(e.name.as_str()) {
            return Err(Error::CorruptHeader(format!("duplicate tensor `{}`", e.name)));
        }
        let numel: usize = e.shape.iter().product();
        if e.shape.iter().any(|&d| d == 0) || e.length != 4 * numel as u64 {
            return Err(Error::CorruptHeader(format!(
                "tensor `{}`: length {} does not match shape {:?}",
                e.name, e.length, e.shape
            )));
        }
        if e.offset < expected_end {
            return Err(Error::OffsetOverlap(e.name.clone()));
        }
        if e.offset > expected_end {
            return Err(Error::CorruptHeader(format!(
                "gap before tensor `{}` at offset {}",
                e.name, e.offset
            )));
        }
        expected_end = e.offset + e.length;
    }
    let actual = payload.len() as u64;
    if actual < expected_end {
        return Err(Error::Truncated {
            expected: expected_end,
            actual,
        });
    }
    if actual > expected_end {
        return Err(Error::CorruptHeader(format!(
            "{} trailing payload bytes",
            actual - expected_end
        )));
    }
    let tensors = header
        .tensors
        .into_iter()
        .map(|e| {
            let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok((e.name, Tensor::new(e.shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tensors, header.trailer))
}

fn stream_positions(train: &TrainConfig, next_epoch: usize) -> BTreeMap<String, StreamPosition> {
    let pos = |seed: u64, purpose: Purpose, epoch: u64| StreamPosition {
        seed,
        stream: ((purpose as u64) << 32) | epoch,
        word_pos: 0,
    };
    let e = next_epoch as u64;
    let mut map = BTreeMap::new();
    map.insert("shuffle".into(), pos(train.seed, Purpose::Shuffle, e));
    map.insert("augment".into(), pos(train.seed, Purpose::Augment, e));
    if let Some(m) = &train.merge {
        map.insert("merge".into(), pos(m.seed, Purpose::Merge, e));
    }
    map
}

fn trailer_value(trailer: &Trailer) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(trailer)?)
}

fn parse_trailer(value: serde_json::Value) -> Result<Trailer> {
    serde_json::from_value(value).map_err(|e| Error::CorruptHeader(format!("trailer: {e}")))
}

fn model_from_tensors(
    arch: &ArchConfig,
    tensors: &mut BTreeMap<String, Tensor>,
    prefix: &str,
) -> Result<Model> {
    let mut model = Model::zeroed(arch)?;
    for name in model.param_names() {
        let t = tensors
            .remove(&format!("{prefix}{name}"))
            .ok_or_else(|| Error::CorruptHeader(format!("missing tensor `{prefix}{name}`")))?;
        model.set_param(&name, t)?;
    }
    Ok(model)
}

/// Saves model parameters with a config echo.
pub fn save_model(path: &Path, model: &Model, train: Option<&TrainConfig>) -> Result<()> {
    let trailer = Trailer {
        arch: model.arch().clone(),
        train: train.cloned(),
        merge: train.and_then(|t| t.merge.clone()),
        progress: None,
        rng: BTreeMap::new(),
    };
    write_checkpoint(path, &model.params(), &trailer_value(&trailer)?)
}

pub fn load_model(path: &Path) -> Result<(Model, Trailer)> {
    let (tensors, trailer) = read_checkpoint(path)?;
    let trailer = parse_trailer(trailer)?;
    let mut map: BTreeMap<String, Tensor> = tensors.into_iter().collect();
    let model = model_from_tensors(&trailer.arch, &mut map, "")?;
    if let Some(extra) = map.keys().next() {
        return Err(Error::CorruptHeader(format!("unexpected tensor `{extra}`")));
    }
    Ok((model, trailer))
}

/// Saves a resumable training state: parameters, momentum buffers, the
/// best-so-far model, the epoch log and RNG positions.
pub fn save_state(path: &Path, state: &TrainState, train: &TrainConfig) -> Result<()> {
    let mut tensors: Vec<(String, &Tensor)> = state.model.params();
    let names = state.model.param_names();
    for (name, v) in names.iter().zip(&state.velocity) {
        tensors.push((format!("velocity/{name}"), v));
    }
    if let Some(best) = &state.best_model {
        for (name, t) in best.params() {
            tensors.push((format!("best/{name}"), t));
        }
    }
    let trailer = Trailer {
        arch: state.model.arch().clone(),
        train: Some(train.clone()),
        merge: train.merge.clone(),
        progress: Some(Progress {
            next_epoch: state.next_epoch,
            log: state.log.clone(),
            has_best: state.best_model.is_some(),
        }),
        rng: stream_positions(train, state.next_epoch),
    };
    write_checkpoint(path, &tensors, &trailer_value(&trailer)?)
}

pub fn load_state(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let (tensors, trailer) = read_checkpoint(path)?;
    let trailer = parse_trailer(trailer)?;
    let (train, progress) = match (trailer.train, trailer.progress) {
        (Some(t), Some(p)) => (t, p),
        _ => {
            return Err(Error::CorruptHeader(
                "checkpoint holds no training state".into(),
            ))
        }
    };
    let mut map: BTreeMap<String, Tensor> = tensors.into_iter().collect();
    let model = model_from_tensors(&trailer.arch, &mut map, "")?;
    let velocity = model
        .param_names()
        .iter()
        .map(|name| {
            let key = format!("velocity/{name}");
            map.remove(&key)
                .ok_or_else(|| Error::CorruptHeader(format!("missing tensor `{key}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let best_model = if progress.has_best {
        Some(model_from_tensors(&trailer.arch, &mut map, "best/")?)
    } else {
        None
    };
    if let Some(extra) = map.keys().next() {
        return Err(Error::CorruptHeader(format!("unexpected tensor `{extra}`")));
    }
    let state = TrainState {
        model,
        velocity,
        next_epoch: progress.next_epoch,
        best_model,
        log: progress.log,
    };
    Ok((state, train))
}
