//! Binary checkpoint format.
//!
//! ```text
//! "BTNT" | u32 version | u64 json_len | json | u32 tensor_count | tensors...
//! tensor: u32 name_len | name | u8 dtype (0 = f32, 1 = f64) | u32 rank | u64 dims[rank] | payload
//! ```
//! All integers and payloads are little-endian. The JSON blob carries the model config and,
//! for resumable checkpoints, the training state and optimizer step; the optimizer moments
//! are stored as f64 tensors named `opt.m.<param>` and `opt.v.<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tamperscope_tensor::nn::Module;
use tamperscope_tensor::{DType, Float, Tensor};

use crate::error::{CoreError, Result};
use crate::model::{ModelConfig, SiameseModel};
use crate::train::{AdamW, TrainState};

pub const MAGIC: &[u8; 4] = b"BTNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train_state: Option<TrainState>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    weight_decay: f64,
    step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Float> {
    pub model: SiameseModel<T>,
    pub train_state: Option<TrainState>,
    pub optimizer: Option<AdamW>,
}

struct RawTensor {
    dtype: DType,
    dims: Vec<usize>,
    payload: Vec<u8>,
}

impl RawTensor {
    fn values<U: Float>(&self) -> Vec<U> {
        match self.dtype {
            DType::F32 => self.payload.chunks_exact(4).map(|b| U::of(f32::read_le(b) as f64)).collect(),
            DType::F64 => self.payload.chunks_exact(8).map(|b| U::of(f64::read_le(b))).collect(),
        }
    }
}

fn dtype_tag(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn push_tensor<U: Float>(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[U]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype_tag(U::DTYPE));
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        v.write_le(out);
    }
}

pub fn to_bytes<T: Float>(model: &SiameseModel<T>, train_state: Option<&TrainState>, optimizer: Option<&AdamW>) -> Result<Vec<u8>> {
    let header = Header {
        model: model.cfg.clone(),
        train_state: train_state.cloned(),
        optimizer: optimizer.map(|o| OptimizerHeader {
            weight_decay: o.weight_decay,
            step: o.step,
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CoreError::Config(e.to_string()))?;
    let params = model.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let count = params.len() * if optimizer.is_some() { 3 } else { 1 };
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in &params {
        push_tensor(&mut out, name, t.shape(), t.data());
    }
    if let Some(opt) = optimizer {
        for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
            for ((name, t), mom) in params.iter().zip(moments) {
                push_tensor(&mut out, &format!("opt.{kind}.{name}"), t.shape(), mom);
            }
        }
    }
    Ok(out)
}

/// Writes to a sibling temp file first so an existing checkpoint survives a failed write.
pub fn save_checkpoint<T: Float>(path: &Path, model: &SiameseModel<T>, train_state: Option<&TrainState>, optimizer: Option<&AdamW>) -> Result<()> {
    let bytes = to_bytes(model, train_state, optimizer)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| CoreError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

fn read_u32(r: &mut &[u8]) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_vec(r: &mut &[u8], n: usize) -> io::Result<Vec<u8>> {
    if n > r.len() {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated checkpoint"));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head.to_vec())
}

fn parse_tensors(r: &mut &[u8]) -> io::Result<BTreeMap<String, RawTensor>> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let count = read_u32(r)? as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let name = String::from_utf8(read_vec(r, len)?).map_err(|_| bad("tensor name is not utf-8"))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let dtype = match tag[0] {
            0 => DType::F32,
            1 => DType::F64,
            t => return Err(bad(&format!("unknown dtype tag {t}"))),
        };
        let rank = read_u32(r)? as usize;
        let dims = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
        let payload = read_vec(r, numel.checked_mul(dtype.size_of()).ok_or_else(|| bad("tensor too large"))?)?;
        out.insert(name, RawTensor { dtype, dims, payload });
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes after tensor table"));
    }
    Ok(out)
}

/// Parses a checkpoint. Stored tensors of the other float width are converted.
pub fn from_bytes<T: Float>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CoreError::BadMagic);
    }
    let io_err = |e: io::Error| CoreError::io(path, e);
    let mut r = &bytes[4..];
    let version = read_u32(&mut r).map_err(io_err)?;
    if version != FORMAT_VERSION {
        return Err(CoreError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let json_len = read_u64(&mut r).map_err(io_err)? as usize;
    let json = read_vec(&mut r, json_len).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| CoreError::Config(format!("checkpoint header: {e}")))?;
    let mut tensors = parse_tensors(&mut r).map_err(io_err)?;
    let mut model = SiameseModel::<T>::new(&header.model)?;
    let mut take = |name: &str, shape: &[usize]| -> Result<RawTensor> {
        let raw = tensors.remove(name).ok_or_else(|| CoreError::ShapeMismatchOnLoad {
            name: name.to_string(),
            detail: "missing".into(),
        })?;
        if raw.dims != shape {
            return Err(CoreError::ShapeMismatchOnLoad {
                name: name.to_string(),
                detail: format!("stored {:?}, model expects {:?}", raw.dims, shape),
            });
        }
        Ok(raw)
    };
    let mut loaded = Vec::new();
    model.visit("", &mut |name, t| loaded.push((name.to_string(), t.shape().to_vec())));
    let mut values = Vec::with_capacity(loaded.len());
    for (name, shape) in &loaded {
        let vals = take(name, shape)?.values::<T>();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::ShapeMismatchOnLoad {
                name: name.clone(),
                detail: "non-finite values".into(),
            });
        }
        values.push(vals);
    }
    let optimizer = match &header.optimizer {
        Some(h) => {
            let mut m = Vec::with_capacity(loaded.len());
            let mut v = Vec::with_capacity(loaded.len());
            for (name, shape) in &loaded {
                m.push(take(&format!("opt.m.{name}"), shape)?.values::<f64>());
                v.push(take(&format!("opt.v.{name}"), shape)?.values::<f64>());
            }
            Some(AdamW {
                weight_decay: h.weight_decay,
                step: h.step,
                m,
                v,
            })
        }
        None => None,
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(CoreError::ShapeMismatchOnLoad {
            name: extra.clone(),
            detail: "not a parameter of this model".into(),
        });
    }
    let mut i = 0;
    model.visit_mut("", &mut |_, t| {
        let shape = t.shape().to_vec();
        *t = Tensor::param(std::mem::take(&mut values[i]), &shape).expect("shape checked above");
        i += 1;
    });
    Ok(Checkpoint {
        model,
        train_state: header.train_state,
        optimizer,
    })
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    from_bytes(&bytes, path)
}
