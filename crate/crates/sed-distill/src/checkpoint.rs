//! Binary checkpoint serialization.
//!
//! Layout: magic `SEDD`, format version (u32 LE), length-prefixed
//! UTF-8 key=value config block, record count (u64 LE), then one
//! record per tensor: name length + UTF-8 name, rank, dims (u64 LE
//! each), and row-major 32-bit IEEE-754 little-endian values.
//! Batch-norm running statistics are serialized as extra records
//! after the trainable parameters.

use std::path::Path;

use crate::error::{Result, SedError};
use crate::models::{SECRNNConfig, SeCrnn};

pub const MAGIC: &[u8; 4] = b"SEDD";
pub const FORMAT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SedError::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| SedError::Format(format!("invalid UTF-8 in checkpoint: {e}")))
    }
}

fn push_record(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u64).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u64).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn save_checkpoint(model: &SeCrnn, path: &Path) -> Result<()> {
    let config = model.cfg.to_kv();
    let buffers = model.buffers();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let n_records = model.param_names().len() + buffers.len();
    out.extend_from_slice(&(n_records as u64).to_le_bytes());
    for (name, tensor) in model.params_iter() {
        push_record(&mut out, name, &tensor.shape(), &tensor.data());
    }
    for (name, values) in &buffers {
        push_record(&mut out, name, &[values.len()], values);
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Record {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn parse_records(bytes: &[u8]) -> Result<(SECRNNConfig, Vec<Record>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(SedError::Format("bad magic, not a checkpoint file".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(SedError::Format(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let config = SECRNNConfig::from_kv(&cur.string()?)?;
    let n_records = cur.u64()? as usize;
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let name = cur.string()?;
        let rank = cur.u64()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64()? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        records.push(Record { name, dims, values });
    }
    if cur.pos != bytes.len() {
        return Err(SedError::Format(format!(
            "{} trailing bytes after last record",
            bytes.len() - cur.pos
        )));
    }
    Ok((config, records))
}

fn apply_records(model: &SeCrnn, records: &[Record]) -> Result<()> {
    let buffer_names: Vec<String> = model.buffers().into_iter().map(|(n, _)| n).collect();
    for rec in records {
        if buffer_names.contains(&rec.name) {
            model.set_buffer(&rec.name, &rec.values)?;
        } else if model.param_names().contains(&rec.name) {
            let tensor = model.param(&rec.name);
            if tensor.shape() != rec.dims {
                return Err(SedError::Architecture(format!(
                    "parameter {}: checkpoint shape {:?} does not match model shape {:?}",
                    rec.name,
                    rec.dims,
                    tensor.shape()
                )));
            }
            tensor.set_data(&rec.values);
        } else {
            return Err(SedError::Architecture(format!(
                "parameter {} not present in target model",
                rec.name
            )));
        }
    }
    let loaded: std::collections::HashSet<&str> =
        records.iter().map(|r| r.name.as_str()).collect();
    for name in model.param_names() {
        if !loaded.contains(name.as_str()) {
            return Err(SedError::Architecture(format!(
                "parameter {name} missing from checkpoint"
            )));
        }
    }
    Ok(())
}

/// Build a model from the architecture recorded in the checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<SeCrnn> {
    let bytes = std::fs::read(path)?;
    let (config, records) = parse_records(&bytes)?;
    let model = SeCrnn::new(config, 0)?;
    apply_records(&model, &records)?;
    Ok(model)
}

/// Load into an existing model; the architectures must match exactly.
pub fn load_checkpoint_into(model: &SeCrnn, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let (_, records) = parse_records(&bytes)?;
    apply_records(model, &records)
}

/// Names and shapes only, for `inspect-checkpoint`.
pub fn inspect_checkpoint(path: &Path) -> Result<(SECRNNConfig, Vec<(String, Vec<usize>)>)> {
    let bytes = std::fs::read(path)?;
    let (config, records) = parse_records(&bytes)?;
    Ok((config, records.into_iter().map(|r| (r.name, r.dims)).collect()))
}

/// FNV-1a over the parameter bit patterns, in registration order.
/// Used to assert teacher immutability across a training run.
pub fn param_hash(model: &SeCrnn) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for (name, tensor) in model.params_iter() {
        eat(name.as_bytes());
        for v in tensor.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}
