//! Binary checkpoints.
//!
//! Layout (little endian): magic `LGNN`, version `u32`, tensor count `u32`,
//! then per tensor: name length `u32`, UTF-8 name, rank `u32` (always 2),
//! dims as `u64`, and the row-major `f64` data. The model configuration is
//! stored next to the checkpoint as `<path>.config.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::encoder::Model;
use super::tape::ParamStore;
use super::tensor::Tensor;
use super::{ModelConfig, ModelError};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LGNN";

pub fn write_checkpoint<W: Write>(params: &ParamStore, mut w: W) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Named tensors in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(bad(format!("tensor name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(bad(format!("{name}: rank {rank}, expected 2")));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let n = rows.checked_mul(cols).filter(|n| *n <= 1 << 32).ok_or_else(|| bad(format!("{name}: shape too large")))?;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    Ok(out)
}

pub fn config_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".config.json");
    PathBuf::from(p)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    write_checkpoint(&model.params, BufWriter::new(File::create(path)?))?;
    let json = serde_json::to_vec_pretty(&model.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::fs::write(config_path(path), json)?;
    Ok(())
}

/// Loads tensors into a freshly built `model`. Every parameter must be
/// present with its exact shape; unknown tensors are rejected.
pub fn load_into(model: &mut Model, tensors: Vec<(String, Tensor)>) -> Result<(), ModelError> {
    let expected = model.params.len();
    if tensors.len() != expected {
        return Err(ModelError::Checkpoint(format!("{} tensors, model has {expected}", tensors.len())));
    }
    let mut seen = std::collections::HashSet::new();
    for (name, t) in tensors {
        if !seen.insert(name.clone()) {
            return Err(ModelError::Checkpoint(format!("duplicate tensor {name}")));
        }
        model.params.assign(&name, t)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let json = std::fs::read(config_path(path))?;
    let config: ModelConfig = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut model = Model::new(config, 0)?;
    let tensors = read_checkpoint(BufReader::new(File::open(path)?))?;
    load_into(&mut model, tensors)?;
    Ok(model)
}
