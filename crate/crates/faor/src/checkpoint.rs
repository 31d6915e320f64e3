//! Checkpoint container: named parameters as little-endian float32 with a
//! shape header per entry, preceded by the configuration text.
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! magic   b"faor-ckpt-v1\n"
//! u32     config text length, then that many UTF-8 bytes
//! u32     parameter count
//! entry*  u32 name len | name bytes | u32 ndim | u32 dims... | f32 values...
//! ```

use crate::config::{config_to_text, parse_config, ConfigFile};
use crate::error::{FaorError, Result};
use crate::model::{InitMode, Model};
use crate::scalar::Scalar;
use std::io::{Read, Write};
use std::path::Path;

pub const CKPT_MAGIC: &[u8] = b"faor-ckpt-v1\n";

pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub struct Checkpoint {
    pub config_text: String,
    pub entries: Vec<CheckpointEntry>,
}

fn corrupt(msg: &str) -> FaorError {
    FaorError::Checkpoint(msg.to_string())
}

pub fn write_checkpoint(path: &Path, config_text: &str, entries: &[CheckpointEntry]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let count: usize = e.shape.iter().product();
        if count != e.values.len() {
            return Err(FaorError::ShapeMismatch {
                op: "write_checkpoint",
                expected: e.shape.clone(),
                got: vec![e.values.len()],
            });
        }
        for v in &e.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(corrupt("truncated checkpoint"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };

    if take(&mut pos, CKPT_MAGIC.len())? != CKPT_MAGIC {
        return Err(corrupt("bad magic; not a faor-ckpt-v1 file"));
    }
    let cfg_len = read_u32(&mut pos)? as usize;
    let config_text = std::str::from_utf8(take(&mut pos, cfg_len)?)
        .map_err(|_| corrupt("config text is not UTF-8"))?
        .to_string();
    let n_params = read_u32(&mut pos)? as usize;
    let mut entries = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut pos)? as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| corrupt("parameter name is not UTF-8"))?
            .to_string();
        let ndim = read_u32(&mut pos)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut pos)? as usize);
        }
        let count: usize = shape.iter().product();
        let raw = take(&mut pos, count * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(CheckpointEntry { name, shape, values });
    }
    Ok(Checkpoint {
        config_text,
        entries,
    })
}

/// Save a model and its configuration into one self-describing checkpoint.
pub fn save_model<T: Scalar>(model: &Model<T>, cfg: &ConfigFile, path: &Path) -> Result<()> {
    let entries: Vec<CheckpointEntry> = model
        .parameters()
        .iter()
        .map(|p| CheckpointEntry {
            name: p.name().to_string(),
            shape: p.shape().to_vec(),
            values: p.to_vec().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        })
        .collect();
    write_checkpoint(path, &config_to_text(cfg), &entries)
}

/// Rebuild a model from a checkpoint; every parameter must be present with a
/// matching shape.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(Model<T>, ConfigFile)> {
    let ckpt = read_checkpoint(path)?;
    let cfg = parse_config(&ckpt.config_text)?;
    let model = Model::<T>::new(cfg.model, cfg.train.seed, InitMode::Training)?;
    let mut by_name: std::collections::HashMap<&str, &CheckpointEntry> =
        ckpt.entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for p in model.parameters() {
        let entry = by_name.remove(p.name()).ok_or_else(|| {
            FaorError::Checkpoint(format!("missing parameter `{}`", p.name()))
        })?;
        if entry.shape != p.shape() {
            return Err(FaorError::ShapeMismatch {
                op: "load_model",
                expected: p.shape().to_vec(),
                got: entry.shape.clone(),
            });
        }
        let cast: Vec<T> = entry.values.iter().map(|&v| T::from_f64(v as f64)).collect();
        p.set_data(&cast)?;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(FaorError::Checkpoint(format!(
            "unexpected parameter `{extra}` in checkpoint"
        )));
    }
    Ok((model, cfg))
}

/// Human-readable dump helper for debugging checkpoints.
pub fn describe(ckpt: &Checkpoint, out: &mut impl Write) -> Result<()> {
    writeln!(out, "faor-ckpt-v1, {} parameters", ckpt.entries.len())?;
    for e in &ckpt.entries {
        writeln!(out, "  {} {:?}", e.name, e.shape)?;
    }
    Ok(())
}
