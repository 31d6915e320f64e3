//! Flat key-value configuration files.
//!
//! One `key = value` pair per line, `#` comments. Unknown keys are rejected.

use crate::error::{FaorError, Result};
use crate::model::{CoordEncoding, LiftKernel, ModelConfig};
use crate::train::TrainConfig;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn bad(key: &str, value: &str) -> FaorError {
    FaorError::Config(format!("invalid value `{value}` for key `{key}`"))
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut kv = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(FaorError::Config(format!(
                "line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            )));
        };
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }

    let mut cfg = ConfigFile::default();
    for (k, v) in &kv {
        match k.as_str() {
            "L" => cfg.model.num_blocks = v.parse().map_err(|_| bad(k, v))?,
            "D" => cfg.model.channels = v.parse().map_err(|_| bad(k, v))?,
            "d_k" => cfg.model.attention_scale = v.parse().map_err(|_| bad(k, v))?,
            "mlp_hidden" => cfg.model.mlp_hidden = v.parse().map_err(|_| bad(k, v))?,
            "coord_encoding" => {
                cfg.model.coord_encoding = if v == "raw" {
                    CoordEncoding::Raw
                } else if let Some(freqs) = v.strip_prefix("sincos:") {
                    CoordEncoding::SinCos {
                        freqs: freqs.parse().map_err(|_| bad(k, v))?,
                    }
                } else {
                    return Err(bad(k, v));
                }
            }
            "lift_kernel" => {
                cfg.model.lift_kernel = match v.as_str() {
                    "pointwise" => LiftKernel::Pointwise,
                    "conv3" => LiftKernel::Conv3,
                    _ => return Err(bad(k, v)),
                }
            }
            "base_patch" => cfg.train.base_patch = v.parse().map_err(|_| bad(k, v))?,
            "r_min" => cfg.train.r_min = v.parse().map_err(|_| bad(k, v))?,
            "r_max" => cfg.train.r_max = v.parse().map_err(|_| bad(k, v))?,
            "pixels_per_patch" => cfg.train.pixels_per_patch = v.parse().map_err(|_| bad(k, v))?,
            "lr0" => cfg.train.lr0 = v.parse().map_err(|_| bad(k, v))?,
            "lr_milestones" => {
                cfg.train.lr_milestones = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse().map_err(|_| bad(k, v)))
                    .collect::<Result<Vec<u64>>>()?
            }
            "beta1" => cfg.train.beta1 = v.parse().map_err(|_| bad(k, v))?,
            "beta2" => cfg.train.beta2 = v.parse().map_err(|_| bad(k, v))?,
            "eps" => cfg.train.eps = v.parse().map_err(|_| bad(k, v))?,
            "max_iters" => cfg.train.max_iters = v.parse().map_err(|_| bad(k, v))?,
            "seed" => cfg.train.seed = v.parse().map_err(|_| bad(k, v))?,
            "log_every" => cfg.train.log_every = v.parse().map_err(|_| bad(k, v))?,
            "ckpt_every" => cfg.train.ckpt_every = v.parse().map_err(|_| bad(k, v))?,
            other => {
                return Err(FaorError::Config(format!("unknown config key `{other}`")));
            }
        }
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn config_to_text(cfg: &ConfigFile) -> String {
    let coord = match cfg.model.coord_encoding {
        CoordEncoding::Raw => "raw".to_string(),
        CoordEncoding::SinCos { freqs } => format!("sincos:{freqs}"),
    };
    let lift = match cfg.model.lift_kernel {
        LiftKernel::Pointwise => "pointwise",
        LiftKernel::Conv3 => "conv3",
    };
    let milestones = cfg
        .train
        .lr_milestones
        .iter()
        .map(|m| m.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "# model\n\
         L = {}\n\
         D = {}\n\
         d_k = {}\n\
         mlp_hidden = {}\n\
         coord_encoding = {coord}\n\
         lift_kernel = {lift}\n\
         # training\n\
         base_patch = {}\n\
         r_min = {}\n\
         r_max = {}\n\
         pixels_per_patch = {}\n\
         lr0 = {}\n\
         lr_milestones = {milestones}\n\
         beta1 = {}\n\
         beta2 = {}\n\
         eps = {}\n\
         max_iters = {}\n\
         seed = {}\n\
         log_every = {}\n\
         ckpt_every = {}\n",
        cfg.model.num_blocks,
        cfg.model.channels,
        cfg.model.attention_scale,
        cfg.model.mlp_hidden,
        cfg.train.base_patch,
        cfg.train.r_min,
        cfg.train.r_max,
        cfg.train.pixels_per_patch,
        cfg.train.lr0,
        cfg.train.beta1,
        cfg.train.beta2,
        cfg.train.eps,
        cfg.train.max_iters,
        cfg.train.seed,
        cfg.train.log_every,
        cfg.train.ckpt_every,
    )
}

pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
