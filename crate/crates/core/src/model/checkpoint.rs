//! Binary checkpoint: config, step counter, named parameter tensors and
//! optional AdamW moments.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::binio::{Reader, Writer};
use crate::error::{Error, FormatError, Result};

const MAGIC: &str = "SRGTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Number of AdamW updates applied so far.
    pub t: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl OptimizerState {
    pub fn new(cfg: ModelConfig) -> Self {
        Self {
            t: 0,
            m: ModelParams::zeros_like(cfg),
            v: ModelParams::zeros_like(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub optimizer: Option<OptimizerState>,
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    for v in [c.n_latent, c.n_blocks, c.head_dim, c.mlp_ratio, c.token_dim, c.out_dim] {
        w.u32(v as u32);
    }
    w.f64(c.dropout_p);
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let mut u = [0usize; 6];
    for x in &mut u {
        *x = r.u32()? as usize;
    }
    let cfg = ModelConfig {
        n_latent: u[0],
        n_blocks: u[1],
        head_dim: u[2],
        mlp_ratio: u[3],
        token_dim: u[4],
        out_dim: u[5],
        dropout_p: r.f64()?,
    };
    cfg.validate()
        .map_err(|e| FormatError::CorruptRecord(format!("stored model config: {e}")))?;
    Ok(cfg)
}

fn write_tensors(w: &mut Writer, prefix: &str, p: &ModelParams) {
    for (name, shape, data) in p.tensors() {
        w.short_str(&format!("{prefix}{name}"));
        w.u32(shape.len() as u32);
        for s in &shape {
            w.u32(*s as u32);
        }
        w.f64s(data);
    }
}

fn read_tensors(r: &mut Reader, prefix: &str, cfg: ModelConfig) -> Result<ModelParams> {
    let mut p = ModelParams::zeros_like(cfg);
    let expected: Vec<(String, Vec<usize>)> = p
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (format!("{prefix}{n}"), s))
        .collect();
    for ((name, shape), slot) in expected.iter().zip(p.tensors_mut()) {
        let got = r.short_str()?;
        if &got != name {
            return Err(FormatError::CorruptRecord(format!("expected tensor {name}, found {got}")).into());
        }
        let rank = r.u32()? as usize;
        r.require(rank * 4)?;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
        if &dims != shape {
            return Err(FormatError::CorruptRecord(format!("tensor {name}: shape {dims:?}, expected {shape:?}")).into());
        }
        let data = r.f64s(slot.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { index: i }.into());
        }
        *slot = data;
    }
    Ok(p)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let n = ck.params.param_count();
    let mut w = Writer::with_capacity(256 + n * 8 * if ck.optimizer.is_some() { 3 } else { 1 });
    w.bytes(MAGIC.as_bytes());
    w.u32(VERSION);
    write_config(&mut w, &ck.params.cfg);
    w.u64(ck.step);
    match &ck.optimizer {
        None => w.u8(0),
        Some(o) => {
            w.u8(1);
            w.u64(o.t);
        }
    }
    write_tensors(&mut w, "", &ck.params);
    if let Some(o) = &ck.optimizer {
        write_tensors(&mut w, "adam.m.", &o.m);
        write_tensors(&mut w, "adam.v.", &o.v);
    }
    w.into_inner()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let cfg = read_config(&mut r)?;
    let step = r.u64()?;
    let opt_t = match r.u8()? {
        0 => None,
        1 => Some(r.u64()?),
        f => return Err(FormatError::CorruptRecord(format!("optimizer flag {f}")).into()),
    };
    let params = read_tensors(&mut r, "", cfg)?;
    let optimizer = match opt_t {
        None => None,
        Some(t) => Some(OptimizerState {
            t,
            m: read_tensors(&mut r, "adam.m.", cfg)?,
            v: read_tensors(&mut r, "adam.v.", cfg)?,
        }),
    };
    r.finish()?;
    Ok(Checkpoint {
        params,
        step,
        optimizer,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    decode_checkpoint(&bytes)
}
