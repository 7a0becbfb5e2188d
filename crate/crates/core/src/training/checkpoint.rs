//! Binary checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "RDEPTH01"
//! u32 n, n bytes      model config as key=value text
//! u64                 completed optimizer steps
//! f64 ×5, u64         lr, beta1, beta2, eps, decay_rate, decay_steps
//! u32                 record count
//! records:            u32 name length, name, u8 dtype (0 = f32), u32 rank,
//!                     u64 × rank extents, row-major f32 payload
//! ```
//!
//! Records hold the parameters (`param/<name>`) followed by the Adam moments
//! (`adam.m/<name>`, `adam.v/<name>`).

use std::collections::BTreeMap;
use std::path::Path;

use super::config::{model_kv, parse_model_kv};
use crate::error::{Error, Result};
use crate::network::Model;
use crate::tensor::{AdamConfig, AdamState, LayerParams, Tensor};

pub const MAGIC: &[u8; 8] = b"RDEPTH01";
const DTYPE_F32: u8 = 0;

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.adam.step()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    put_u32(out, shape.len());
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Model<f32>, adam: &AdamState<f32>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let kv = model_kv(model.variant(), model.config());
    put_u32(&mut out, kv.len());
    out.extend_from_slice(kv.as_bytes());
    out.extend_from_slice(&adam.step().to_le_bytes());
    let c = adam.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps, c.decay_rate] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.decay_steps.to_le_bytes());
    put_u32(&mut out, 3 * model.params().len());
    for (name, t) in model.params().iter() {
        put_record(&mut out, &format!("param/{name}"), t.shape(), t.data());
    }
    for (prefix, moment) in [("adam.m", true), ("adam.v", false)] {
        for (name, t) in model.params().iter() {
            let buf = if moment { adam.first_moment(name) } else { adam.second_moment(name) };
            let zeros;
            let data = match buf {
                Some(b) => b,
                None => {
                    zeros = vec![0f32; t.numel()];
                    &zeros
                }
            };
            put_record(&mut out, &format!("{prefix}/{name}"), t.shape(), data);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.file, self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], file: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, file };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Load(format!(
            "{} is not a checkpoint (magic {:?})",
            file.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let n = r.u32("config length")?;
    let at = r.pos;
    let kv = std::str::from_utf8(r.take(n, "config block")?).map_err(|_| Error::parse(file, at, "config block is not UTF-8"))?;
    let (variant, config) = parse_model_kv(kv)?;
    let step = r.u64("optimizer step")?;
    let adam_cfg = AdamConfig {
        lr: r.f64("lr")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        eps: r.f64("eps")?,
        decay_rate: r.f64("decay rate")?,
        decay_steps: r.u64("decay steps")?,
    };
    let count = r.u32("record count")?;
    let mut params = LayerParams::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("record name length")?;
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|_| Error::parse(file, at, "record name is not UTF-8"))?
            .to_string();
        let at = r.pos;
        let dtype = r.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::parse(file, at, format!("unsupported dtype tag {dtype} in {name}")));
        }
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let at = r.pos;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::parse(file, at, "extent overflow"))?, &name)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let dup = || Error::parse(file, at, format!("duplicate record {name}"));
        if let Some(p) = name.strip_prefix("param/") {
            let t = Tensor::new(&shape, data).map_err(|e| Error::parse(file, at, e.to_string()))?;
            params.insert(p, t.with_grad(true)).map_err(|_| dup())?;
        } else if let Some(p) = name.strip_prefix("adam.m/") {
            if first.insert(p.to_string(), data).is_some() {
                return Err(dup());
            }
        } else if let Some(p) = name.strip_prefix("adam.v/") {
            if second.insert(p.to_string(), data).is_some() {
                return Err(dup());
            }
        } else {
            return Err(Error::parse(file, at, format!("unknown record {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(file, r.pos, "trailing bytes after last record"));
    }
    for name in params.names() {
        if !first.contains_key(name) || !second.contains_key(name) {
            return Err(Error::Load(format!("optimizer state for {name} missing")));
        }
    }
    let model = Model::from_params(variant, &config, params)?;
    Ok(Checkpoint {
        model,
        adam: AdamState::from_parts(adam_cfg, step, first, second),
    })
}

pub fn save_checkpoint(model: &Model<f32>, adam: &AdamState<f32>, path: &Path) -> Result<()> {
    // Write then rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(model, adam)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
