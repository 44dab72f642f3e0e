//! Binary tensor container and model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "ALBT"
//! version    u32
//! count      u32
//! count x {
//!     path_len  u32, path (UTF-8, path_len bytes)
//!     rank      u32, dims (u64 x rank)
//!     dtype     u8   (0 = f32, 1 = f64)
//!     data      numel x dtype, little-endian
//! }
//! ```
//!
//! The model config is written next to the container as `<path>.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::config::{resolve_layer_groups, ModelConfig};
use super::params::{parameter_specs, ParameterStore};
use crate::error::{Error, Result};
use crate::optim::Moments;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"ALBT";
pub const FORMAT_VERSION: u32 = 1;

const OPT_M: &str = "optimizer.m/";
const OPT_V: &str = "optimizer.v/";
const OPT_STEP: &str = "optimizer.step";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            c => Err(Error::Checkpoint(format!("unknown dtype code {c}"))),
        }
    }
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[(&str, &Tensor)], dtype: DType) -> Result<()> {
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (path, t) in tensors {
        let bytes = path.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(bytes).map_err(io)?;
        w.write_all(&(t.rank() as u32).to_le_bytes()).map_err(io)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        w.write_all(&[dtype as u8]).map_err(io)?;
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for &x in t.data() {
            match dtype {
                DType::F32 => buf.extend_from_slice(&(x as f32).to_le_bytes()),
                DType::F64 => buf.extend_from_slice(&x.to_le_bytes()),
            }
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<_, 4>(r)?))
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let magic = read_exact::<_, 4>(r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated path: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor path is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_exact::<_, 8>(r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let dtype = DType::from_code(read_exact::<_, 1>(r)?[0])?;
        let n = numel(&shape);
        let width = match dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated data for '{name}': {e}")))?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Parameters, their config, and optionally the optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub optimizer: Option<Moments>,
}

pub fn config_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParameterStore) -> Self {
        Self {
            config,
            params,
            optimizer: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(p, t)| (p.to_string(), t.detached()))
            .collect();
        if let Some(opt) = &self.optimizer {
            entries.push((OPT_STEP.into(), Tensor::scalar(opt.step as f64)));
            for (p, t) in &opt.m {
                entries.push((format!("{OPT_M}{p}"), t.clone()));
            }
            for (p, t) in &opt.v {
                entries.push((format!("{OPT_V}{p}"), t.clone()));
            }
        }
        let refs: Vec<(&str, &Tensor)> = entries.iter().map(|(p, t)| (p.as_str(), t)).collect();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_tensors(&mut w, &refs, DType::F64)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        let cfg_path = config_path(path);
        let json = serde_json::to_string_pretty(&self.config)?;
        std::fs::write(&cfg_path, json).map_err(|e| Error::io(&cfg_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = config_path(path);
        let cfg_text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: ModelConfig = serde_json::from_str(&cfg_text)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tensors = read_tensors(&mut BufReader::new(file))?;
        Self::from_tensors(config, tensors)
    }

    /// Assembles a checkpoint and checks it against the config's inventory.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let config = config.validate()?;
        let groups =
            resolve_layer_groups(config.sharing, config.num_layers, config.group_size())?;
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut step = None;
        for (name, t) in tensors {
            if let Some(p) = name.strip_prefix(OPT_M) {
                m.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix(OPT_V) {
                v.insert(p.to_string(), t);
            } else if name == OPT_STEP {
                step = Some(t.item() as u64);
            } else {
                params.insert(name, t.with_grad());
            }
        }
        let specs = parameter_specs(&config, &groups);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "config expects {} tensors, checkpoint has {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let t = params.get(&spec.path).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint lacks parameter '{}'", spec.path))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, config expects {:?}",
                    spec.path,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        let optimizer = step.map(|step| Moments { step, m, v });
        Ok(Self {
            config,
            params: ParameterStore::from_parts(params, groups),
            optimizer,
        })
    }
}
