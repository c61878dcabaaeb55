//! Binary checkpoint container.
//!
//! ```text
//! b"DESTCKPT" | version u32 | config length u32 | config JSON (compact RunConfig)
//! then per parameter, until end of file:
//!   name length u32 | name UTF-8 | rank u32 | rank × extent u64 | f64 data
//! ```
//!
//! All integers and floats are little-endian. Parameters appear in
//! registration order.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{DestError, Result};
use crate::graph::SkeletonTopology;
use crate::model::DestModel;
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 8] = b"DESTCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// `run.model` is replaced by the model's own configuration.
    pub fn from_model(model: &DestModel, run: &RunConfig) -> Self {
        let mut config = run.clone();
        config.model = model.config.clone();
        Checkpoint {
            config,
            params: model
                .store
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid")))
                .collect(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let json = serde_json::to_string(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != CKPT_MAGIC {
            return Err(r.err("missing DESTCKPT header"));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(r.err(&format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let json = std::str::from_utf8(r.take(n)?).map_err(|_| r.err("config block is not UTF-8"))?;
        let config = RunConfig::from_json(json)?;
        let mut params = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| r.err("parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel.checked_mul(8).ok_or_else(|| r.err("extent overflow"))?)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| DestError::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| DestError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DestError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Rebuilds the model and overwrites every parameter. Missing, extra or
    /// mis-shaped parameters are configuration errors.
    pub fn into_model(self, topology: SkeletonTopology) -> Result<(DestModel, RunConfig)> {
        let mut model = DestModel::new(self.config.model.clone(), topology, 0)?;
        if self.params.len() != model.store.len() {
            return Err(DestError::Config(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (name, t) in self.params {
            if model.store.id_of(&name).is_none() {
                return Err(DestError::Config(format!("checkpoint parameter {name} unknown to the model")));
            }
            model.store.set(&name, t)?;
        }
        Ok((model, self.config))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> DestError {
        DestError::Parse {
            path: self.origin.to_path_buf(),
            line: 0,
            msg: format!("byte {}: {msg}", self.pos),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
