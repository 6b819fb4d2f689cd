//! Checkpoint files.
//!
//! Layout (little-endian): magic `PFCK`, version `u32`, SHA-256 of the
//! canonical configuration (32 bytes), configuration JSON (`u32` length +
//! UTF-8), meta entry count `u32` with `(name, f64)` pairs, tensor count
//! `u32` with `(name, ndim u32, dims u64 * ndim, f32 values)` entries.
//! Strings are `u32` length + UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::Model;
use super::optim::{Optimizer, OptimizerKind};
use super::params::{hex, ParamStore};
use crate::error::{Error, Result};
use crate::functionals::ByteReader;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PFCK";
const VERSION: u32 = 1;

const PARAM: &str = "param/";
const MOMENT1: &str = "opt.m/";
const MOMENT2: &str = "opt.v/";

/// Compact JSON with object keys in sorted order.
pub fn canonical_json(v: &Value) -> String {
    // serde_json's default map is ordered by key.
    v.to_string()
}

pub fn config_digest(v: &Value) -> [u8; 32] {
    Sha256::digest(canonical_json(v).as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `{"model": ModelConfig, "run": <run configuration>}`.
    pub config: Value,
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: BTreeMap<String, f64>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(model: &Model, run: Value, optimizer: Option<&Optimizer>) -> Result<Self> {
        let config = serde_json::json!({
            "model": serde_json::to_value(model.config())?,
            "run": run,
        });
        let mut tensors = BTreeMap::new();
        for (name, t) in model.params().iter() {
            tensors.insert(format!("{PARAM}{name}"), t.clone());
        }
        let mut meta = BTreeMap::new();
        if let Some(opt) = optimizer {
            for (name, (m, v)) in opt.moments() {
                tensors.insert(format!("{MOMENT1}{name}"), m.clone());
                tensors.insert(format!("{MOMENT2}{name}"), v.clone());
            }
            meta.insert("opt.step".into(), opt.step_count() as f64);
            let kind = match opt.kind {
                OptimizerKind::Adam => 0.0,
                OptimizerKind::Radam => 1.0,
            };
            meta.insert("opt.kind".into(), kind);
        }
        Ok(Self { config, tensors, meta })
    }

    pub fn digest_hex(&self) -> String {
        hex(&config_digest(&self.config))
    }

    pub fn run_config(&self) -> &Value {
        &self.config["run"]
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(serde_json::from_value(self.config["model"].clone())?)
    }

    pub fn model(&self) -> Result<Model> {
        let mut params = ParamStore::new();
        for (name, t) in &self.tensors {
            if let Some(n) = name.strip_prefix(PARAM) {
                params.insert(n, t.clone());
            }
        }
        Model::from_parts(self.model_config()?, params)
    }

    pub fn has_optimizer(&self) -> bool {
        self.meta.contains_key("opt.step")
    }

    pub fn optimizer(&self) -> Result<Optimizer> {
        let step = *self
            .meta
            .get("opt.step")
            .ok_or_else(|| Error::Format("checkpoint holds no optimizer state".into()))?;
        let kind = match self.meta.get("opt.kind").copied() {
            Some(k) if k == 0.0 => OptimizerKind::Adam,
            _ => OptimizerKind::Radam,
        };
        let mut moments = BTreeMap::new();
        for (name, m) in &self.tensors {
            if let Some(n) = name.strip_prefix(MOMENT1) {
                let v = self
                    .tensors
                    .get(&format!("{MOMENT2}{n}"))
                    .ok_or_else(|| Error::Format(format!("missing second moment for {n}")))?;
                moments.insert(n.to_string(), (m.clone(), v.clone()));
            }
        }
        let mut opt = Optimizer::new(kind);
        opt.restore(step as u64, moments);
        Ok(opt)
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.get(key).copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&config_digest(&self.config));
        put_str(&mut out, &canonical_json(&self.config));
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let config: Value = serde_json::from_str(&r.string()?)?;
        if config_digest(&config) != digest {
            return Err(Error::Format("checkpoint configuration digest mismatch".into()));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            meta.insert(k, r.f64()?);
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        r.finish()?;
        Ok(Self { config, tensors, meta })
    }

    /// Write through a temporary file and rename, so a crash never leaves a
    /// torn checkpoint behind.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("pfck.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn model() -> Model {
        let mut m = Model::new(ModelConfig::tiny(1, 32, 8).unwrap(), 9).unwrap();
        m.add_projection_head(4, &mut stream_rng(9, Stream::Init, 1, 0));
        m
    }

    #[test]
    fn roundtrip_preserves_f32_state() {
        let m = model();
        let mut opt = Optimizer::new(OptimizerKind::Radam);
        let mut params = m.params().clone();
        let grads: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(n, t)| (n.clone(), t.map(|v| v * 0.5 + 0.01)))
            .collect();
        opt.step(&mut params, &grads, 1e-3).unwrap();
        let m = Model::from_parts(m.config().clone(), params).unwrap();
        let mut ck = Checkpoint::new(&m, serde_json::json!({"seed": 3}), Some(&opt)).unwrap();
        ck.meta.insert("epoch".into(), 4.0);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap(), m);
        assert_eq!(back.optimizer().unwrap(), opt);
        assert_eq!(back.meta("epoch"), Some(4.0));
        assert_eq!(back.run_config()["seed"], 3);
    }

    #[test]
    fn tampered_config_is_detected() {
        let ck = Checkpoint::new(&model(), serde_json::json!({"seed": 3}), None).unwrap();
        let mut bytes = ck.to_bytes();
        let pos = bytes.windows(8).position(|w| w == b"\"seed\":3").unwrap();
        bytes[pos + 7] = b'4';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("digest mismatch"));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        assert!(Checkpoint::from_bytes(b"PFTS").is_err());
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":3}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":{"x":3,"y":2},"b":1}"#).unwrap();
        assert_eq!(canonical_json(&a), r#"{"a":{"x":3,"y":2},"b":1}"#);
        assert_eq!(config_digest(&a), config_digest(&b));
    }
}
