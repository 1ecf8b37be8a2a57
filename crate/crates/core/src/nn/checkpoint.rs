//! Self-describing JSON checkpoints.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::model::{DseNet, ModelConfig};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::real::Real;

pub const CHECKPOINT_FORMAT: &str = "dsenet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub stage: u8,
    pub epoch: usize,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params<A: Real>(
        config: &ModelConfig,
        stage: u8,
        epoch: usize,
        ps: &ParamStore<A>,
    ) -> Self {
        let tensors = ps
            .names()
            .iter()
            .zip(ps.values())
            .map(|(name, v)| TensorRecord {
                name: name.clone(),
                shape: v.shape().to_vec(),
                data: v.iter().map(|x| x.f64() as f32).collect(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            stage,
            epoch,
            tensors,
        }
    }

    /// Writes atomically: a temporary sibling file is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
        if format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "{} is not a model checkpoint",
                path.display()
            )));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "{}: version {version:?}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        serde_json::from_value(value).map_err(|e| Error::json(path, e))
    }

    /// Rebuilds the network and its parameters.
    pub fn restore<A: Real>(&self) -> Result<(DseNet, ParamStore<A>)> {
        let (net, mut ps) = DseNet::new(self.config.clone(), 0)?;
        if self.tensors.len() != ps.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                ps.len()
            )));
        }
        for rec in &self.tensors {
            let id = ps
                .id_of(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", rec.name)))?;
            let slot = ps.get_mut(id);
            if slot.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    rec.name,
                    rec.shape,
                    slot.shape()
                )));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} holds non-finite values",
                    rec.name
                )));
            }
            let data = rec.data.iter().map(|&v| v as f64).collect();
            *slot = ArrayD::from_shape_vec(IxDyn(&rec.shape), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok((net, ps.cast()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_blocks: 1,
            channels: 8,
            cross_hidden: 2,
            ffn_hidden: 8,
            groups: 2,
            heads: 2,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let (_, ps) = DseNet::new(tiny(), 3).unwrap();
        let ps32: ParamStore<f32> = ps.cast();
        let ck = Checkpoint::from_params(&tiny(), 1, 4, &ps32);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let (_, restored) = back.restore::<f32>().unwrap();
        assert_eq!(restored, ps32);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let (_, ps) = DseNet::new(tiny(), 3).unwrap();
        let mut ck = Checkpoint::from_params(&tiny(), 1, 0, &ps);
        ck.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, serde_json::to_string(&ck).unwrap()).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
