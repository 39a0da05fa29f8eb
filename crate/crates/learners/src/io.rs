//! SMDL model containers.
//!
//! Layout: magic `SMDL`, u16 format version, u8 model type, then two
//! length-prefixed (u64) JSON blocks: the hyperparameters and the model.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ensemble::{Classifier, EnsembleModel};
use crate::error::{LearnError, Result};
use crate::forest::ForestModel;
use crate::gbm::GbmModel;
use crate::mlp::MlpModel;
use crate::stacker::StackerModel;

pub const MAGIC: &[u8; 4] = b"SMDL";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Forest = 1,
    Gbm = 2,
    Mlp = 3,
    Stacker = 4,
    Ensemble = 5,
}

impl ModelKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            1 => Self::Forest,
            2 => Self::Gbm,
            3 => Self::Mlp,
            4 => Self::Stacker,
            5 => Self::Ensemble,
            _ => return Err(LearnError::Format(format!("unknown model type {b}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Forest => "rf",
            Self::Gbm => "gbm",
            Self::Mlp => "mlp",
            Self::Stacker => "stacker",
            Self::Ensemble => "ensemble",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Forest(ForestModel),
    Gbm(GbmModel),
    Mlp(MlpModel),
    Stacker(StackerModel),
    Ensemble(Box<EnsembleModel>),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Forest(_) => ModelKind::Forest,
            Self::Gbm(_) => ModelKind::Gbm,
            Self::Mlp(_) => ModelKind::Mlp,
            Self::Stacker(_) => ModelKind::Stacker,
            Self::Ensemble(_) => ModelKind::Ensemble,
        }
    }

    /// Raw predictor names, in row order. A stacker row continues with the
    /// three base probabilities.
    pub fn feature_names(&self) -> &[String] {
        match self {
            Self::Forest(m) => &m.feature_names,
            Self::Gbm(m) => &m.feature_names,
            Self::Mlp(m) => m.encoder.input_names(),
            Self::Stacker(m) => m.encoder.input_names(),
            Self::Ensemble(m) => &m.feature_names,
        }
    }

    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            Self::Forest(m) => m,
            Self::Gbm(m) => m,
            Self::Mlp(m) => m,
            Self::Stacker(m) => m,
            Self::Ensemble(m) => m.as_ref(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = |v: &dyn erased::Json| v.to_json();
        let (params, body) = match self {
            Self::Forest(m) => (json(&m.params)?, json(m)?),
            Self::Gbm(m) => (json(&m.params)?, json(m)?),
            Self::Mlp(m) => (json(&m.params)?, json(m)?),
            Self::Stacker(m) => (json(&m.ridge)?, json(m)?),
            Self::Ensemble(m) => (
                json(&(&m.forest.params, &m.gbm.params, &m.mlp.params, m.stacker.ridge))?,
                json(m.as_ref())?,
            ),
        };
        let mut out = Vec::with_capacity(23 + params.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind() as u8);
        for block in [&params, &body] {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            out.extend_from_slice(block);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..4] != MAGIC {
            return Err(LearnError::Format("not an SMDL model file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(LearnError::Format(format!("unsupported SMDL version {version}")));
        }
        let kind = ModelKind::from_byte(bytes[6])?;
        let mut rest = &bytes[7..];
        let mut block = || -> Result<&[u8]> {
            if rest.len() < 8 {
                return Err(LearnError::Format("truncated model file".into()));
            }
            let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
            if rest.len() - 8 < len {
                return Err(LearnError::Format("truncated model file".into()));
            }
            let b = &rest[8..8 + len];
            rest = &rest[8 + len..];
            Ok(b)
        };
        let _params = block()?;
        let body = block()?;
        Ok(match kind {
            ModelKind::Forest => Self::Forest(parse(body)?),
            ModelKind::Gbm => Self::Gbm(parse(body)?),
            ModelKind::Mlp => Self::Mlp(parse(body)?),
            ModelKind::Stacker => Self::Stacker(parse(body)?),
            ModelKind::Ensemble => Self::Ensemble(Box::new(parse(body)?)),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|source| LearnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| LearnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| LearnError::Format(format!("model body: {e}")))
}

mod erased {
    use super::*;

    pub trait Json {
        fn to_json(&self) -> Result<Vec<u8>>;
    }

    impl<T: Serialize> Json for T {
        fn to_json(&self) -> Result<Vec<u8>> {
            serde_json::to_vec(self).map_err(|e| LearnError::Format(e.to_string()))
        }
    }
}
