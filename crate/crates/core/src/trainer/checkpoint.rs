use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainHistory};
use crate::autodiff::AdamState;
use crate::error::{Error, Result};
use crate::featurize::Scaler;
use crate::geograph::{GraphRecord, SpatialGraph};
use crate::nets::{ModelConfig, Parameters};

/// Everything needed to resume, evaluate or audit a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Parameters,
    pub adam: AdamState,
    pub scaler: Scaler,
    pub graph: GraphRecord,
    pub graph_hash: String,
    pub split_hash: String,
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.graph.hash() != ck.graph_hash {
            return Err(Error::Integrity("graph does not match its hash".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn spatial_graph(&self) -> Result<SpatialGraph> {
        self.graph.clone().into_graph()
    }
}
