use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use geotrack::corpus::SplitRatios;
use geotrack::nets::{ModelConfig, Variant};
use geotrack::trainer::{KFoldConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub trajectories: usize,
    pub latent_nodes: usize,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trajectories: 200,
            latent_nodes: 50,
            noise_sigma: 0.05,
        }
    }
}

/// Everything a run reads, as one JSON document. Command-line flags
/// override the matching fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub variant: Variant,
    pub jobs: usize,
    pub split: SplitRatios,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub kfold: KFoldConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            out: PathBuf::from("out"),
            seed: 0,
            variant: Variant::GraphTransformer,
            jobs: 1,
            split: SplitRatios::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            kfold: KFoldConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies flag overrides and copies the top-level seed, variant and
    /// job count into the nested sections.
    pub fn resolve(mut self, o: Overrides) -> Result<Self> {
        if o.corpus.is_some() {
            self.corpus = o.corpus;
        }
        self.out = o.out.unwrap_or(self.out);
        self.seed = o.seed.unwrap_or(self.seed);
        self.variant = o.variant.unwrap_or(self.variant);
        self.jobs = o.jobs.unwrap_or(self.jobs);
        self.model.variant = self.variant;
        self.train.seed = self.seed;
        self.kfold.jobs = self.jobs;
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        anyhow::ensure!(self.jobs >= 1, "jobs must be at least 1");
        Ok(self)
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .context("no corpus given; pass --corpus or set `corpus` in the config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_and_propagate() {
        let base: RunConfig =
            serde_json::from_str(r#"{"seed": 3, "train": {"epochs": 2}}"#).unwrap();
        let r = base
            .resolve(Overrides {
                seed: Some(9),
                variant: Some(Variant::VanillaTransformer),
                ..Overrides::default()
            })
            .unwrap();
        assert_eq!((r.seed, r.train.seed, r.train.epochs), (9, 9, 2));
        assert_eq!(r.model.variant, Variant::VanillaTransformer);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
    }
}
