use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{MAX_INPUT_STEPS, WEATHER_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// GCN ego embedding + weather per token.
    GraphTransformer,
    /// Local position + weather per token.
    VanillaTransformer,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::GraphTransformer, Variant::VanillaTransformer];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::GraphTransformer => "GraphTransformer",
            Variant::VanillaTransformer => "Transformer",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::GraphTransformer => "graph",
            Variant::VanillaTransformer => "vanilla",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" | "graph_transformer" => Ok(Variant::GraphTransformer),
            "vanilla" | "vanilla_transformer" => Ok(Variant::VanillaTransformer),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub gcn_layers: usize,
    pub gcn_dim: usize,
    pub node_feature_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub weather_dim: usize,
    pub max_seq: usize,
    pub dropout: f64,
    pub positional_encoding: bool,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gcn_layers: 2,
            gcn_dim: 16,
            node_feature_dim: 2,
            d_model: 64,
            n_heads: 4,
            n_layers: 4,
            ffn_dim: 256,
            weather_dim: WEATHER_DIM,
            max_seq: MAX_INPUT_STEPS,
            dropout: 0.1,
            positional_encoding: true,
            variant: Variant::GraphTransformer,
        }
    }
}

impl ModelConfig {
    /// Full-size configuration for `variant`.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// d_model 8, one layer, one head, 4-dim GCN; used for gradient checks
    /// and smoke tests.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            gcn_dim: 4,
            d_model: 8,
            n_heads: 1,
            n_layers: 1,
            ffn_dim: 32,
            dropout: 0.0,
            variant,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the per-token input before projection.
    pub fn token_dim(&self) -> usize {
        match self.variant {
            Variant::GraphTransformer => self.gcn_dim + self.weather_dim,
            Variant::VanillaTransformer => self.node_feature_dim + self.weather_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.gcn_layers == 0 || self.gcn_dim == 0 || self.n_layers == 0 || self.ffn_dim == 0 {
            return fail("layer counts and widths must be positive".into());
        }
        if self.node_feature_dim != 2 {
            return fail("node features are (lat, lon)".into());
        }
        if self.weather_dim != WEATHER_DIM {
            return fail(format!("weather_dim must be {WEATHER_DIM}"));
        }
        if self.max_seq == 0 {
            return fail("max_seq must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_architecture() {
        let c = ModelConfig::default();
        assert_eq!(
            (c.gcn_layers, c.gcn_dim, c.d_model, c.n_heads, c.n_layers),
            (2, 16, 64, 4, 4)
        );
        assert_eq!(c.token_dim(), 30);
        assert_eq!(
            ModelConfig::full(Variant::VanillaTransformer).token_dim(),
            16
        );
        c.validate().unwrap();
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"d_model": 8, "bogus": 1}"#).is_err());
        let c: ModelConfig = serde_json::from_str(r#"{"d_model": 8, "n_heads": 2}"#).unwrap();
        assert_eq!(c.gcn_dim, 16);
        assert_eq!(
            "vanilla".parse::<Variant>().unwrap(),
            Variant::VanillaTransformer
        );
    }
}
