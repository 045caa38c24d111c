use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Variant};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named model tensors plus the seed that initialized them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub seed: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Parameters {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// GCN weights in layer order.
    pub fn gcn_weights(&self) -> Result<Vec<&Tensor>> {
        let layers = self
            .tensors
            .keys()
            .filter(|k| k.starts_with("gcn."))
            .count();
        if layers == 0 {
            return Err(Error::MissingParameter("gcn.0.weight".into()));
        }
        (0..layers)
            .map(|l| self.get(&format!("gcn.{l}.weight")))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Places every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter names mapped to their tape handles.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }
}

enum Init {
    Xavier,
    Zeros,
    Ones,
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d_model;
    let mut out = Vec::new();
    let linear = |out: &mut Vec<_>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.weight"), vec![i, o], Init::Xavier));
        out.push((format!("{name}.bias"), vec![o], Init::Zeros));
    };
    let norm = |out: &mut Vec<_>, name: &str| {
        out.push((format!("{name}.gain"), vec![d], Init::Ones));
        out.push((format!("{name}.bias"), vec![d], Init::Zeros));
    };

    if config.variant == Variant::GraphTransformer {
        for l in 0..config.gcn_layers {
            let input = if l == 0 {
                config.node_feature_dim
            } else {
                config.gcn_dim
            };
            out.push((
                format!("gcn.{l}.weight"),
                vec![input, config.gcn_dim],
                Init::Xavier,
            ));
        }
    }
    linear(&mut out, "input", config.token_dim(), d);
    for i in 0..config.n_layers {
        let p = format!("encoder.{i}");
        norm(&mut out, &format!("{p}.attn_norm"));
        for w in ["q", "v", "o"] {
            linear(&mut out, &format!("{p}.attn.{w}"), d, d);
        }
        // A key bias shifts every score in a query row equally, so softmax
        // cancels it; it would only ever receive a zero gradient.
        out.push((format!("{p}.attn.k.weight"), vec![d, d], Init::Xavier));
        norm(&mut out, &format!("{p}.ffn_norm"));
        linear(&mut out, &format!("{p}.ffn.0"), d, config.ffn_dim);
        linear(&mut out, &format!("{p}.ffn.1"), config.ffn_dim, d);
    }
    norm(&mut out, "final_norm");
    linear(&mut out, "head", d, 2);
    out
}

/// Xavier-uniform weights, zero biases, unit layer-norm gains. Tensors are
/// drawn in name order from a single seeded stream.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Parameters> {
    config.validate()?;
    let mut specs = layout(config);
    specs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape, init) in specs {
        let t = match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::full(&shape, 1.0),
            Init::Xavier => {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let n = shape[0] * shape[1];
                Tensor::new(
                    shape,
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
                )?
            }
        };
        tensors.insert(name, t);
    }
    Ok(Parameters { seed, tensors })
}
