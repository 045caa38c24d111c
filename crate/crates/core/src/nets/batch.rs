use super::gcn::PackedGraphs;
use super::{ModelConfig, Variant};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::featurize::ModelInput;

/// Right-padded model inputs, ready for [`forward`](super::forward).
#[derive(Debug, Clone)]
pub struct Batch {
    pub lengths: Vec<usize>,
    pub max_len: usize,
    /// `[batch, max_len, weather_dim]`, zero at padding.
    pub weather: Tensor,
    /// `[batch, max_len, 2]` local-frame positions, zero at padding.
    pub positions: Tensor,
    /// `[batch, 2]` when every input carries a target.
    pub targets: Option<Tensor>,
    pub(crate) graphs: Option<PackedGraphs>,
}

impl Batch {
    pub fn new(inputs: &[&ModelInput], config: &ModelConfig) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if let Some(row) = inputs.iter().position(|i| i.seq_len() == 0) {
            return Err(Error::EmptySequence(row));
        }
        let lengths: Vec<usize> = inputs.iter().map(|i| i.seq_len()).collect();
        let max_len = *lengths.iter().max().expect("non-empty");
        if max_len > config.max_seq {
            return Err(Error::Config(format!(
                "sequence of {max_len} steps exceeds max_seq {}",
                config.max_seq
            )));
        }
        let b = inputs.len();
        let w = config.weather_dim;
        let mut weather = vec![0.0; b * max_len * w];
        let mut positions = vec![0.0; b * max_len * 2];
        let mut slots = Vec::with_capacity(b * max_len);
        for (r, input) in inputs.iter().enumerate() {
            for t in 0..max_len {
                let step = input.steps.get(t);
                if let Some(s) = step {
                    let at = r * max_len + t;
                    weather[at * w..(at + 1) * w].copy_from_slice(&s.weather);
                    positions[at * 2..at * 2 + 2].copy_from_slice(&s.position_local);
                }
                slots.push(step.map(|s| &s.subgraph));
            }
        }
        let targets = inputs
            .iter()
            .map(|i| i.target_local)
            .collect::<Option<Vec<_>>>()
            .map(|t| Tensor::new(vec![b, 2], t.concat()))
            .transpose()?;
        let graphs = match config.variant {
            Variant::GraphTransformer => Some(PackedGraphs::new(&slots)),
            Variant::VanillaTransformer => None,
        };
        Ok(Self {
            lengths,
            max_len,
            weather: Tensor::new(vec![b, max_len, w], weather)?,
            positions: Tensor::new(vec![b, max_len, 2], positions)?,
            targets,
            graphs,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }
}
