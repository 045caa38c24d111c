use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::transformer::linear;
use super::{
    positional_encoding, transformer_encode, Batch, Bound, ModelConfig, Parameters, Variant,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::featurize::ModelInput;

/// Inverted dropout driven by its own seeded stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..tape.value(x).len())
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        tape.mul_const(x, mask)
    }
}

/// Local-frame predictions, `[batch, 2]`. Pass `dropout` only in training.
pub fn forward(
    tape: &mut Tape,
    bound: &Bound,
    batch: &Batch,
    config: &ModelConfig,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    let (b, t) = (batch.size(), batch.max_len);
    let weather = tape.constant(batch.weather.clone());
    let tokens = match config.variant {
        Variant::GraphTransformer => {
            let graphs = batch
                .graphs
                .as_ref()
                .ok_or_else(|| Error::Config("batch was built for the vanilla variant".into()))?;
            let weights = (0..config.gcn_layers)
                .map(|l| bound.get(&format!("gcn.{l}.weight")))
                .collect::<Result<Vec<_>>>()?;
            let emb = graphs.encode(tape, &weights)?;
            let emb = tape.reshape(emb, &[b, t, config.gcn_dim])?;
            tape.concat(emb, weather)?
        }
        Variant::VanillaTransformer => {
            let pos = tape.constant(batch.positions.clone());
            tape.concat(pos, weather)?
        }
    };
    let mut x = linear(tape, tokens, bound, "input")?;
    if config.positional_encoding {
        let pe = tape.constant(positional_encoding(t, config.d_model));
        x = tape.add(x, pe)?;
    }
    let encoded = transformer_encode(tape, x, &batch.lengths, bound, config, dropout)?;
    let flat = tape.reshape(encoded.output, &[b * t, config.d_model])?;
    let last = batch
        .lengths
        .iter()
        .enumerate()
        .map(|(r, len)| r * t + len - 1)
        .collect();
    let last = tape.index_rows(flat, last)?;
    linear(tape, last, bound, "head")
}

/// Evaluation-mode predictions in the local frame of each input, computed
/// in parallel over batches of `batch_size`.
pub fn predict(
    params: &Parameters,
    config: &ModelConfig,
    inputs: &[ModelInput],
    batch_size: usize,
) -> Result<Vec<[f64; 2]>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let chunks = inputs
        .par_chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&ModelInput> = chunk.iter().collect();
            let batch = Batch::new(&refs, config)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let out = forward(&mut tape, &bound, &batch, config, None)?;
            Ok(tape
                .value(out)
                .data()
                .chunks(2)
                .map(|p| [p[0], p[1]])
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.concat())
}

#[cfg(test)]
mod tests {
    use std::time::Instant;

    use super::*;
    use crate::featurize::{assemble, fit_scaler, GraphFeatures};
    use crate::fixtures::track;
    use crate::geograph::{build_graph, Subgraph};
    use crate::nets::init_params;

    fn inputs(n: usize) -> Vec<ModelInput> {
        let trajs: Vec<_> = (0..4).map(|i| track(i, 20 + i)).collect();
        let graph = build_graph(&trajs);
        let pairs: Vec<_> = (0..n)
            .map(|i| crate::corpus::pair_at(&trajs[i % 4], 1 + (i * 7) % 19).unwrap())
            .collect();
        let scaler = fit_scaler(&pairs);
        pairs
            .iter()
            .map(|p| assemble(p, &graph, &scaler, GraphFeatures::default()))
            .collect()
    }

    fn run(config: &ModelConfig, params: &Parameters, inputs: &[ModelInput]) -> Vec<[f64; 2]> {
        predict(params, config, inputs, 64).unwrap()
    }

    #[test]
    fn vanilla_ignores_subgraphs() {
        let c = ModelConfig::full(Variant::VanillaTransformer);
        let p = init_params(&c, 1).unwrap();
        let xs = inputs(10);
        let mut stripped = xs.clone();
        for s in stripped.iter_mut().flat_map(|i| i.steps.iter_mut()) {
            s.subgraph = Subgraph::singleton(s.subgraph.nodes[s.subgraph.ego_index], [9.0, 9.0]);
        }
        assert_eq!(run(&c, &p, &xs), run(&c, &p, &stripped));
    }

    #[test]
    fn graph_variant_sees_subgraphs() {
        let c = ModelConfig::default();
        let p = init_params(&c, 1).unwrap();
        let xs = inputs(4);
        let mut moved = xs.clone();
        moved[0].steps.last_mut().unwrap().subgraph.node_features[0] = [5.0, 5.0];
        assert_ne!(run(&c, &p, &xs)[0], run(&c, &p, &moved)[0]);
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let c = ModelConfig::default();
        let p = init_params(&c, 2).unwrap();
        let one = inputs(1).remove(0);
        let out = run(&c, &p, &vec![one; 8]);
        for row in &out {
            assert!((row[0] - out[0][0]).abs() < 1e-12 && (row[1] - out[0][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn batching_does_not_change_predictions() {
        let c = ModelConfig::default();
        let p = init_params(&c, 2).unwrap();
        let xs = inputs(12);
        let all = predict(&p, &c, &xs, 12).unwrap();
        let single = predict(&p, &c, &xs, 1).unwrap();
        for (a, b) in all.iter().zip(&single) {
            assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn singleton_graph_with_zero_gcn_runs_finite() {
        let c = ModelConfig::default();
        let mut p = init_params(&c, 3).unwrap();
        for (name, t) in p.tensors.iter_mut() {
            if name.starts_with("gcn.") {
                t.data_mut().fill(0.0);
            }
        }
        let mut xs = inputs(6);
        for s in xs.iter_mut().flat_map(|i| i.steps.iter_mut()) {
            s.subgraph =
                Subgraph::singleton(s.subgraph.nodes[s.subgraph.ego_index], s.position_local);
        }
        let v = ModelConfig::full(Variant::VanillaTransformer);
        let pv = init_params(&v, 3).unwrap();
        assert!(run(&c, &p, &xs)
            .iter()
            .chain(&run(&v, &pv, &xs))
            .flatten()
            .all(|x| x.is_finite()));
    }

    #[test]
    fn dropout_zero_is_identity_and_training_mode_differs() {
        let c = ModelConfig::default();
        let p = init_params(&c, 4).unwrap();
        let xs = inputs(4);
        let refs: Vec<&ModelInput> = xs.iter().collect();
        let batch = Batch::new(&refs, &c).unwrap();
        let eval = |dropout: Option<&mut Dropout>| {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape, false);
            let out = forward(&mut tape, &bound, &batch, &c, dropout).unwrap();
            tape.value(out).clone()
        };
        let plain = eval(None);
        assert_eq!(plain, eval(Some(&mut Dropout::new(0.0, 1))));
        assert_ne!(plain, eval(Some(&mut Dropout::new(0.1, 1))));
    }

    #[test]
    fn full_size_forward_is_fast() {
        let c = ModelConfig::default();
        let p = init_params(&c, 5).unwrap();
        let xs: Vec<ModelInput> = inputs(32)
            .into_iter()
            .map(|mut i| {
                while i.steps.len() < 16 {
                    i.steps.push(i.steps[0].clone());
                }
                i
            })
            .collect();
        let start = Instant::now();
        let out = predict(&p, &c, &xs, 32).unwrap();
        assert_eq!(out.len(), 32);
        assert!(start.elapsed().as_secs_f64() < 1.0, "{:?}", start.elapsed());
    }
}
