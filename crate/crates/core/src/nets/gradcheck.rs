//! Finite-difference checks of every differentiable op and of the full
//! tiny model, shared by the CLI `gradcheck` command and the test suites.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{forward, init_params, Batch, Bound, ModelConfig, Variant};
use crate::autodiff::{grad_check, Csr, Tape, Tensor, Var};
use crate::corpus::{LatLon, WEATHER_DIM};
use crate::error::Result;
use crate::featurize::{ModelInput, NodeResolution, StepInput};
use crate::geograph::{NodeKey, Subgraph};

/// Maximum relative error allowed for the full model.
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Maximum relative error allowed for single ops.
pub const OP_TOLERANCE: f64 = 1e-5;

const EPSILON: f64 = 1e-5;
const COORDS: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub coordinates: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Tensor holding the worst coordinate.
    pub worst: String,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // Keep clear of the ReLU kink by more than the probe step.
    let mut draw = || {
        let v: f64 = rng.random_range(-1.0..1.0);
        if v.abs() < 1e-3 {
            v + v.signum() * 1e-3
        } else {
            v
        }
    };
    Tensor::new(shape.to_vec(), (0..n).map(|_| draw()).collect()).unwrap()
}

fn op_tolerance(name: &str) -> f64 {
    match name {
        "layer_norm" => 1e-6,
        "square" => 1e-9,
        _ => OP_TOLERANCE,
    }
}

/// Reduces `y` to a scalar with fixed pseudo-random weights, so every
/// output element contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var) -> Result<Var> {
    let n = tape.value(y).len();
    let w: Vec<f64> = (0..n)
        .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
        .collect();
    let p = tape.mul_const(y, w)?;
    Ok(tape.sum(p))
}

type OpCase = (
    &'static str,
    Vec<Vec<usize>>,
    Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
);

fn op_cases() -> Vec<OpCase> {
    let csr = Rc::new(Csr::from_rows(
        3,
        &[
            vec![(0, 0.5), (2, -1.0)],
            vec![],
            vec![(1, 2.0)],
            vec![(0, 1.0), (1, 1.0), (2, 1.0)],
        ],
    ));
    let mask = Rc::new((0..12).map(|i| i % 5 == 0).collect::<Vec<_>>());
    vec![
        (
            "square",
            vec![vec![1]],
            Box::new(|t, v| {
                let y = t.mul(v[0], v[0])?;
                Ok(t.sum(y))
            }),
        ),
        (
            "matmul",
            vec![vec![2, 3, 4], vec![4, 5]],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y)
            }),
        ),
        (
            "batched_matmul",
            vec![vec![2, 3, 4], vec![2, 4, 2]],
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y)
            }),
        ),
        (
            "add_mul_broadcast",
            vec![vec![3, 4], vec![4]],
            Box::new(|t, v| {
                let s = t.add(v[0], v[1])?;
                let y = t.mul(s, v[1])?;
                weighted_sum(t, y)
            }),
        ),
        (
            "relu",
            vec![vec![4, 5]],
            Box::new(|t, v| {
                let y = t.relu(v[0]);
                weighted_sum(t, y)
            }),
        ),
        (
            "softmax",
            vec![vec![3, 5]],
            Box::new(|t, v| {
                let y = t.softmax(v[0]);
                weighted_sum(t, y)
            }),
        ),
        (
            "masked_softmax",
            vec![vec![3, 4]],
            Box::new(move |t, v| {
                let m = t.masked_fill(v[0], mask.clone(), crate::autodiff::MASK_FILL)?;
                let y = t.softmax(m);
                weighted_sum(t, y)
            }),
        ),
        (
            "layer_norm",
            vec![vec![3, 6], vec![6], vec![6]],
            Box::new(|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2])?;
                weighted_sum(t, y)
            }),
        ),
        (
            "concat_reshape_permute",
            vec![vec![2, 3], vec![2, 1]],
            Box::new(|t, v| {
                let c = t.concat(v[0], v[1])?;
                let r = t.reshape(c, &[2, 2, 2])?;
                let y = t.permute(r, &[2, 0, 1])?;
                weighted_sum(t, y)
            }),
        ),
        (
            "index_rows_spmm",
            vec![vec![3, 2]],
            Box::new(move |t, v| {
                let s = t.spmm(csr.clone(), v[0])?;
                let y = t.index_rows(s, vec![3, 0, 3])?;
                weighted_sum(t, y)
            }),
        ),
        (
            "mean_scale",
            vec![vec![2, 5]],
            Box::new(|t, v| {
                let s = t.scale(v[0], -3.0);
                let m = t.mul(s, v[0])?;
                Ok(t.mean(m))
            }),
        ),
        (
            "smooth_l1",
            vec![vec![4, 2]],
            Box::new(|t, v| {
                let target =
                    Tensor::new(vec![4, 2], vec![0.3, -2.0, 1.5, 0.0, -0.5, 4.0, 0.9, -0.2])?;
                t.smooth_l1(v[0], &target, 1.0)
            }),
        ),
    ]
}

/// Deterministic toy inputs for the model check: mixed lengths, multi-node
/// subgraphs, and targets on both sides of the smooth-L1 knee.
pub fn toy_inputs(seed: u64) -> Vec<ModelInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (row, len) in [3usize, 1, 4].into_iter().enumerate() {
        let steps = (0..len)
            .map(|i| {
                let n = 1 + (row + i) % 3;
                let nodes = (0..n)
                    .map(|j| NodeKey {
                        qlat: j as i32,
                        qlon: i as i32,
                    })
                    .collect();
                let node_features = (0..n)
                    .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                    .collect();
                let edges = (1..n).map(|j| (j - 1, j, 0.1 * (1 + j) as f64)).collect();
                let mut weather = [0.0; WEATHER_DIM];
                weather
                    .iter_mut()
                    .for_each(|w| *w = rng.random_range(-1.0..1.0));
                StepInput {
                    position_local: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    weather,
                    subgraph: Subgraph {
                        nodes,
                        node_features,
                        edges,
                        ego_index: 0,
                    },
                    resolution: NodeResolution::Exact,
                }
            })
            .collect();
        out.push(ModelInput {
            steps,
            origin: LatLon::new(20.0, -60.0),
            target_local: Some([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]),
        });
    }
    out
}

/// Gradient check of smooth-L1 loss through the whole model at `config`.
pub fn check_model(config: &ModelConfig, seed: u64) -> Result<CheckOutcome> {
    let params = init_params(config, seed)?;
    let inputs = toy_inputs(seed);
    let refs: Vec<&ModelInput> = inputs.iter().collect();
    let batch = Batch::new(&refs, config)?;
    let target = batch.targets.clone().expect("toy inputs carry targets");
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let tensors: Vec<Tensor> = params.tensors.values().cloned().collect();
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let bound = Bound {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
        };
        let pred = forward(tape, &bound, &batch, config, None)?;
        tape.smooth_l1(pred, &target, 1.0)
    };
    let report = grad_check(f, &tensors, EPSILON, COORDS)?;
    Ok(CheckOutcome {
        name: format!("model:{}", config.variant),
        max_rel_err: report.max_rel_err,
        coordinates: report.coordinates,
        tolerance: MODEL_TOLERANCE,
        passed: report.max_rel_err < MODEL_TOLERANCE,
        worst: format!("{}[{}]", names[report.worst.0], report.worst.1),
    })
}

/// Every op check followed by the tiny-config model check for both variants.
pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let params: Vec<Tensor> = if name == "square" {
            vec![Tensor::vector(vec![3.0])]
        } else {
            shapes.iter().map(|s| random(&mut rng, s)).collect()
        };
        let report = grad_check(f, &params, EPSILON, COORDS)?;
        let tolerance = op_tolerance(name);
        out.push(CheckOutcome {
            name: format!("op:{name}"),
            max_rel_err: report.max_rel_err,
            coordinates: report.coordinates,
            tolerance,
            passed: report.max_rel_err < tolerance,
            worst: format!("input{}[{}]", report.worst.0, report.worst.1),
        });
    }
    for variant in Variant::ALL {
        out.push(check_model(&ModelConfig::tiny(variant), seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for outcome in run_suite(17).unwrap() {
            assert!(outcome.passed, "{outcome:?}");
            assert!(outcome.coordinates > 0);
        }
    }

    #[test]
    fn tiny_model_with_dropout_rate_still_checks_in_eval_mode() {
        let config = ModelConfig {
            dropout: 0.1,
            ..ModelConfig::tiny(Variant::GraphTransformer)
        };
        let outcome = check_model(&config, 3).unwrap();
        assert!(outcome.passed, "{outcome:?}");
    }
}
