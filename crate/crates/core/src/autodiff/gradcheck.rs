use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub coordinates: usize,
    /// `(tensor, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks the gradient of the scalar produced by `f` with respect to each
/// of `params`.
///
/// `f` receives a fresh tape and the parameter handles. Up to
/// `coords_per_tensor` coordinates per tensor are checked (all of them for
/// smaller tensors), chosen with a fixed seed.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    epsilon: f64,
    coords_per_tensor: usize,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut report = GradCheck {
        max_rel_err: 0.0,
        coordinates: 0,
        worst: (0, 0),
    };
    let mut probe: Vec<Tensor> = params.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let n = params[t].len();
        let analytic = grads
            .get(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = if n <= coords_per_tensor {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, coords_per_tensor).into_vec()
        };
        for c in coords {
            let original = params[t].data()[c];
            probe[t].data_mut()[c] = original + epsilon;
            let plus = eval(&probe)?;
            probe[t].data_mut()[c] = original - epsilon;
            let minus = eval(&probe)?;
            probe[t].data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[c], numeric);
            report.coordinates += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (t, c);
            }
        }
    }
    Ok(report)
}
