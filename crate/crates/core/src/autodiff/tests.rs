use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Tensor whose entries are at least `margin` away from zero.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 {
                -margin - 0.1
            } else {
                margin + 0.1
            };
        }
    }
    t
}

fn check<F>(params: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
{
    grad_check(f, params, 1e-5, 64).unwrap().max_rel_err
}

/// Weighted sum so that every output coordinate gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var) -> crate::Result<Var> {
    let n = tape.value(x).len();
    let shape = tape.shape(x).to_vec();
    let w = Tensor::new(
        shape,
        (0..n).map(|i| ((i as f64) * 0.7).sin() + 0.3).collect(),
    )
    .unwrap();
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3]));
    let y = tape.softmax(x);
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn relu_value_and_mask() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![-1.0, 2.0]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[3, 4], &mut rng);
    let w = random(&[4, 2], &mut rng);
    let err = check(&[w], |t, v| {
        let x = t.constant(x.clone());
        let y = t.matmul(x, v[0])?;
        Ok(t.sum(y))
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn every_op_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = 1e-5;
    let mut cases: Vec<(&str, f64)> = Vec::new();

    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 4, 5], &mut rng);
    cases.push((
        "batched matmul",
        check(&[a.clone(), b], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    let shared = random(&[4, 3], &mut rng);
    cases.push((
        "shared matmul",
        check(&[a.clone(), shared], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    let bias = random(&[4], &mut rng);
    cases.push((
        "broadcast add",
        check(&[a.clone(), bias.clone()], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "broadcast mul",
        check(&[a.clone(), bias.clone()], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "sub",
        check(&[a.clone(), a.clone()], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "relu",
        check(&[away_from_zero(&[3, 5], 1e-3, &mut rng)], |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "softmax",
        check(&[random(&[3, 5], &mut rng)], |t, v| {
            let y = t.softmax(v[0]);
            weighted_sum(t, y)
        }),
    ));
    let gain = random(&[4], &mut rng);
    cases.push((
        "layer_norm",
        check(&[a.clone(), gain, bias.clone()], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "concat",
        check(&[a.clone(), random(&[2, 3, 2], &mut rng)], |t, v| {
            let y = t.concat(v[0], v[1])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "mean",
        check(std::slice::from_ref(&a), |t, v| {
            let y = t.mul(v[0], v[0])?;
            Ok(t.mean(y))
        }),
    ));
    cases.push((
        "transpose",
        check(std::slice::from_ref(&a), |t, v| {
            let y = t.transpose(v[0])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "permute",
        check(std::slice::from_ref(&a), |t, v| {
            let y = t.permute(v[0], &[2, 0, 1])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "reshape",
        check(std::slice::from_ref(&a), |t, v| {
            let y = t.reshape(v[0], &[6, 4])?;
            weighted_sum(t, y)
        }),
    ));
    let mask: Rc<Vec<bool>> = Rc::new((0..24).map(|i| i % 3 == 0).collect());
    cases.push((
        "masked_fill",
        check(std::slice::from_ref(&a), |t, v| {
            let y = t.masked_fill(v[0], mask.clone(), -3.0)?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "index_rows",
        check(std::slice::from_ref(&a), |t, v| {
            let y = t.index_rows(v[0], vec![5, 0, 5, 2])?;
            weighted_sum(t, y)
        }),
    ));
    let csr = Rc::new(Csr::from_rows(
        6,
        &[vec![(0, 0.5), (3, 1.5)], vec![], vec![(5, -1.0), (5, 0.25)]],
    ));
    cases.push((
        "spmm",
        check(&[random(&[6, 4], &mut rng)], |t, v| {
            let y = t.spmm(csr.clone(), v[0])?;
            weighted_sum(t, y)
        }),
    ));
    cases.push((
        "mul_const",
        check(std::slice::from_ref(&a), |t, v| {
            let y = t.mul_const(v[0], (0..24).map(|i| i as f64 * 0.1).collect())?;
            weighted_sum(t, y)
        }),
    ));
    let target = random(&[4, 2], &mut rng);
    let mut pred = random(&[4, 2], &mut rng);
    pred.data_mut()[0] = target.data()[0] + 2.5; // linear branch
    cases.push((
        "smooth_l1",
        check(&[pred], |t, v| t.smooth_l1(v[0], &target, 1.0)),
    ));

    for (name, err) in &cases {
        assert!(*err < tol, "{name}: max rel err {err}");
    }
}

#[test]
fn reused_parameter_accumulates() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.5, -2.0]));
    let y = tape.mul(x, x).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[3.0, -4.0]);
}

#[test]
fn masked_softmax_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let x = tape.constant(random(&[4, 6], &mut rng));
    let mask: Rc<Vec<bool>> = Rc::new((0..24).map(|i| i % 6 >= 4).collect());
    let filled = tape.masked_fill(x, mask.clone(), MASK_FILL).unwrap();
    let y = tape.softmax(filled);
    for (r, row) in tape.value(y).data().chunks(6).enumerate() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "row {r}");
        assert!(row[4] < 1e-30 && row[5] < 1e-30);
    }
}

#[test]
fn shape_errors_name_op_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    match tape.matmul(a, b) {
        Err(Error::Shape { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!((lhs, rhs), (vec![2, 3], vec![4, 2]));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(tape.add(a, b).is_err());
    assert!(tape.concat(a, b).is_err());
    let s = tape.sum(a);
    assert!(tape.backward(a).is_err());
    assert!(tape.backward(s).is_ok());
}

#[test]
fn square_gradient_check() {
    let r = grad_check(
        |t, v| {
            let y = t.mul(v[0], v[0])?;
            Ok(t.sum(y))
        },
        &[Tensor::vector(vec![3.0])],
        1e-5,
        64,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-9, "{}", r.max_rel_err);
}

proptest! {
    #[test]
    fn matmul_agrees_with_naive(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum();
                prop_assert!((tape.value(c).data()[i * n + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[rows, cols], &mut rng));
        let x = tape.scale(x, 20.0);
        let y = tape.softmax(x);
        for row in tape.value(y).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
