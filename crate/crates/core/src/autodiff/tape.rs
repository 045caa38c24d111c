use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix in CSR form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn from_rows(n_cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut csr = Csr {
            n_rows: rows.len(),
            n_cols,
            indptr: Vec::with_capacity(rows.len() + 1),
            ..Default::default()
        };
        csr.indptr.push(0);
        for row in rows {
            for &(c, v) in row {
                debug_assert!(c < n_cols);
                csr.indices.push(c);
                csr.values.push(v);
            }
            csr.indptr.push(csr.indices.len());
        }
        csr
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    MulConst {
        a: Var,
        factor: Rc<Vec<f64>>,
    },
    Relu {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Mean {
        a: Var,
    },
    Sum {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    MaskedFill {
        a: Var,
        mask: Rc<Vec<bool>>,
    },
    IndexRows {
        a: Var,
        rows: Vec<usize>,
    },
    SpMM {
        a: Var,
        matrix: Rc<Csr>,
    },
    SmoothL1 {
        pred: Var,
        target: Rc<Vec<f64>>,
        beta: f64,
    },
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Values live on the tape; [`Var`]s index them. Constants never receive
/// gradients, parameters always do, and derived values do when any input
/// does.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn add_into(dst: &mut Option<Tensor>, shape: &[usize], src: &[f64]) {
    match dst {
        Some(t) => t.data_mut().iter_mut().zip(src).for_each(|(d, s)| *d += s),
        None => *dst = Some(Tensor::new(shape.to_vec(), src.to_vec()).expect("gradient shape")),
    }
}

/// Sum `g` (shaped like the larger operand) down to a suffix shape of `len` elements.
fn reduce_to_suffix(g: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for chunk in g.chunks(len) {
        out.iter_mut().zip(chunk).for_each(|(o, c)| *o += c);
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves `src` (shaped `shape`) into axis order `perm`.
fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..src.len() {
        let offset: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
        out.push(src[offset]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Batched matrix product. `a` is `[..., m, k]`; `b` is either `[k, n]`
    /// (shared across the batch) or `[..., k, n]` with identical leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if kb != k || (!shared_rhs && &sb[..sb.len() - 2] != lead) {
            return Err(shape_err("matmul", ta, tb));
        }
        let batch: usize = lead.iter().product();
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        if shared_rhs {
            gemm(
                batch * m,
                k,
                n,
                ta.data(),
                false,
                tb.data(),
                false,
                &mut out,
                false,
            );
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &ta.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &tb.data()[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let g = self.any_grad(&[a, b]);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            g,
        ))
    }

    fn check_suffix(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    /// `a + b`, with `b` broadcast over leading axes of `a` (its shape must
    /// be a suffix of `a`'s).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_suffix("add", a, b)?;
        let tb = self.value(b).data().to_vec();
        let ta = self.value(a);
        let mut out = ta.data().to_vec();
        for chunk in out.chunks_mut(tb.len().max(1)) {
            chunk.iter_mut().zip(&tb).for_each(|(o, y)| *o += y);
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    /// Elementwise `a * b` with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_suffix("mul", a, b)?;
        let tb = self.value(b).data().to_vec();
        let ta = self.value(a);
        let mut out = ta.data().to_vec();
        for chunk in out.chunks_mut(tb.len().max(1)) {
            chunk.iter_mut().zip(&tb).for_each(|(o, y)| *o *= y);
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, g))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let g = self.any_grad(&[a]);
        self.push(value, Op::Scale { a, factor }, g)
    }

    /// Elementwise product with a constant of identical size (dropout masks).
    pub fn mul_const(&mut self, a: Var, factor: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if factor.len() != ta.len() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: ta.shape().to_vec(),
                rhs: vec![factor.len()],
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(&factor).map(|(x, f)| x * f).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::MulConst {
                a,
                factor: Rc::new(factor),
            },
            g,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let g = self.any_grad(&[a]);
        self.push(value, Op::Relu { a }, g)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let d = ta.last_dim();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let value = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let g = self.any_grad(&[a]);
        self.push(value, Op::Softmax { a }, g)
    }

    /// Layer normalization over the last axis with learned `gain` and `bias`
    /// (both shaped `[d]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let mut normalized = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                normalized.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let g = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            g,
        ))
    }

    /// Concatenation along the last axis; leading axes must match.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", ta, tb));
        }
        let (p, q) = (ta.last_dim(), tb.last_dim());
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            out.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = p + q;
        let value = Tensor::new(shape, out)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, g))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = ta.data().iter().sum::<f64>() / ta.len() as f64;
        let g = self.any_grad(&[a]);
        self.push(Tensor::scalar(v), Op::Mean { a }, g)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum::<f64>();
        let g = self.any_grad(&[a]);
        self.push(Tensor::scalar(v), Op::Sum { a }, g)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..ta.shape().len()).collect::<Vec<_>>() {
            return Err(Error::Shape {
                op: "permute",
                lhs: ta.shape().to_vec(),
                rhs: perm.to_vec(),
            });
        }
        let (shape, data) = permute_data(ta.data(), ta.shape(), perm);
        let value = Tensor::new(shape, data)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            g,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            let t = self.value(a);
            return Err(shape_err("transpose", t, t));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape { a }, g))
    }

    /// Replaces elements where `mask` is true with `fill`; those positions
    /// pass no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: Rc<Vec<bool>>, fill: f64) -> Result<Var> {
        let ta = self.value(a);
        if mask.len() != ta.len() {
            return Err(Error::Shape {
                op: "masked_fill",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m { fill } else { x })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(value, Op::MaskedFill { a, mask }, g))
    }

    /// Gathers rows of `a` viewed as `[rows, last_dim]`, giving `[rows.len(), last_dim]`.
    pub fn index_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        let d = ta.last_dim();
        if let Some(&bad) = rows.iter().find(|&&r| r >= ta.rows()) {
            return Err(Error::Shape {
                op: "index_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            out.extend_from_slice(&ta.data()[r * d..(r + 1) * d]);
        }
        let value = Tensor::new(vec![rows.len(), d], out)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(value, Op::IndexRows { a, rows }, g))
    }

    /// Constant sparse matrix times `a` viewed as `[matrix.n_cols, last_dim]`.
    pub fn spmm(&mut self, matrix: Rc<Csr>, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let d = ta.last_dim();
        if ta.rows() != matrix.n_cols {
            return Err(Error::Shape {
                op: "spmm",
                lhs: vec![matrix.n_rows, matrix.n_cols],
                rhs: ta.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; matrix.n_rows * d];
        for r in 0..matrix.n_rows {
            let dst = &mut out[r * d..(r + 1) * d];
            for (c, w) in matrix.row(r) {
                let src = &ta.data()[c * d..(c + 1) * d];
                dst.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
            }
        }
        let value = Tensor::new(vec![matrix.n_rows, d], out)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(value, Op::SpMM { a, matrix }, g))
    }

    /// Smooth-L1 loss summed over the last axis and averaged over rows
    /// (`pred` is `[batch, dims]`).
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor, beta: f64) -> Result<Var> {
        let tp = self.value(pred);
        if tp.shape() != target.shape() || tp.shape().len() != 2 {
            return Err(shape_err("smooth_l1", tp, target));
        }
        if !(beta > 0.0) {
            return Err(Error::Config(format!(
                "smooth_l1 beta must be positive, got {beta}"
            )));
        }
        let loss =
            super::loss::smooth_l1_value(tp.data(), target.data(), beta) / tp.shape()[0] as f64;
        let g = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothL1 {
                pred,
                target: Rc::new(target.data().to_vec()),
                beta,
            },
            g,
        ))
    }

    /// Backpropagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: out.shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[output.0] = Some(Tensor::new(out.shape().to_vec(), vec![1.0])?);

        for i in (0..=output.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let gd = g.data();
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                &Op::MatMul {
                    a,
                    b,
                    batch,
                    m,
                    k,
                    n,
                    shared_rhs,
                } => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    if self.needs_grad[a.0] {
                        let mut da = vec![0.0; batch * m * k];
                        if shared_rhs {
                            gemm(batch * m, n, k, gd, false, tb.data(), true, &mut da, false);
                        } else {
                            for s in 0..batch {
                                gemm(
                                    m,
                                    n,
                                    k,
                                    &gd[s * m * n..(s + 1) * m * n],
                                    false,
                                    &tb.data()[s * k * n..(s + 1) * k * n],
                                    true,
                                    &mut da[s * m * k..(s + 1) * m * k],
                                    false,
                                );
                            }
                        }
                        add_into(&mut grads[a.0], ta.shape(), &da);
                    }
                    if self.needs_grad[b.0] {
                        let mut db = vec![0.0; tb.len()];
                        if shared_rhs {
                            gemm(k, batch * m, n, ta.data(), true, gd, false, &mut db, false);
                        } else {
                            for s in 0..batch {
                                gemm(
                                    k,
                                    m,
                                    n,
                                    &ta.data()[s * m * k..(s + 1) * m * k],
                                    true,
                                    &gd[s * m * n..(s + 1) * m * n],
                                    false,
                                    &mut db[s * k * n..(s + 1) * k * n],
                                    false,
                                );
                            }
                        }
                        add_into(&mut grads[b.0], tb.shape(), &db);
                    }
                }
                &Op::Add { a, b } => {
                    if self.needs_grad[a.0] {
                        add_into(&mut grads[a.0], self.shape(a), gd);
                    }
                    if self.needs_grad[b.0] {
                        let tb = self.value(b);
                        add_into(&mut grads[b.0], tb.shape(), &reduce_to_suffix(gd, tb.len()));
                    }
                }
                &Op::Mul { a, b } => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let nb = tb.len().max(1);
                    if self.needs_grad[a.0] {
                        let da: Vec<f64> = gd
                            .iter()
                            .enumerate()
                            .map(|(j, x)| x * tb.data()[j % nb])
                            .collect();
                        add_into(&mut grads[a.0], ta.shape(), &da);
                    }
                    if self.needs_grad[b.0] {
                        let prod: Vec<f64> = gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        add_into(
                            &mut grads[b.0],
                            tb.shape(),
                            &reduce_to_suffix(&prod, tb.len()),
                        );
                    }
                }
                &Op::Scale { a, factor } => {
                    let da: Vec<f64> = gd.iter().map(|x| x * factor).collect();
                    add_into(&mut grads[a.0], self.shape(a), &da);
                }
                Op::MulConst { a, factor } => {
                    let da: Vec<f64> = gd.iter().zip(factor.iter()).map(|(x, f)| x * f).collect();
                    add_into(&mut grads[a.0], self.shape(*a), &da);
                }
                &Op::Relu { a } => {
                    let ta = self.value(a);
                    let da: Vec<f64> = gd
                        .iter()
                        .zip(ta.data())
                        .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                        .collect();
                    add_into(&mut grads[a.0], ta.shape(), &da);
                }
                &Op::Softmax { a } => {
                    let y = &self.values[i];
                    let d = y.last_dim().max(1);
                    let mut da = vec![0.0; y.len()];
                    for ((dr, yr), gr) in da.chunks_mut(d).zip(y.data().chunks(d)).zip(gd.chunks(d))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    add_into(&mut grads[a.0], self.shape(a), &da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let d = tg.len();
                    if self.needs_grad[gain.0] || self.needs_grad[bias.0] {
                        let mut dg = vec![0.0; d];
                        let mut db = vec![0.0; d];
                        for (gr, hr) in gd.chunks(d).zip(normalized.chunks(d)) {
                            for j in 0..d {
                                dg[j] += gr[j] * hr[j];
                                db[j] += gr[j];
                            }
                        }
                        if self.needs_grad[gain.0] {
                            add_into(&mut grads[gain.0], &[d], &dg);
                        }
                        if self.needs_grad[bias.0] {
                            add_into(&mut grads[bias.0], &[d], &db);
                        }
                    }
                    if self.needs_grad[x.0] {
                        let mut dx = vec![0.0; gd.len()];
                        let rows = gd.chunks(d).zip(normalized.chunks(d)).zip(dx.chunks_mut(d));
                        for (r, ((gr, hr), dr)) in rows.enumerate() {
                            let dh: Vec<f64> =
                                gr.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                            let sum_dh: f64 = dh.iter().sum();
                            let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                            let scale = inv_std[r] / d as f64;
                            for j in 0..d {
                                dr[j] = scale * (d as f64 * dh[j] - sum_dh - hr[j] * sum_dh_h);
                            }
                        }
                        add_into(&mut grads[x.0], self.shape(*x), &dx);
                    }
                }
                &Op::Concat { a, b } => {
                    let (p, q) = (self.value(a).last_dim(), self.value(b).last_dim());
                    let rows = gd.len() / (p + q).max(1);
                    if self.needs_grad[a.0] {
                        let mut da = Vec::with_capacity(rows * p);
                        for r in 0..rows {
                            da.extend_from_slice(&gd[r * (p + q)..r * (p + q) + p]);
                        }
                        add_into(&mut grads[a.0], self.shape(a), &da);
                    }
                    if self.needs_grad[b.0] {
                        let mut db = Vec::with_capacity(rows * q);
                        for r in 0..rows {
                            db.extend_from_slice(&gd[r * (p + q) + p..(r + 1) * (p + q)]);
                        }
                        add_into(&mut grads[b.0], self.shape(b), &db);
                    }
                }
                &Op::Mean { a } => {
                    let n = self.value(a).len();
                    let da = vec![gd[0] / n as f64; n];
                    add_into(&mut grads[a.0], self.shape(a), &da);
                }
                &Op::Sum { a } => {
                    let da = vec![gd[0]; self.value(a).len()];
                    add_into(&mut grads[a.0], self.shape(a), &da);
                }
                Op::Permute { a, perm } => {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let (_, da) = permute_data(gd, g.shape(), &inverse);
                    add_into(&mut grads[a.0], self.shape(*a), &da);
                }
                &Op::Reshape { a } => {
                    add_into(&mut grads[a.0], self.shape(a), gd);
                }
                Op::MaskedFill { a, mask } => {
                    let da: Vec<f64> = gd
                        .iter()
                        .zip(mask.iter())
                        .map(|(&x, &m)| if m { 0.0 } else { x })
                        .collect();
                    add_into(&mut grads[a.0], self.shape(*a), &da);
                }
                Op::IndexRows { a, rows } => {
                    let ta = self.value(*a);
                    let d = ta.last_dim();
                    let mut da = vec![0.0; ta.len()];
                    for (k, &r) in rows.iter().enumerate() {
                        da[r * d..(r + 1) * d]
                            .iter_mut()
                            .zip(&gd[k * d..(k + 1) * d])
                            .for_each(|(o, x)| *o += x);
                    }
                    add_into(&mut grads[a.0], ta.shape(), &da);
                }
                Op::SpMM { a, matrix } => {
                    let ta = self.value(*a);
                    let d = ta.last_dim();
                    let mut da = vec![0.0; ta.len()];
                    for r in 0..matrix.n_rows {
                        let src = &gd[r * d..(r + 1) * d];
                        for (c, w) in matrix.row(r) {
                            da[c * d..(c + 1) * d]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, s)| *o += w * s);
                        }
                    }
                    add_into(&mut grads[a.0], ta.shape(), &da);
                }
                Op::SmoothL1 { pred, target, beta } => {
                    let tp = self.value(*pred);
                    let scale = gd[0] / tp.shape()[0] as f64;
                    let dp: Vec<f64> = tp
                        .data()
                        .iter()
                        .zip(target.iter())
                        .map(|(p, t)| scale * super::loss::smooth_l1_slope(p - t, *beta))
                        .collect();
                    add_into(&mut grads[pred.0], tp.shape(), &dp);
                }
            }
        }
        Ok(Gradients(grads))
    }
}
