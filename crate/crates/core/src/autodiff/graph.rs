//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A loss is expressed as a closure that records primitive operations on a
//! [`Graph`]. Parameters are leaves looked up by name in a [`ParamSet`];
//! calling [`grad`] runs the forward pass, then walks the tape backwards and
//! returns the loss value with one gradient tensor per parameter.
//!
//! The primitive set is exactly what the text classifier and the scalar test
//! objectives need: dense and sparse-input matrix multiply, (broadcast) add
//! and subtract, element-wise multiply, scaling, `tanh`, `relu`, fused
//! softmax cross-entropy, and sum / mean reductions.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::{GradSet, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Constant sparse input matrix: one `(column, value)` list per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows<S> {
    cols: usize,
    rows: Vec<Vec<(usize, S)>>,
}

impl<S: Scalar> SparseRows<S> {
    pub fn new(cols: usize, rows: Vec<Vec<(usize, S)>>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            if let Some((c, _)) = row.iter().find(|(c, _)| *c >= cols) {
                return Err(Error::shape(
                    "sparse input",
                    format!("row {r} has column {c} outside [0, {cols})"),
                ));
            }
        }
        Ok(Self { cols, rows })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, S)>] {
        &self.rows
    }

    pub fn to_dense(&self) -> Vec<Vec<S>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![S::zero(); self.cols];
                for &(c, v) in row {
                    dense[c] += v;
                }
                dense
            })
            .collect()
    }
}

enum Op<'a, S> {
    Param(String),
    Constant,
    MatMul(Var, Var),
    SparseMatMul(&'a SparseRows<S>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Tanh(Var),
    Relu(Var),
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<S>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Tensor<S>>,
    op: Op<'a, S>,
}

/// Recording context for one forward pass.
pub struct Graph<'a, S: Scalar> {
    params: &'a ParamSet<S>,
    nodes: Vec<Node<'a, S>>,
    leaves: HashMap<String, Var>,
}

impl<'a, S: Scalar> Graph<'a, S> {
    fn new(params: &'a ParamSet<S>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            leaves: HashMap::new(),
        }
    }

    fn push(&mut self, value: Cow<'a, Tensor<S>>, op: Op<'a, S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Tensor<S>, op: Op<'a, S>) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Leaf for a named parameter.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.leaves.get(name) {
            return Ok(v);
        }
        let params = self.params;
        let tensor = params
            .get(name)
            .ok_or_else(|| Error::shape(name, "no such parameter"))?;
        let var = self.push(Cow::Borrowed(tensor), Op::Param(name.to_string()));
        self.leaves.insert(name.to_string(), var);
        Ok(var)
    }

    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.owned(tensor, Op::Constant)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = dense_matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.owned(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// Sparse constant input times a dense `[cols, n]` weight.
    pub fn sparse_matmul(&mut self, input: &'a SparseRows<S>, weight: Var) -> Result<Var> {
        let sw = self.shape(weight);
        if sw.len() != 2 || sw[0] != input.cols() {
            return Err(Error::shape(
                "sparse_matmul",
                format!("input has {} columns, weight is {sw:?}", input.cols()),
            ));
        }
        if input.num_rows() == 0 {
            return Err(Error::shape("sparse_matmul", "empty batch"));
        }
        let n = sw[1];
        let w = self.value(weight).data();
        let mut out = vec![S::zero(); input.num_rows() * n];
        for (r, row) in input.rows().iter().enumerate() {
            let dst = &mut out[r * n..(r + 1) * n];
            for &(c, v) in row {
                for (o, &wv) in dst.iter_mut().zip(&w[c * n..(c + 1) * n]) {
                    *o += v * wv;
                }
            }
        }
        let t = Tensor::new(vec![input.num_rows(), n], out)?;
        Ok(self.owned(t, Op::SparseMatMul(input, weight)))
    }

    fn broadcast_check(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let row_broadcast = sa.len() == 2 && sb.len() == 1 && sb[0] == sa[1];
        if sa == sb || row_broadcast {
            Ok(())
        } else {
            Err(Error::shape(what, format!("{sa:?} vs {sb:?}")))
        }
    }

    /// `a + b`; `b` may be a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let out = broadcast_apply(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.owned(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("sub", a, b)?;
        let out = broadcast_apply(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.owned(out, Op::Sub(a, b)))
    }

    /// Element-wise product of equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mul", format!("{sa:?} vs {sb:?}")));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.owned(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.owned(out, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(S::tanh);
        self.owned(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > S::zero() { x } else { S::zero() });
        self.owned(out, Op::Relu(a))
    }

    /// Per-row cross-entropy of `softmax(logits)` against integer labels,
    /// computed in log-sum-exp form. Output shape `[m]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {shape:?} with {} labels", labels.len()),
            ));
        }
        let (m, c) = (shape[0], shape[1]);
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("label {bad} >= {c} classes"),
            ));
        }
        let x = self.value(logits).data();
        let mut probs = Vec::with_capacity(m * c);
        let mut losses = Vec::with_capacity(m);
        for (r, &y) in labels.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            losses.push(lse - row[y]);
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let probs = Tensor::new(vec![m, c], probs)?;
        let out = Tensor::new(vec![m], losses)?;
        Ok(self.owned(
            out,
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: S = self.value(a).data().iter().copied().sum();
        self.owned(Tensor::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = S::from_usize(t.len()).unwrap();
        let total: S = t.data().iter().copied().sum();
        self.owned(Tensor::scalar(total / n), Op::Mean(a))
    }

    fn backward(&self, loss: Var) -> Result<GradSet<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "loss",
                format!("expected a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut out = GradSet::zeros_like(self.params);
        let mut adj: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(self.shape(loss), S::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    let slot = out.get_mut(name).expect("leaf names come from params");
                    slot.add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    // dA = G B^T, dB = A^T G
                    let mut da = vec![S::zero(); m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = S::zero();
                            for j in 0..n {
                                acc += g.data()[i * n + j] * vb.data()[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    let mut db = vec![S::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = va.data()[i * k + p];
                            let grow = &g.data()[i * n..(i + 1) * n];
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::new(vec![m, k], da)?);
                    accumulate(&mut adj, *b, Tensor::new(vec![k, n], db)?);
                }
                Op::SparseMatMul(input, w) => {
                    let shape = self.shape(*w).to_vec();
                    let n = shape[1];
                    let mut dw = Tensor::zeros(&shape);
                    let data = dw.data_mut();
                    for (r, row) in input.rows().iter().enumerate() {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        for &(c, v) in row {
                            for (d, &gv) in data[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                *d += v * gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *w, dw);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let negate = matches!(node.op, Op::Sub(..));
                    let gb = reduce_to_shape(&g, self.shape(*b));
                    let gb = if negate { gb.map(|v| -v) } else { gb };
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |gv, bv| gv * bv);
                    let gb = g.zip_map(self.value(*a), |gv, av| gv * av);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    accumulate(&mut adj, *a, g.map(|v| v * f));
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * (S::one() - y * y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    // derivative at exactly 0 is 0
                    let ga = g.zip_map(
                        self.value(*a),
                        |gv, x| if x > S::zero() { gv } else { S::zero() },
                    );
                    accumulate(&mut adj, *a, ga);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let c = probs.shape()[1];
                    let mut d = probs.clone();
                    let data = d.data_mut();
                    for (r, &y) in labels.iter().enumerate() {
                        let gr = g.data()[r];
                        for j in 0..c {
                            let indicator = if j == y { S::one() } else { S::zero() };
                            data[r * c + j] = gr * (data[r * c + j] - indicator);
                        }
                    }
                    accumulate(&mut adj, *logits, d);
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    accumulate(&mut adj, *a, Tensor::filled(self.shape(*a), gv));
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let n = S::from_usize(shape.iter().product()).unwrap();
                    accumulate(&mut adj, *a, Tensor::filled(shape, g.item() / n));
                }
            }
        }
        Ok(out)
    }
}

fn dense_matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in dst.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn broadcast_apply<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let n = b.len();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, b.data()[i % n]))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn reduce_to_shape<S: Scalar>(g: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if g.shape() == shape {
        return g.clone();
    }
    let n = shape[0];
    let mut out = vec![S::zero(); n];
    for (i, &v) in g.data().iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::new(shape.to_vec(), out).expect("row vector")
}

fn accumulate<S: Scalar>(adj: &mut [Option<Tensor<S>>], var: Var, g: Tensor<S>) {
    match &mut adj[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Forward value of a scalar loss.
pub fn evaluate<'a, S, F>(loss_fn: F, params: &'a ParamSet<S>) -> Result<S>
where
    S: Scalar,
    F: FnOnce(&mut Graph<'a, S>) -> Result<Var>,
{
    let mut graph = Graph::new(params);
    let loss = loss_fn(&mut graph)?;
    let value = graph.value(loss);
    if value.len() != 1 {
        return Err(Error::shape(
            "loss",
            format!("expected a scalar, got shape {:?}", value.shape()),
        ));
    }
    Ok(value.item())
}

/// Loss value and exact gradient with respect to every parameter in
/// `params`. Parameters the loss does not touch receive zero gradients.
pub fn grad<'a, S, F>(loss_fn: F, params: &'a ParamSet<S>) -> Result<(S, GradSet<S>)>
where
    S: Scalar,
    F: FnOnce(&mut Graph<'a, S>) -> Result<Var>,
{
    let mut graph = Graph::new(params);
    let loss = loss_fn(&mut graph)?;
    let grads = graph.backward(loss)?;
    Ok((graph.value(loss).item(), grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(v: f64) -> ParamSet<f64> {
        ParamSet::new().with("theta", Tensor::scalar(v)).unwrap()
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let p = ParamSet::new()
            .with("w", Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap())
            .unwrap()
            .with("b", Tensor::scalar(4.0))
            .unwrap();
        let (loss, g) = grad(|g| Ok(g.constant(Tensor::scalar(5.0))), &p).unwrap();
        assert_eq!(loss, 5.0);
        assert_eq!(g, GradSet::zeros_like(&p));
    }

    #[test]
    fn square_at_three() {
        let p = theta(3.0);
        let (loss, g) = grad(
            |g| {
                let t = g.param("theta")?;
                let sq = g.mul(t, t)?;
                Ok(g.sum(sq))
            },
            &p,
        )
        .unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(g.get("theta").unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_xent_is_stable_for_huge_logits() {
        let p = ParamSet::new()
            .with(
                "z",
                Tensor::new(vec![1, 2], vec![1000.0f64, -1000.0]).unwrap(),
            )
            .unwrap();
        let (loss, g) = grad(
            |g| {
                let z = g.param("z")?;
                let l = g.softmax_cross_entropy(z, &[1])?;
                Ok(g.mean(l))
            },
            &p,
        )
        .unwrap();
        assert!((loss - 2000.0).abs() < 1e-9);
        assert!(g.get("z").unwrap().is_finite());
    }

    #[test]
    fn relu_kink_has_zero_derivative() {
        let p = ParamSet::new()
            .with("x", Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap())
            .unwrap();
        let (_, g) = grad(
            |g| {
                let x = g.param("x")?;
                let r = g.relu(x);
                Ok(g.sum(r))
            },
            &p,
        )
        .unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let p = ParamSet::new()
            .with("a", Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap())
            .unwrap()
            .with("b", Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap())
            .unwrap();
        let err = grad(
            |g| {
                let a = g.param("a")?;
                let b = g.param("b")?;
                g.matmul(a, b)
            },
            &p,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));

        let err = evaluate(|g| g.param("missing"), &p).unwrap_err();
        assert!(err.to_string().contains("`missing`"));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let p = theta(1.0);
        let err = grad(|g| Ok(g.constant(Tensor::zeros(&[2]))), &p).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn works_in_single_precision() {
        let p = ParamSet::new()
            .with("theta", Tensor::scalar(3.0f32))
            .unwrap();
        let (loss, g) = grad(
            |g| {
                let t = g.param("theta")?;
                let sq = g.mul(t, t)?;
                Ok(g.sum(sq))
            },
            &p,
        )
        .unwrap();
        assert_eq!(loss, 9.0f32);
        assert_eq!(g.get("theta").unwrap().item(), 6.0f32);
    }
}
