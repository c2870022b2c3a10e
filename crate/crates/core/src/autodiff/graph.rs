//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and backward is a single reverse sweep. A fresh graph is
//! built for every mini-batch.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Unary ops take one input, binary two, `ConcatRows`
/// any nonzero number.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `(n×k) @ (k×m)`.
    MatMul,
    /// `(n×m) + (m)` broadcast over rows.
    AddBias,
    Add,
    /// Elementwise product.
    Mul,
    /// `scale * x + shift`.
    Affine { scale: f64, shift: f64 },
    Relu,
    Sigmoid,
    Exp,
    Log,
    /// Clamp into `[lo, hi]`; zero gradient where clamping was active.
    Clamp { lo: f64, hi: f64 },
    /// Row-wise log-softmax.
    LogSoftmax,
    /// Stack matrices with equal column counts vertically.
    ConcatRows,
    /// Row-wise outer product `a_i ⊗ b_i` flattened with `a` major, `b` minor.
    OuterFlatten,
    /// Mean over all entries, producing a scalar.
    Mean,
    /// `Σ w_j x_j` over all entries with constant weights, producing a scalar.
    /// Entries with zero weight are skipped, so they may hold `-inf`.
    WeightedSum(Vec<f64>),
    /// Identity forward; multiplies the incoming gradient by `-lambda`.
    GradReverse { lambda: f64 },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::AddBias => "add_bias",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Affine { .. } => "affine",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Clamp { .. } => "clamp",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::ConcatRows => "concat_rows",
            OpKind::OuterFlatten => "outer_flatten",
            OpKind::Mean => "mean",
            OpKind::WeightedSum(_) => "weighted_sum",
            OpKind::GradReverse { .. } => "gradient_reversal",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<OpKind>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    track_params: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    /// Graph whose parameter leaves require gradients.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), param_vars: HashMap::new(), track_params: true }
    }

    /// Graph for evaluation passes: parameters enter as constants.
    pub fn inference() -> Self {
        Graph { track_params: false, ..Graph::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let value = value.with_requires_grad(requires_grad);
        self.nodes.push(Node { value, op: None, inputs: Vec::new(), requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A free leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf holding a copy of a stored parameter. Repeated calls with the
    /// same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.get(id).clone(), self.track_params);
        self.param_vars.insert(id, v);
        v
    }

    /// Constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Evaluates `kind` on `inputs` and records the node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = forward(&kind, &vals)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: value.with_requires_grad(requires_grad),
            op: Some(kind),
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.apply(OpKind::AddBias, &[x, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.apply(OpKind::Affine { scale, shift }, &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(OpKind::Clamp { lo, hi }, &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::LogSoftmax, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::ConcatRows, parts)
    }

    pub fn outer_flatten(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::OuterFlatten, &[a, b])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[x])
    }

    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        self.apply(OpKind::WeightedSum(weights), &[x])
    }

    pub fn gradient_reversal(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("gradient_reversal: lambda must be finite and >= 0, got {lambda}")));
        }
        self.apply(OpKind::GradReverse { lambda }, &[x])
    }

    /// Reverse sweep from a scalar `loss`. Every node that requires a
    /// gradient and lies upstream of `loss` gets its gradient slot filled;
    /// the rest get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(kind) = &node.op {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                let wants: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
                let input_grads = backward_op(kind, &inputs, &node.value, &g, &wants);
                for ((&input, want), ig) in node.inputs.iter().zip(wants).zip(input_grads) {
                    if !want {
                        continue;
                    }
                    let Some(ig) = ig else { continue };
                    match &mut grads[input] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if !node.requires_grad {
                continue;
            }
            let g = grads
                .get_mut(idx)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            node.value.set_grad(g);
        }
        Ok(())
    }

    /// Gradients of every stored parameter after [`Graph::backward`];
    /// parameters that did not take part in the graph get zeros.
    pub fn param_gradients(&self, store: &ParamStore) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        for (id, var) in &self.param_vars {
            if let Some(g) = self.grad(*var) {
                grads.get_mut(*id).copy_from_slice(g);
            }
        }
        grads
    }
}

/// Runs backward from `loss` and collects the parameter gradients.
pub fn backward(graph: &mut Graph, loss: Var, store: &ParamStore) -> Result<Gradients> {
    graph.backward(loss)?;
    Ok(graph.param_gradients(store))
}

fn mismatch(kind: &OpKind, inputs: &[&Tensor]) -> Error {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    Error::shape(kind.name(), format!("{shapes:?}"))
}

fn expect_arity(kind: &OpKind, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::shape(kind.name(), format!("expected {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

fn dims(kind: &OpKind, t: &Tensor, inputs: &[&Tensor]) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| mismatch(kind, inputs))
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    match kind {
        OpKind::MatMul => {
            expect_arity(kind, inputs, 2)?;
            let (n, k) = dims(kind, inputs[0], inputs)?;
            let (k2, m) = dims(kind, inputs[1], inputs)?;
            if inputs[0].shape().len() != 2 || inputs[1].shape().len() != 2 || k != k2 {
                return Err(mismatch(kind, inputs));
            }
            Tensor::matrix(n, m, matmul(inputs[0].data(), inputs[1].data(), n, k, m))
        }
        OpKind::AddBias => {
            expect_arity(kind, inputs, 2)?;
            let (n, m) = dims(kind, inputs[0], inputs)?;
            let bias = inputs[1];
            if bias.numel() != m || bias.dims2().map(|(r, _)| r) != Some(1) {
                return Err(mismatch(kind, inputs));
            }
            let mut out = inputs[0].data().to_vec();
            for row in out.chunks_mut(m) {
                row.iter_mut().zip(bias.data()).for_each(|(o, b)| *o += b);
            }
            Tensor::new(vec![n, m], out)
        }
        OpKind::Add | OpKind::Mul => {
            expect_arity(kind, inputs, 2)?;
            if inputs[0].shape() != inputs[1].shape() {
                return Err(mismatch(kind, inputs));
            }
            let a = inputs[0].data();
            let b = inputs[1].data();
            let data = if *kind == OpKind::Add {
                a.iter().zip(b).map(|(x, y)| x + y).collect()
            } else {
                a.iter().zip(b).map(|(x, y)| x * y).collect()
            };
            Tensor::new(inputs[0].shape().to_vec(), data)
        }
        OpKind::Affine { scale, shift } => {
            expect_arity(kind, inputs, 1)?;
            Ok(map(inputs[0], |x| scale * x + shift))
        }
        OpKind::Relu => {
            expect_arity(kind, inputs, 1)?;
            Ok(map(inputs[0], |x| if x > 0.0 { x } else { 0.0 }))
        }
        OpKind::Sigmoid => {
            expect_arity(kind, inputs, 1)?;
            Ok(map(inputs[0], sigmoid))
        }
        OpKind::Exp => {
            expect_arity(kind, inputs, 1)?;
            Ok(map(inputs[0], f64::exp))
        }
        OpKind::Log => {
            expect_arity(kind, inputs, 1)?;
            Ok(map(inputs[0], f64::ln))
        }
        OpKind::Clamp { lo, hi } => {
            expect_arity(kind, inputs, 1)?;
            if !(lo <= hi) {
                return Err(Error::invalid(format!("clamp: lo {lo} > hi {hi}")));
            }
            Ok(map(inputs[0], |x| x.clamp(*lo, *hi)))
        }
        OpKind::LogSoftmax => {
            expect_arity(kind, inputs, 1)?;
            let (n, m) = dims(kind, inputs[0], inputs)?;
            let mut out = inputs[0].data().to_vec();
            for row in out.chunks_mut(m) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
            Tensor::new(inputs[0].shape().to_vec(), out).inspect(|t| {
                debug_assert_eq!(t.rows(), n);
            })
        }
        OpKind::ConcatRows => {
            if inputs.is_empty() {
                return Err(Error::shape(kind.name(), "no inputs"));
            }
            let cols = dims(kind, inputs[0], inputs)?.1;
            let mut rows = 0;
            let mut data = Vec::new();
            for t in inputs {
                let (r, c) = dims(kind, t, inputs)?;
                if c != cols || t.shape().len() != 2 {
                    return Err(mismatch(kind, inputs));
                }
                rows += r;
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, cols, data)
        }
        OpKind::OuterFlatten => {
            expect_arity(kind, inputs, 2)?;
            let (n, p) = dims(kind, inputs[0], inputs)?;
            let (n2, q) = dims(kind, inputs[1], inputs)?;
            if n != n2 {
                return Err(mismatch(kind, inputs));
            }
            let mut out = Vec::with_capacity(n * p * q);
            for i in 0..n {
                let a = inputs[0].row(i);
                let b = inputs[1].row(i);
                for &af in a {
                    out.extend(b.iter().map(|&bc| af * bc));
                }
            }
            Tensor::matrix(n, p * q, out)
        }
        OpKind::Mean => {
            expect_arity(kind, inputs, 1)?;
            let t = inputs[0];
            Ok(Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64))
        }
        OpKind::WeightedSum(w) => {
            expect_arity(kind, inputs, 1)?;
            if w.len() != inputs[0].numel() {
                return Err(Error::shape(
                    kind.name(),
                    format!("{} weights for shape {:?}", w.len(), inputs[0].shape()),
                ));
            }
            Ok(Tensor::scalar(inputs[0].data().iter().zip(w).filter(|(_, &w)| w != 0.0).map(|(x, w)| x * w).sum()))
        }
        OpKind::GradReverse { .. } => {
            expect_arity(kind, inputs, 1)?;
            Ok(inputs[0].clone().with_requires_grad(false))
        }
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            out_row.iter_mut().zip(b_row).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
    out
}

/// Vector-Jacobian products. Returns one entry per input; `None` where the
/// input does not need a gradient.
fn backward_op(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &[f64],
    wants: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let unary = |f: &dyn Fn() -> Vec<f64>| vec![wants[0].then(f)];
    match kind {
        OpKind::MatMul => {
            let (n, k) = inputs[0].dims2().unwrap();
            let m = inputs[1].cols();
            let (a, b) = (inputs[0].data(), inputs[1].data());
            let ga = wants[0].then(|| {
                // g (n×m) @ bᵀ (m×k)
                let mut ga = vec![0.0; n * k];
                for i in 0..n {
                    let g_row = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let b_row = &b[p * m..(p + 1) * m];
                        ga[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                    }
                }
                ga
            });
            let gb = wants[1].then(|| {
                // aᵀ (k×n) @ g (n×m)
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    let g_row = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        gb[p * m..(p + 1) * m].iter_mut().zip(g_row).for_each(|(o, &gv)| *o += aip * gv);
                    }
                }
                gb
            });
            vec![ga, gb]
        }
        OpKind::AddBias => {
            let m = inputs[1].numel();
            let gb = wants[1].then(|| {
                let mut gb = vec![0.0; m];
                for row in g.chunks(m) {
                    gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
                gb
            });
            vec![wants[0].then(|| g.to_vec()), gb]
        }
        OpKind::Add => vec![wants[0].then(|| g.to_vec()), wants[1].then(|| g.to_vec())],
        OpKind::Mul => {
            let (a, b) = (inputs[0].data(), inputs[1].data());
            vec![
                wants[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                wants[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ]
        }
        OpKind::Affine { scale, .. } => unary(&|| g.iter().map(|v| v * scale).collect()),
        OpKind::Relu => unary(&|| {
            g.iter().zip(inputs[0].data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()
        }),
        OpKind::Sigmoid => unary(&|| g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect()),
        OpKind::Exp => unary(&|| g.iter().zip(out.data()).map(|(g, y)| g * y).collect()),
        OpKind::Log => unary(&|| g.iter().zip(inputs[0].data()).map(|(g, x)| g / x).collect()),
        OpKind::Clamp { lo, hi } => unary(&|| {
            g.iter()
                .zip(inputs[0].data())
                .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                .collect()
        }),
        OpKind::LogSoftmax => unary(&|| {
            let m = out.cols();
            let mut gx = Vec::with_capacity(g.len());
            for (g_row, y_row) in g.chunks(m).zip(out.data().chunks(m)) {
                let total: f64 = g_row.iter().sum();
                gx.extend(g_row.iter().zip(y_row).map(|(g, y)| g - y.exp() * total));
            }
            gx
        }),
        OpKind::ConcatRows => {
            let mut offset = 0;
            inputs
                .iter()
                .zip(wants)
                .map(|(t, &want)| {
                    let len = t.numel();
                    let part = want.then(|| g[offset..offset + len].to_vec());
                    offset += len;
                    part
                })
                .collect()
        }
        OpKind::OuterFlatten => {
            let (n, p) = inputs[0].dims2().unwrap();
            let q = inputs[1].cols();
            let ga = wants[0].then(|| {
                let mut ga = vec![0.0; n * p];
                for i in 0..n {
                    let b = inputs[1].row(i);
                    for f in 0..p {
                        let g_blk = &g[i * p * q + f * q..i * p * q + (f + 1) * q];
                        ga[i * p + f] = g_blk.iter().zip(b).map(|(x, y)| x * y).sum();
                    }
                }
                ga
            });
            let gb = wants[1].then(|| {
                let mut gb = vec![0.0; n * q];
                for i in 0..n {
                    let a = inputs[0].row(i);
                    for (f, &af) in a.iter().enumerate() {
                        let g_blk = &g[i * p * q + f * q..i * p * q + (f + 1) * q];
                        gb[i * q..(i + 1) * q].iter_mut().zip(g_blk).for_each(|(o, gv)| *o += af * gv);
                    }
                }
                gb
            });
            vec![ga, gb]
        }
        OpKind::Mean => {
            let n = inputs[0].numel();
            unary(&|| vec![g[0] / n as f64; n])
        }
        OpKind::WeightedSum(w) => unary(&|| w.iter().map(|w| w * g[0]).collect()),
        OpKind::GradReverse { lambda } => unary(&|| g.iter().map(|v| -lambda * v).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(g: &mut Graph, data: &[f64]) -> Var {
        g.variable(Tensor::matrix(1, data.len(), data.to_vec()).unwrap())
    }

    #[test]
    fn relu_sigmoid_log_softmax_values() {
        let mut g = Graph::new();
        let x = vector(&mut g, &[-1.0, 2.0]);
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);

        let z = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5]);

        let u = vector(&mut g, &[0.0, 0.0]);
        let ls = g.log_softmax(u).unwrap();
        for &v in g.value(ls).data() {
            assert!((v + std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        assert!(g.add(a, c).is_err());
        assert!(g.outer_flatten(a, c).is_err());
        assert!(g.weighted_sum(a, vec![1.0; 5]).is_err());
    }

    #[test]
    fn grad_reverse_forward_and_backward() {
        for (lambda, expected) in [(1.0, [-0.3, 0.2]), (0.0, [0.0, 0.0])] {
            let mut g = Graph::new();
            let x = vector(&mut g, &[1.0, 2.0]);
            let y = g.gradient_reversal(x, lambda).unwrap();
            assert_eq!(g.value(y).data(), &[1.0, 2.0]);
            let loss = g.weighted_sum(y, vec![0.3, -0.2]).unwrap();
            g.backward(loss).unwrap();
            let gx = g.grad(x).unwrap();
            assert_eq!(gx[0], expected[0]);
            assert_eq!(gx[1], expected[1]);
        }
    }

    #[test]
    fn power_rule_and_disconnected_node() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let unused = g.variable(Tensor::scalar(5.0));
        let sq = g.mul(x, x).unwrap();
        g.backward(sq).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
        assert_eq!(g.grad(unused).unwrap(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = vector(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_carry_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.variable(Tensor::scalar(1.5));
        let y = g.mul(c, x).unwrap();
        assert!(g.requires_grad(y));
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
        assert!(g.grad(c).is_none());
    }
}
