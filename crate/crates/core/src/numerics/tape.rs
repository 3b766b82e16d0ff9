//! Reverse-mode differentiation over a closed set of tensor operations.
//!
//! The op set is exactly what the three model families need: affine maps,
//! ReLU, constant masks (dropout), constant offsets (gate noise), scaling,
//! row softmax, gate-weighted mixtures, column concatenation, and the two
//! training losses. Ops outside this set cannot be expressed; shape errors
//! are reported when a node is recorded, not during the backward pass.

use crate::error::{Error, Result};

use super::kernels::softmax_in_place;
use super::tensor::{gemm, Tensor};

/// Lower clamp applied to probabilities before taking their log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AppendOnes(Var),
    AddBias(Var, Var),
    Relu(Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    Mixture(Var, Vec<Var>),
    ConcatCols(Vec<Var>),
    SumAll(Var),
    Mse(Var, Vec<f64>),
    Nll(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(false, false, m, k, n, 1.0, self.value(a).data(), self.value(b).data(), 0.0, out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` with `a[m×k]`, `b[n×k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_t", a)?;
        let (n, k2) = self.matrix_dims("matmul_t", b)?;
        if k != k2 {
            return Err(Error::dim("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(false, true, m, k, n, 1.0, self.value(a).data(), self.value(b).data(), 0.0, out.data_mut());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    /// Appends a constant column of ones: `[x, 1]`.
    pub fn append_ones(&mut self, a: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("append_ones", a)?;
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * (k + 1));
        for r in 0..m {
            data.extend_from_slice(src.row(r));
            data.push(1.0);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, k + 1, data), Op::AppendOnes(a), rg))
    }

    /// Adds a rank-1 bias to every row.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.matrix_dims("add_bias", a)?;
        if self.shape(b) != [n] {
            return Err(Error::dim("add_bias", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddBias(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::dim("mul_const", self.shape(a), c.shape()));
        }
        let mut out = self.value(a).clone();
        for (v, m) in out.data_mut().iter_mut().zip(c.data()) {
            *v *= m;
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    /// Elementwise sum with a constant (gate noise).
    pub fn add_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::dim("add_const", self.shape(a), c.shape()));
        }
        let mut out = self.value(a).clone();
        for (v, m) in out.data_mut().iter_mut().zip(c.data()) {
            *v += m;
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::AddConst(a), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, k) = self.matrix_dims("softmax_rows", a)?;
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_mut(k) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    /// `out[r, c] = Σ_k gate[r, k] · experts[k][r, c]`.
    pub fn mixture(&mut self, gate: Var, experts: &[Var]) -> Result<Var> {
        let (m, k) = self.matrix_dims("mixture", gate)?;
        if k != experts.len() || k == 0 {
            return Err(Error::dim("mixture", self.shape(gate), &[experts.len()]));
        }
        let (m0, c) = self.matrix_dims("mixture", experts[0])?;
        for &e in experts {
            if self.shape(e) != [m0, c] || m0 != m {
                return Err(Error::dim("mixture", self.shape(gate), self.shape(e)));
            }
        }
        let parts: Vec<&Tensor> = experts.iter().map(|&e| self.value(e)).collect();
        let out = mix(self.value(gate), &parts);
        let rg = self.rg(gate) || experts.iter().any(|&e| self.rg(e));
        Ok(self.push(out, Op::Mixture(gate, experts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.matrix_dims("concat_cols", p)?;
        }
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&vals)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::SumAll(a), rg)
    }

    /// Mean squared error of a single-column prediction against `target`.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.cols() != 1 {
            return Err(Error::dim("mse", p.shape(), &[target.len()]));
        }
        if target.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let loss = p
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / target.len() as f64;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target.to_vec()), rg))
    }

    /// Mean negative log-probability of the target class, probabilities
    /// floored at [`PROB_FLOOR`].
    pub fn nll(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.matrix_dims("nll", probs)?;
        if m != targets.len() {
            return Err(Error::dim("nll", self.shape(probs), &[targets.len()]));
        }
        if m == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Domain(format!("class index {t} out of range for {c} classes")));
        }
        let p = self.value(probs);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -p.get(r, t).max(PROB_FLOOR).ln())
            .sum::<f64>()
            / m as f64;
        let rg = self.rg(probs);
        Ok(self.push(Tensor::scalar(loss), Op::Nll(probs, targets.to_vec()), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    gemm(false, true, m, n, k, 1.0, g.data(), self.value(*b).data(), 0.0, da.data_mut());
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(&[k, n]);
                    gemm(true, false, k, m, n, 1.0, self.value(*a).data(), g.data(), 0.0, db.data_mut());
                    accumulate(grads, *b, db);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.rg(*a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    gemm(false, false, m, n, k, 1.0, g.data(), self.value(*b).data(), 0.0, da.data_mut());
                    accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(&[n, k]);
                    gemm(true, false, n, m, k, 1.0, g.data(), self.value(*a).data(), 0.0, db.data_mut());
                    accumulate(grads, *b, db);
                }
            }
            Op::AppendOnes(a) => {
                if self.rg(*a) {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let mut da = Vec::with_capacity(m * k);
                    for r in 0..m {
                        da.extend_from_slice(&g.row(r)[..k]);
                    }
                    accumulate(grads, *a, Tensor::matrix(m, k, da));
                }
            }
            Op::AddBias(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, Tensor::vector(db));
                }
            }
            Op::Relu(a) => {
                if self.rg(*a) {
                    let mut da = g.clone();
                    for (d, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::MulConst(a, c) => {
                let mut da = g.clone();
                for (d, m) in da.data_mut().iter_mut().zip(c.data()) {
                    *d *= m;
                }
                accumulate(grads, *a, da);
            }
            Op::AddConst(a) => accumulate(grads, *a, g.clone()),
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::SoftmaxRows(a) => {
                let k = g.cols();
                let mut da = g.clone();
                for (drow, yrow) in da.data_mut().chunks_mut(k).zip(node.value.data().chunks(k)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d = y * (*d - dot);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Mixture(gate, experts) => {
                let gv = self.value(*gate);
                let (m, k) = (gv.rows(), gv.cols());
                if self.rg(*gate) {
                    let mut dg = Tensor::zeros(&[m, k]);
                    for (j, &e) in experts.iter().enumerate() {
                        let ev = self.value(e);
                        for r in 0..m {
                            let s: f64 = g.row(r).iter().zip(ev.row(r)).map(|(a, b)| a * b).sum();
                            dg.data_mut()[r * k + j] = s;
                        }
                    }
                    accumulate(grads, *gate, dg);
                }
                for (j, &e) in experts.iter().enumerate() {
                    if !self.rg(e) {
                        continue;
                    }
                    let mut de = g.clone();
                    let c = de.cols();
                    for (r, row) in de.data_mut().chunks_mut(c).enumerate() {
                        let w = gv.get(r, j);
                        for v in row.iter_mut() {
                            *v *= w;
                        }
                    }
                    accumulate(grads, e, de);
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(grads, p, Tensor::matrix(m, w, dp));
                    }
                    offset += w;
                }
            }
            Op::SumAll(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, Tensor::filled(self.shape(*a), s));
            }
            Op::Mse(pred, target) => {
                let s = g.data()[0] * 2.0 / target.len() as f64;
                let p = self.value(*pred);
                let d: Vec<f64> = p.data().iter().zip(target).map(|(a, b)| s * (a - b)).collect();
                accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), d));
            }
            Op::Nll(probs, targets) => {
                let p = self.value(*probs);
                let s = g.data()[0] / targets.len() as f64;
                let mut d = Tensor::zeros(p.shape());
                let c = p.cols();
                for (r, &t) in targets.iter().enumerate() {
                    let v = p.get(r, t);
                    if v >= PROB_FLOOR {
                        d.data_mut()[r * c + t] = -s / v;
                    }
                }
                accumulate(grads, *probs, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(d.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Gate-weighted sum of expert outputs; summation runs over experts in index
/// order so every caller gets bit-identical results.
pub fn mix(gate: &Tensor, experts: &[&Tensor]) -> Tensor {
    let m = gate.rows();
    let c = experts[0].cols();
    let mut out = Tensor::zeros(&[m, c]);
    for r in 0..m {
        let grow = gate.row(r);
        let orow = out.row_mut(r);
        for (k, e) in experts.iter().enumerate() {
            let w = grow[k];
            for (o, v) in orow.iter_mut().zip(e.row(r)) {
                *o += w * v;
            }
        }
    }
    out
}

/// Gradients from one reverse pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `like`'s shape when `v` did not
    /// influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_linear_map_gives_input_per_row() {
        // loss = sum(x · W) with x[1×3], W[3×2]: ∂/∂W[i, j] = x[i]
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]));
        let w = tape.param(Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum_all(y);
        let g = tape.backward(loss).unwrap();
        let gw = g.get(w).unwrap();
        assert_eq!(gw.data(), &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn shape_errors_at_record_time() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 3]));
        let b = tape.param(Tensor::zeros(&[2, 3]));
        assert!(tape.matmul(a, b).is_err());
        let bias = tape.param(Tensor::zeros(&[2]));
        assert!(tape.add_bias(a, bias).is_err());
        assert!(tape.nll(a, &[0, 5]).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn mixture_weights_outputs() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::matrix(1, 2, vec![0.25, 0.75]));
        let e1 = tape.constant(Tensor::matrix(1, 1, vec![1.0]));
        let e2 = tape.constant(Tensor::matrix(1, 1, vec![3.0]));
        let out = tape.mixture(g, &[e1, e2]).unwrap();
        assert_eq!(tape.value(out).data(), &[2.5]);
    }
}
