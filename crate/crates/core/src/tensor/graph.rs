use super::kernels::{matmul_into, Transpose};
use super::{as_matrix, axis_split, Reduction, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise functions with registered derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Exp,
    Log,
    Neg,
    Square,
    Tanh,
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Neg => -x,
            Unary::Square => x * x,
            Unary::Tanh => x.tanh(),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Neg => -1.0,
            Unary::Square => 2.0 * x,
            Unary::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Map(Var, Unary),
    Clamp(Var, f64, f64),
    Reduce(Var, Reduction, Option<usize>),
    SliceCols(Var, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of tensor operations for reverse-mode
/// differentiation.
///
/// Parents always precede their children, so the node order is a
/// topological order and [`Graph::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Stop-gradient: a constant carrying `x`'s current value.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn value(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    fn rg(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let (m, k) = as_matrix(va)?;
        let (k2, n) = as_matrix(vb)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            m,
            k,
            n,
            va.data(),
            Transpose::No,
            vb.data(),
            Transpose::No,
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, rg))
    }

    /// Matrix plus a row vector broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let vb = self.value(bias);
        let (m, n) = as_matrix(vx)?;
        if vb.len() != n {
            return Err(Error::Dimension(format!(
                "bias of length {} cannot be added to {m}x{n}",
                vb.len()
            )));
        }
        let mut out = vx.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddBias(x, bias), value, rg))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        if va.shape() != vb.shape() {
            return Err(Error::Dimension(format!(
                "elementwise operands differ in shape: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.elementwise(a, |x| c * x);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.elementwise(a, |x| x + c);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), value, rg)
    }

    fn elementwise(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        let out = va.data().iter().map(|&x| f(x)).collect();
        Tensor {
            shape: va.shape().to_vec(),
            data: out,
        }
    }

    pub fn map(&mut self, a: Var, f: Unary) -> Result<Var> {
        if f == Unary::Log {
            if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let value = self.elementwise(a, |x| f.apply(x));
        let rg = self.rg(a);
        Ok(self.push(Op::Map(a, f), value, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Unary::Relu).expect("relu is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Unary::Exp).expect("exp is total")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Unary::Square).expect("square is total")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.map(a, Unary::Neg).expect("neg is total")
    }

    /// Clamp to `[lo, hi]`; the gradient passes only where the input is
    /// strictly inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.elementwise(a, |x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(Op::Clamp(a, lo, hi), value, rg)
    }

    pub fn reduce(&mut self, a: Var, kind: Reduction, axis: Option<usize>) -> Result<Var> {
        let value = self.value(a).reduce(kind, axis)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reduce(a, kind, axis), value, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, Reduction::Sum, None).expect("full reduction")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, Reduction::Mean, None).expect("full reduction")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        let (m, n) = as_matrix(va)?;
        if start >= end || end > n {
            return Err(Error::Dimension(format!(
                "column range {start}..{end} out of bounds for {n} columns"
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for row in va.data().chunks_exact(n) {
            out.extend_from_slice(&row[start..end]);
        }
        let value = Tensor::matrix(m, w, out)?;
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols(a, start), value, rg))
    }

    /// Accumulated gradient of the last [`Graph::backward`] root with
    /// respect to `x`; zeros when `x` was not reached.
    pub fn grad(&self, x: Var) -> Tensor {
        let shape = self.value(x).shape().to_vec();
        match self.grads.get(x.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }

    /// Takes the gradient buffer of `x`, leaving zeros behind.
    pub fn take_grad(&mut self, x: Var) -> Vec<f64> {
        let n = self.value(x).len();
        self.grads
            .get_mut(x.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| vec![0.0; n])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only leaves keep gradients, matching the usual autograd contract.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = self.value(a);
                let vb = self.value(b);
                let (m, k) = as_matrix(va).expect("checked in forward");
                let n = vb.len() / k;
                if wants(a) {
                    // dA = dC · Bᵀ
                    let acc = slot(grads, a, m * k);
                    matmul_into(m, n, k, g, Transpose::No, vb.data(), Transpose::Yes, acc, 1.0);
                }
                if wants(b) {
                    // dB = Aᵀ · dC
                    let acc = slot(grads, b, k * n);
                    matmul_into(k, m, n, va.data(), Transpose::Yes, g, Transpose::No, acc, 1.0);
                }
            }
            Op::AddBias(x, bias) => {
                if wants(x) {
                    axpy(slot(grads, x, g.len()), g, 1.0);
                }
                if wants(bias) {
                    let n = self.value(bias).len();
                    let acc = slot(grads, bias, n);
                    for row in g.chunks_exact(n) {
                        for (a, r) in acc.iter_mut().zip(row) {
                            *a += r;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    axpy(slot(grads, a, g.len()), g, 1.0);
                }
                if wants(b) {
                    axpy(slot(grads, b, g.len()), g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    axpy(slot(grads, a, g.len()), g, 1.0);
                }
                if wants(b) {
                    axpy(slot(grads, b, g.len()), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let vb = self.value(b).data();
                    let acc = slot(grads, a, g.len());
                    for ((s, gi), y) in acc.iter_mut().zip(g).zip(vb) {
                        *s += gi * y;
                    }
                }
                if wants(b) {
                    let va = self.value(a).data();
                    let acc = slot(grads, b, g.len());
                    for ((s, gi), x) in acc.iter_mut().zip(g).zip(va) {
                        *s += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    axpy(slot(grads, a, g.len()), g, c);
                }
            }
            Op::AddScalar(a) => {
                if wants(a) {
                    axpy(slot(grads, a, g.len()), g, 1.0);
                }
            }
            Op::Map(a, f) => {
                if wants(a) {
                    let vx = self.value(a).data();
                    let acc = slot(grads, a, g.len());
                    for (((s, gi), x), y) in acc.iter_mut().zip(g).zip(vx).zip(out.data()) {
                        *s += gi * f.derivative(*x, *y);
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                if wants(a) {
                    let vx = self.value(a).data();
                    let acc = slot(grads, a, g.len());
                    for ((s, gi), x) in acc.iter_mut().zip(g).zip(vx) {
                        if *x > lo && *x < hi {
                            *s += gi;
                        }
                    }
                }
            }
            Op::Reduce(a, kind, axis) => {
                if wants(a) {
                    let shape = self.value(a).shape().to_vec();
                    let total: usize = shape.iter().product();
                    let acc = slot(grads, a, total);
                    match axis {
                        None => {
                            let w = match kind {
                                Reduction::Sum => g[0],
                                Reduction::Mean => g[0] / total as f64,
                            };
                            acc.iter_mut().for_each(|s| *s += w);
                        }
                        Some(ax) => {
                            let (outer, len, inner) = axis_split(&shape, ax);
                            let norm = match kind {
                                Reduction::Sum => 1.0,
                                Reduction::Mean => 1.0 / len as f64,
                            };
                            for o in 0..outer {
                                for j in 0..len {
                                    let base = (o * len + j) * inner;
                                    for i in 0..inner {
                                        acc[base + i] += norm * g[o * inner + i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if wants(a) {
                    let va = self.value(a);
                    let n = va.cols();
                    let w = out.cols();
                    let acc = slot(grads, a, va.len());
                    for (r, grow) in g.chunks_exact(w).enumerate() {
                        let dst = &mut acc[r * n + start..r * n + start + w];
                        for (d, s) in dst.iter_mut().zip(grow) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(acc: &mut [f64], g: &[f64], c: f64) {
    for (a, x) in acc.iter_mut().zip(g) {
        *a += c * x;
    }
}
