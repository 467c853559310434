use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::kernels::{gemm_acc, gemm_nt_acc, gemm_tn_acc, sum_f64};
use super::{DenseArray, NumError, Real};

/// Sentinel gather index producing a zero element (used for convolution padding).
pub const GATHER_ZERO: u32 = u32::MAX;

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named arrays bound to graph leaves at forward time.
pub trait ArraySource<T> {
    fn lookup(&self, name: &str) -> Option<&DenseArray<T>>;
}

impl<T> ArraySource<T> for BTreeMap<String, DenseArray<T>> {
    fn lookup(&self, name: &str) -> Option<&DenseArray<T>> {
        self.get(name)
    }
}

impl<T> ArraySource<T> for HashMap<String, DenseArray<T>> {
    fn lookup(&self, name: &str) -> Option<&DenseArray<T>> {
        self.get(name)
    }
}

impl<T, A: ArraySource<T>, B: ArraySource<T>> ArraySource<T> for (&A, &B) {
    fn lookup(&self, name: &str) -> Option<&DenseArray<T>> {
        self.0.lookup(name).or_else(|| self.1.lookup(name))
    }
}

/// Gradients keyed by parameter name.
pub type Gradients<T = f32> = BTreeMap<String, DenseArray<T>>;

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(String),
    Const,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize, len: usize },
    Mean(NodeId),
    SumSquares(NodeId),
    Gather { x: NodeId, index: Arc<[u32]>, dims: Vec<usize> },
    NormalizeRows(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "multiply",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Mean(_) => "mean",
            Op::SumSquares(_) => "sum_of_squares",
            Op::Gather { .. } => "gather",
            Op::NormalizeRows(_) => "normalize_rows",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Const => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Mean(a)
            | Op::SumSquares(a)
            | Op::NormalizeRows(a) => vec![*a],
            Op::Slice { x, .. } | Op::Gather { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op,
    value: Option<DenseArray<T>>,
    needs_grad: bool,
}

/// How the right operand of an elementwise op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    Scalar,
    /// Right operand is one row repeated for every row of the left.
    Row,
    /// Right operand is one column repeated across the left's columns.
    Col,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    let alen: usize = a.iter().product();
    let blen: usize = b.iter().product();
    let cols = *a.last()?;
    let rows = alen / cols;
    if a == b {
        Some(Broadcast::Same)
    } else if blen == 1 {
        Some(Broadcast::Scalar)
    } else if blen == cols && b.last() == Some(&cols) {
        Some(Broadcast::Row)
    } else if blen == rows && b.last() == Some(&1) {
        Some(Broadcast::Col)
    } else {
        None
    }
}

#[inline]
fn bindex(kind: Broadcast, i: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Scalar => 0,
        Broadcast::Row => i % cols,
        Broadcast::Col => i / cols,
    }
}

/// Sum `g` down to the shape of a broadcast right operand (f64 accumulation).
fn reduce_broadcast<T: Real>(kind: Broadcast, g: &[T], cols: usize, blen: usize) -> Vec<T> {
    if kind == Broadcast::Same {
        return g.to_vec();
    }
    let mut acc = vec![0.0f64; blen];
    for (i, &v) in g.iter().enumerate() {
        acc[bindex(kind, i, cols)] += v.as_f64();
    }
    acc.into_iter().map(T::of).collect()
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Define-then-run computation graph with reverse-mode gradients.
///
/// Leaves are named inputs (no gradient), named parameters (gradient
/// reported by [`Graph::backward`]) or constants. Nodes may be appended after
/// a forward pass; the next forward only evaluates the new nodes.
#[derive(Clone, Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    output: Option<NodeId>,
    evaluated: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), output: None, evaluated: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Option<DenseArray<T>>) -> NodeId {
        let needs_grad = match &op {
            Op::Param(_) => true,
            other => other.inputs().iter().any(|id| self.nodes[id.0].needs_grad),
        };
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()), None)
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        self.push(Op::Param(name.to_string()), None)
    }

    pub fn constant(&mut self, value: DenseArray<T>) -> NodeId {
        self.push(Op::Const, Some(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None)
    }

    /// Elementwise sum; `b` may broadcast as a scalar, a row or a column.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor), None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a), None)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a), None)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a), None)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a), None)
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(a), None)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()), None)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::Slice { x, start, len }, None)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), None)
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumSquares(a), None)
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    pub fn gather(&mut self, x: NodeId, index: Arc<[u32]>, dims: Vec<usize>) -> NodeId {
        self.push(Op::Gather { x, index, dims }, None)
    }

    /// Divides each row (last axis) by its L2 norm; zero rows are an error.
    pub fn normalize_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::NormalizeRows(a), None)
    }

    /// Marks the node whose value `forward` returns and `backward` differentiates.
    /// Defaults to the most recently added node.
    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    fn root(&self) -> Option<NodeId> {
        self.output.or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn value(&self, id: NodeId) -> Option<&DenseArray<T>> {
        self.nodes.get(id.0).and_then(|n| n.value.as_ref())
    }

    /// Drops cached values (constants are kept) so new bindings can be applied.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Const) {
                n.value = None;
            }
        }
        self.evaluated = 0;
    }

    /// Evaluates every node not yet evaluated and returns the root output.
    pub fn forward(&mut self, src: &dyn ArraySource<T>) -> Result<&DenseArray<T>, NumError> {
        for i in self.evaluated..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Const) {
                continue;
            }
            let v = self.eval(i, src)?;
            self.nodes[i].value = Some(v);
        }
        self.evaluated = self.nodes.len();
        let root = self.root().ok_or(NumError::EmptyGraph)?;
        Ok(self.nodes[root.0].value.as_ref().expect("evaluated"))
    }

    fn val(&self, id: NodeId) -> &DenseArray<T> {
        self.nodes[id.0].value.as_ref().expect("inputs evaluated before use")
    }

    fn err(&self, i: usize, msg: String) -> NumError {
        NumError::Node { id: i, op: self.nodes[i].op.name(), msg }
    }

    fn eval(&self, i: usize, src: &dyn ArraySource<T>) -> Result<DenseArray<T>, NumError> {
        let op = &self.nodes[i].op;
        match op {
            Op::Input(name) | Op::Param(name) => {
                src.lookup(name).cloned().ok_or_else(|| NumError::Unbound { name: name.clone() })
            }
            Op::Const => unreachable!(),
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let k = a.cols();
                let m = a.rows();
                let (bk, n) = if b.rank() == 1 { (b.len(), 1) } else { (b.rows(), b.cols()) };
                if bk != k || (b.rank() > 2) {
                    return Err(self.err(i, format!("{:?} x {:?}", a.dims(), b.dims())));
                }
                let mut out = vec![T::zero(); m * n];
                gemm_acc(m, k, n, a.data(), b.data(), &mut out);
                let mut dims: Vec<usize> = a.dims()[..a.rank() - 1].to_vec();
                if b.rank() == 2 {
                    dims.push(n);
                }
                if dims.is_empty() {
                    dims.push(1);
                }
                Ok(DenseArray::from_parts(dims, out))
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let kind = broadcast_kind(a.dims(), b.dims())
                    .ok_or_else(|| self.err(i, format!("cannot broadcast {:?} with {:?}", b.dims(), a.dims())))?;
                let cols = a.cols();
                let bd = b.data();
                let out: Vec<T> = match op {
                    Op::Add(..) => a.data().iter().enumerate().map(|(j, &x)| x + bd[bindex(kind, j, cols)]).collect(),
                    Op::Sub(..) => a.data().iter().enumerate().map(|(j, &x)| x - bd[bindex(kind, j, cols)]).collect(),
                    _ => a.data().iter().enumerate().map(|(j, &x)| x * bd[bindex(kind, j, cols)]).collect(),
                };
                Ok(DenseArray::from_parts(a.dims().to_vec(), out))
            }
            Op::Scale(a, f) => {
                let f = T::of(*f);
                Ok(self.val(*a).map(|x| x * f))
            }
            Op::Tanh(a) => Ok(self.val(*a).map(|x| x.tanh())),
            Op::Sigmoid(a) => Ok(self.val(*a).map(sigmoid)),
            Op::Log(a) => {
                let a = self.val(*a);
                if let Some(bad) = a.data().iter().find(|&&x| !(x > T::zero())) {
                    return Err(self.err(i, format!("non-positive argument {bad}")));
                }
                Ok(a.map(|x| x.ln()))
            }
            Op::Softmax(a) | Op::LogSoftmax(a) => {
                let a = self.val(*a);
                let cols = a.cols();
                let log = matches!(op, Op::LogSoftmax(_));
                let mut out = Vec::with_capacity(a.len());
                for r in 0..a.rows() {
                    let row = a.row(r);
                    let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                    let z: f64 = row.iter().map(|&v| (v - mx).as_f64().exp()).sum();
                    if log {
                        let lz = T::of(z.ln());
                        out.extend(row.iter().map(|&v| v - mx - lz));
                    } else {
                        out.extend(row.iter().map(|&v| T::of((v - mx).as_f64().exp() / z)));
                    }
                }
                debug_assert_eq!(out.len(), a.rows() * cols);
                Ok(DenseArray::from_parts(a.dims().to_vec(), out))
            }
            Op::Concat(parts) => {
                if parts.is_empty() {
                    return Err(self.err(i, "no operands".into()));
                }
                let rows = self.val(parts[0]).rows();
                let mut total = 0;
                for p in parts {
                    let v = self.val(*p);
                    if v.rows() != rows {
                        return Err(self.err(i, format!("row count {} vs {}", v.rows(), rows)));
                    }
                    total += v.cols();
                }
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for p in parts {
                        out.extend_from_slice(self.val(*p).row(r));
                    }
                }
                let mut dims = self.val(parts[0]).dims().to_vec();
                *dims.last_mut().unwrap() = total;
                Ok(DenseArray::from_parts(dims, out))
            }
            Op::Slice { x, start, len } => {
                let x = self.val(*x);
                if *len == 0 || start + len > x.cols() {
                    return Err(self.err(i, format!("slice {}..{} of {} columns", start, start + len, x.cols())));
                }
                let mut out = Vec::with_capacity(x.rows() * len);
                for r in 0..x.rows() {
                    out.extend_from_slice(&x.row(r)[*start..start + len]);
                }
                let mut dims = x.dims().to_vec();
                *dims.last_mut().unwrap() = *len;
                Ok(DenseArray::from_parts(dims, out))
            }
            Op::Mean(a) => {
                let a = self.val(*a);
                Ok(DenseArray::scalar(T::of(sum_f64(a.data()) / a.len() as f64)))
            }
            Op::SumSquares(a) => {
                let a = self.val(*a);
                let s = a.data().iter().fold(0.0f64, |acc, &v| acc + v.as_f64() * v.as_f64());
                Ok(DenseArray::scalar(T::of(s)))
            }
            Op::Gather { x, index, dims } => {
                let x = self.val(*x);
                let n: usize = dims.iter().product();
                if n != index.len() || dims.is_empty() || n == 0 {
                    return Err(self.err(i, format!("dims {:?} for {} indices", dims, index.len())));
                }
                let xd = x.data();
                let mut out = Vec::with_capacity(n);
                for &ix in index.iter() {
                    if ix == GATHER_ZERO {
                        out.push(T::zero());
                    } else {
                        let v = xd.get(ix as usize).ok_or_else(|| self.err(i, format!("index {ix} out of {}", xd.len())))?;
                        out.push(*v);
                    }
                }
                Ok(DenseArray::from_parts(dims.clone(), out))
            }
            Op::NormalizeRows(a) => {
                let a = self.val(*a);
                let mut out = Vec::with_capacity(a.len());
                for r in 0..a.rows() {
                    let row = a.row(r);
                    let nrm = row.iter().fold(0.0f64, |s, &v| s + v.as_f64() * v.as_f64()).sqrt();
                    if nrm == 0.0 {
                        return Err(self.err(i, format!("zero-norm row {r}")));
                    }
                    out.extend(row.iter().map(|&v| T::of(v.as_f64() / nrm)));
                }
                Ok(DenseArray::from_parts(a.dims().to_vec(), out))
            }
        }
    }

    /// Gradient of the scalar root with respect to every parameter leaf.
    /// Parameters the root does not depend on receive zero gradients.
    pub fn backward(&self) -> Result<Gradients<T>, NumError> {
        let root = self.root().ok_or(NumError::EmptyGraph)?;
        if self.evaluated < self.nodes.len() {
            return Err(NumError::NotEvaluated);
        }
        let rv = self.val(root);
        if rv.len() != 1 {
            return Err(NumError::NonScalarRoot { dims: rv.dims().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        let mut out: Gradients<T> = BTreeMap::new();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                if let Op::Param(name) = &self.nodes[i].op {
                    out.entry(name.clone()).or_insert_with(|| DenseArray::zeros(self.val(NodeId(i)).dims()));
                }
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = &self.nodes[i].op;
            if let Op::Param(name) = op {
                let dims = self.val(NodeId(i)).dims().to_vec();
                match out.get_mut(name) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => {
                        out.insert(name.clone(), DenseArray::from_parts(dims, g));
                    }
                }
                continue;
            }
            for (id, contrib) in self.local_grads(i, &g) {
                if !self.nodes[id.0].needs_grad {
                    continue;
                }
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&contrib) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        for n in &self.nodes {
            if let (Op::Param(name), Some(v)) = (&n.op, &n.value) {
                out.entry(name.clone()).or_insert_with(|| DenseArray::zeros(v.dims()));
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of node `i` for each input needing a gradient.
    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(NodeId, Vec<T>)> {
        let wants = |id: &NodeId| self.nodes[id.0].needs_grad;
        let out = self.val(NodeId(i));
        match &self.nodes[i].op {
            Op::Input(_) | Op::Param(_) | Op::Const => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let k = av.cols();
                let m = av.rows();
                let n = if bv.rank() == 1 { 1 } else { bv.cols() };
                let mut res = vec![];
                if wants(a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt_acc(m, n, k, g, bv.data(), &mut ga);
                    res.push((*a, ga));
                }
                if wants(b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn_acc(k, m, n, av.data(), g, &mut gb);
                    res.push((*b, gb));
                }
                res
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let kind = broadcast_kind(av.dims(), bv.dims()).expect("checked in forward");
                let cols = av.cols();
                let mut res = vec![];
                match &self.nodes[i].op {
                    Op::Add(..) | Op::Sub(..) => {
                        if wants(a) {
                            res.push((*a, g.to_vec()));
                        }
                        if wants(b) {
                            let mut gb = reduce_broadcast(kind, g, cols, bv.len());
                            if matches!(self.nodes[i].op, Op::Sub(..)) {
                                gb.iter_mut().for_each(|v| *v = -*v);
                            }
                            res.push((*b, gb));
                        }
                    }
                    _ => {
                        if wants(a) {
                            let bd = bv.data();
                            let ga = g.iter().enumerate().map(|(j, &gv)| gv * bd[bindex(kind, j, cols)]).collect();
                            res.push((*a, ga));
                        }
                        if wants(b) {
                            let prod: Vec<T> = g.iter().zip(av.data()).map(|(&gv, &x)| gv * x).collect();
                            res.push((*b, reduce_broadcast(kind, &prod, cols, bv.len())));
                        }
                    }
                }
                res
            }
            Op::Scale(a, f) => {
                let f = T::of(*f);
                vec![(*a, g.iter().map(|&v| v * f).collect())]
            }
            Op::Tanh(a) => vec![(*a, g.iter().zip(out.data()).map(|(&gv, &y)| gv * (T::one() - y * y)).collect())],
            Op::Sigmoid(a) => {
                vec![(*a, g.iter().zip(out.data()).map(|(&gv, &y)| gv * y * (T::one() - y)).collect())]
            }
            Op::Log(a) => vec![(*a, g.iter().zip(self.val(*a).data()).map(|(&gv, &x)| gv / x).collect())],
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut ga = Vec::with_capacity(g.len());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = gr.iter().zip(y).map(|(&gv, &yv)| gv.as_f64() * yv.as_f64()).sum();
                    let dot = T::of(dot);
                    ga.extend(gr.iter().zip(y).map(|(&gv, &yv)| yv * (gv - dot)));
                }
                vec![(*a, ga)]
            }
            Op::LogSoftmax(a) => {
                let cols = out.cols();
                let mut ga = Vec::with_capacity(g.len());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let s = T::of(sum_f64(gr));
                    ga.extend(gr.iter().zip(y).map(|(&gv, &yv)| gv - yv.exp() * s));
                }
                vec![(*a, ga)]
            }
            Op::Concat(parts) => {
                let cols = out.cols();
                let mut offset = 0;
                let mut res = vec![];
                for p in parts {
                    let pv = self.val(*p);
                    let pc = pv.cols();
                    if wants(p) {
                        let mut gp = Vec::with_capacity(pv.len());
                        for r in 0..pv.rows() {
                            gp.extend_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                        }
                        res.push((*p, gp));
                    }
                    offset += pc;
                }
                res
            }
            Op::Slice { x, start, len } => {
                let xv = self.val(*x);
                let cols = xv.cols();
                let mut gx = vec![T::zero(); xv.len()];
                for r in 0..xv.rows() {
                    gx[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                vec![(*x, gx)]
            }
            Op::Mean(a) => {
                let n = self.val(*a).len();
                let v = T::of(g[0].as_f64() / n as f64);
                vec![(*a, vec![v; n])]
            }
            Op::SumSquares(a) => {
                let two_g = g[0] + g[0];
                vec![(*a, self.val(*a).data().iter().map(|&x| two_g * x).collect())]
            }
            Op::Gather { x, index, .. } => {
                let mut gx = vec![T::zero(); self.val(*x).len()];
                for (&ix, &gv) in index.iter().zip(g) {
                    if ix != GATHER_ZERO {
                        gx[ix as usize] += gv;
                    }
                }
                vec![(*x, gx)]
            }
            Op::NormalizeRows(a) => {
                let av = self.val(*a);
                let cols = av.cols();
                let mut ga = Vec::with_capacity(g.len());
                for r in 0..av.rows() {
                    let x = av.row(r);
                    let y = out.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let nrm = x.iter().fold(0.0f64, |s, &v| s + v.as_f64() * v.as_f64()).sqrt();
                    let dot: f64 = gr.iter().zip(y).map(|(&gv, &yv)| gv.as_f64() * yv.as_f64()).sum();
                    ga.extend(
                        gr.iter().zip(y).map(|(&gv, &yv)| T::of((gv.as_f64() - yv.as_f64() * dot) / nrm)),
                    );
                }
                vec![(*a, ga)]
            }
        }
    }
}
