//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive evaluated through a [`Var`] handle.
//! Trainable arrays live in a [`ParamStore`]; they enter a tape as leaves via
//! [`Tape::param`] and receive their gradients from [`Tape::backward`].
//! The tape is rebuilt for every forward pass, so control flow such as an
//! adaptive number of solver steps needs no special handling.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::tensor::{check_matmul, finite, matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable array with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Owns every [`Parameter`] of a model. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape().to_vec());
        }
    }

    /// Adds a set of gradients (e.g. from one batch member) into the store.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        self.accumulate_scaled(grads, 1.0)
    }

    pub fn accumulate_scaled(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (i, g) in grads.grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = self.params.get_mut(i).ok_or_else(|| {
                Error::Contract(format!("gradient for unknown parameter index {i}"))
            })?;
            let mut data = p.grad.data().to_vec();
            for (d, v) in data.iter_mut().zip(g) {
                *d += scale * v;
            }
            p.grad = finite(p.value.shape().to_vec(), data).map_err(|e| {
                Error::Numeric(format!("gradient of `{}`: {e}", p.name))
            })?;
        }
        Ok(())
    }

    /// Global L2 norm over all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            let data = p.grad.data().iter().map(|v| v * factor).collect();
            p.grad = Tensor::from_parts_unchecked(p.value.shape().to_vec(), data);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Gradients of one loss with respect to the parameters of a store,
/// indexed by [`ParamId`]. `None` means the parameter was not reached.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Adds `g` into the gradient slot of `id`.
    pub(crate) fn add(&mut self, id: ParamId, g: &[f64]) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
            slot => *slot = Some(g.to_vec()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Tanh,
    Sigmoid,
    Exp,
    Softplus,
    Abs,
    RsqrtOrZero,
    Square,
}

#[derive(Clone, Copy, Debug)]
enum RedKind {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Binary(BinKind, usize, usize, Bcast),
    Scale(usize, f64),
    Shift(usize),
    Unary(UnKind, usize),
    Reduce(RedKind, usize, Option<usize>),
    Transpose(usize),
    Reshape(usize),
    NarrowCols { src: usize, start: usize },
    ConcatRows(Vec<usize>),
    LinComb(Vec<(f64, usize)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of primitive operations in topological order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
    generation: Cell<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    generation: u64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            generation: Cell::new(0),
        }
    }

    /// A tape that only evaluates values. Results are bitwise identical to a
    /// recording tape; [`Tape::backward`] is rejected.
    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let requires_grad = requires_grad && self.recording;
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn param<'t>(&'t self, store: &ParamStore, id: ParamId) -> Var<'t> {
        self.push(store.get(id).clone(), Op::Param(id), true)
    }

    /// `Σ cᵢ·xᵢ` over equally shaped values, recorded as one node.
    pub fn lincomb<'t>(&'t self, terms: &[(f64, Var<'t>)]) -> Result<Var<'t>> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::Contract("empty linear combination".into()))?;
        let shape = first.shape();
        let mut out = vec![0.0; shape.iter().product()];
        {
            let nodes = self.nodes.borrow();
            for (c, v) in terms {
                let t = &nodes[v.checked_id()].value;
                if t.shape() != shape.as_slice() {
                    return Err(Error::dim(format!(
                        "linear combination of {:?} and {:?}",
                        shape,
                        t.shape()
                    )));
                }
                for (o, x) in out.iter_mut().zip(t.data()) {
                    *o += c * x;
                }
            }
        }
        let value = finite(shape, out)?;
        let ids: Vec<usize> = terms.iter().map(|(_, v)| v.id).collect();
        let rg = self.requires(&ids);
        Ok(self.push(
            value,
            Op::LinComb(terms.iter().map(|(c, v)| (*c, v.id)).collect()),
            rg,
        ))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero values".into()))?;
        let s0 = first.shape();
        if s0.len() != 2 {
            return Err(Error::dim(format!("concat_rows needs matrices, got {s0:?}")));
        }
        let mut rows = 0;
        let mut data = Vec::new();
        {
            let nodes = self.nodes.borrow();
            for p in parts {
                let t = &nodes[p.checked_id()].value;
                if t.rank() != 2 || t.cols() != s0[1] {
                    return Err(Error::dim(format!(
                        "concat_rows of {:?} with {:?}",
                        s0,
                        t.shape()
                    )));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![rows, s0[1]], data),
            Op::ConcatRows(ids),
            rg,
        ))
    }

    /// Gradients of a scalar `loss` with respect to every reachable parameter.
    /// Clears the tape.
    pub fn gradients(&self, loss: Var<'_>) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Contract("backward on a no-grad tape".into()));
        }
        let loss_id = loss.checked_id();
        let mut out = Gradients::default();
        {
            let nodes = self.nodes.borrow();
            if nodes[loss_id].value.numel() != 1 {
                return Err(Error::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    nodes[loss_id].value.shape()
                )));
            }
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss_id + 1];
            grads[loss_id] = Some(vec![1.0]);
            for id in (0..=loss_id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                backprop_node(&nodes, node, &g, &mut grads, &mut out)?;
            }
        }
        self.clear();
        Ok(out)
    }

    /// Runs [`Tape::gradients`] and accumulates the result into `store`.
    pub fn backward(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads)
    }

    /// Drops all recorded nodes; outstanding [`Var`] handles become stale.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.generation.set(self.generation.get() + 1);
    }
}

fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

fn reduce_bcast(g: &[f64], bcast: Bcast, b_len: usize) -> Vec<f64> {
    match bcast {
        Bcast::Same => g.to_vec(),
        Bcast::Scalar => vec![g.iter().sum()],
        Bcast::Row => {
            let mut out = vec![0.0; b_len];
            for (i, v) in g.iter().enumerate() {
                out[i % b_len] += v;
            }
            out
        }
    }
}

fn backprop_node(
    nodes: &[Node],
    node: &Node,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    out: &mut Gradients,
) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::Param(pid) => out.add(*pid, g),
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if nodes[*a].requires_grad {
                acc(nodes, grads, *a, matmul_nt(g, bv.data(), m, n, k));
            }
            if nodes[*b].requires_grad {
                acc(nodes, grads, *b, matmul_tn(av.data(), g, m, k, n));
            }
        }
        Op::Binary(kind, a, b, bcast) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let bd = bv.data();
            let bl = bd.len();
            let at = |i: usize| match bcast {
                Bcast::Same => bd[i],
                Bcast::Row => bd[i % bl],
                Bcast::Scalar => bd[0],
            };
            match kind {
                BinKind::Add | BinKind::Sub => {
                    acc(nodes, grads, *a, g.to_vec());
                    if nodes[*b].requires_grad {
                        let mut gb = reduce_bcast(g, *bcast, bl);
                        if matches!(kind, BinKind::Sub) {
                            gb.iter_mut().for_each(|v| *v = -*v);
                        }
                        acc(nodes, grads, *b, gb);
                    }
                }
                BinKind::Mul => {
                    if nodes[*a].requires_grad {
                        let ga = g.iter().enumerate().map(|(i, v)| v * at(i)).collect();
                        acc(nodes, grads, *a, ga);
                    }
                    if nodes[*b].requires_grad {
                        let prod: Vec<f64> =
                            g.iter().zip(av.data()).map(|(v, x)| v * x).collect();
                        acc(nodes, grads, *b, reduce_bcast(&prod, *bcast, bl));
                    }
                }
            }
        }
        Op::Scale(a, c) => acc(nodes, grads, *a, g.iter().map(|v| v * c).collect()),
        Op::Shift(a) => acc(nodes, grads, *a, g.to_vec()),
        Op::Unary(kind, a) => {
            let x = nodes[*a].value.data();
            let y = node.value.data();
            let ga = match kind {
                UnKind::Tanh => g.iter().zip(y).map(|(v, y)| v * (1.0 - y * y)).collect(),
                UnKind::Sigmoid => g.iter().zip(y).map(|(v, y)| v * y * (1.0 - y)).collect(),
                UnKind::Exp => g.iter().zip(y).map(|(v, y)| v * y).collect(),
                UnKind::Softplus => g.iter().zip(x).map(|(v, x)| v * sigmoid(*x)).collect(),
                UnKind::Abs => g.iter().zip(x).map(|(v, x)| v * sign(*x)).collect(),
                UnKind::Square => g.iter().zip(x).map(|(v, x)| 2.0 * v * x).collect(),
                UnKind::RsqrtOrZero => g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(v, (x, y))| if *x > 0.0 { -0.5 * v * y / x } else { 0.0 })
                    .collect(),
            };
            acc(nodes, grads, *a, ga);
        }
        Op::Reduce(kind, a, axis) => {
            let shape = nodes[*a].value.shape();
            let n: usize = shape.iter().product();
            let (outer, len, inner) = axis_split(shape, *axis);
            let scale = match kind {
                RedKind::Sum => 1.0,
                RedKind::Mean => 1.0 / len as f64,
            };
            let mut ga = vec![0.0; n];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        ga[(o * len + l) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            acc(nodes, grads, *a, ga);
        }
        Op::Transpose(a) => {
            let s = node.value.shape();
            let (r, c) = (s[0], s[1]);
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[j * r + i] = g[i * c + j];
                }
            }
            acc(nodes, grads, *a, ga);
        }
        Op::Reshape(a) => acc(nodes, grads, *a, g.to_vec()),
        Op::NarrowCols { src, start } => {
            let src_shape = nodes[*src].value.shape();
            let (rows, cols) = (src_shape[0], src_shape[1]);
            let width = node.value.shape()[1];
            let mut ga = vec![0.0; rows * cols];
            for r in 0..rows {
                ga[r * cols + start..r * cols + start + width]
                    .copy_from_slice(&g[r * width..(r + 1) * width]);
            }
            acc(nodes, grads, *src, ga);
        }
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for id in ids {
                let n = nodes[*id].value.numel();
                acc(nodes, grads, *id, g[offset..offset + n].to_vec());
                offset += n;
            }
        }
        Op::LinComb(terms) => {
            for (c, id) in terms {
                acc(nodes, grads, *id, g.iter().map(|v| v * c).collect());
            }
        }
    }
    Ok(())
}

fn axis_split(shape: &[usize], axis: Option<usize>) -> (usize, usize, usize) {
    match axis {
        None => (1, shape.iter().product(), 1),
        Some(a) => (
            shape[..a].iter().product(),
            shape[a],
            shape[a + 1..].iter().product(),
        ),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    fn checked_id(&self) -> usize {
        assert_eq!(
            self.generation,
            self.tape.generation.get(),
            "stale Var: its tape was cleared by backward()"
        );
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.checked_id()].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.checked_id()].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.checked_id()].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "values from different tapes"
        );
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.checked_id()].value, &nodes[other.checked_id()].value);
            let (m, k, n) = check_matmul(a.shape(), b.shape())?;
            finite(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    fn binary(&self, other: &Var<'t>, kind: BinKind) -> Result<Var<'t>> {
        self.same_tape(other);
        let (value, bcast) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.checked_id()].value, &nodes[other.checked_id()].value);
            let bcast = if a.shape() == b.shape() {
                Bcast::Same
            } else if b.numel() == 1 {
                Bcast::Scalar
            } else if a.rank() == 2
                && b.numel() == a.cols()
                && (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1))
            {
                Bcast::Row
            } else {
                return Err(Error::dim(format!(
                    "cannot broadcast {:?} against {:?}",
                    b.shape(),
                    a.shape()
                )));
            };
            let bd = b.data();
            let bl = bd.len();
            let f = |x: f64, y: f64| match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
            };
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = match bcast {
                        Bcast::Same => bd[i],
                        Bcast::Row => bd[i % bl],
                        Bcast::Scalar => bd[0],
                    };
                    f(x, y)
                })
                .collect();
            (finite(a.shape().to_vec(), data)?, bcast)
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self
            .tape
            .push(value, Op::Binary(kind, self.id, other.id, bcast), rg))
    }

    /// Elementwise sum; `other` may be a row vector or a single value.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Mul)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let value = self.with_value(|t| t.map(|v| v * c))?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Scale(self.id, c), rg))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        let value = self.with_value(|t| t.map(|v| v + c))?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Shift(self.id), rg))
    }

    /// `1 − x`.
    pub fn one_minus(&self) -> Result<Var<'t>> {
        self.neg()?.add_scalar(1.0)
    }

    fn unary(&self, kind: UnKind) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            t.map(|x| match kind {
                UnKind::Tanh => x.tanh(),
                UnKind::Sigmoid => sigmoid(x),
                UnKind::Exp => x.exp(),
                UnKind::Softplus => softplus(x),
                UnKind::Abs => x.abs(),
                UnKind::Square => x * x,
                UnKind::RsqrtOrZero => {
                    if x > 0.0 {
                        1.0 / x.sqrt()
                    } else {
                        0.0
                    }
                }
            })
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Unary(kind, self.id), rg))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(UnKind::Tanh)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(UnKind::Sigmoid)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(UnKind::Exp)
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(UnKind::Softplus)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary(UnKind::Abs)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(UnKind::Square)
    }

    /// `x^(−1/2)` for positive entries and `0` elsewhere.
    pub fn rsqrt_or_zero(&self) -> Result<Var<'t>> {
        self.unary(UnKind::RsqrtOrZero)
    }

    fn reduce(&self, kind: RedKind, axis: Option<usize>) -> Result<Var<'t>> {
        let value = self.with_value(|t| -> Result<Tensor> {
            if let Some(a) = axis {
                if a >= t.rank() {
                    return Err(Error::dim(format!(
                        "axis {a} out of range for shape {:?}",
                        t.shape()
                    )));
                }
            }
            let (outer, len, inner) = axis_split(t.shape(), axis);
            let mut out = vec![0.0; outer * inner];
            let d = t.data();
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] += d[(o * len + l) * inner + i];
                    }
                }
            }
            if matches!(kind, RedKind::Mean) {
                if len == 0 {
                    return Err(Error::dim("mean over an empty axis"));
                }
                out.iter_mut().for_each(|v| *v /= len as f64);
            }
            let shape = match axis {
                None => Vec::new(),
                Some(a) => {
                    let mut s = t.shape().to_vec();
                    s.remove(a);
                    s
                }
            };
            finite(shape, out)
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reduce(kind, self.id, axis), rg))
    }

    /// Sum over `axis`, or over everything when `None`. The reduced axis is
    /// removed from the shape.
    pub fn sum(&self, axis: Option<usize>) -> Result<Var<'t>> {
        self.reduce(RedKind::Sum, axis)
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Var<'t>> {
        self.reduce(RedKind::Mean, axis)
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = self.with_value(Tensor::transpose)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let value = self.with_value(|t| t.reshape(shape))?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn narrow_cols(&self, start: usize, width: usize) -> Result<Var<'t>> {
        let value = self.with_value(|t| -> Result<Tensor> {
            if t.rank() != 2 || start + width > t.cols() {
                return Err(Error::dim(format!(
                    "columns {start}..{} of {:?}",
                    start + width,
                    t.shape()
                )));
            }
            let mut data = Vec::with_capacity(t.rows() * width);
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row(r)[start..start + width]);
            }
            Ok(Tensor::from_parts_unchecked(vec![t.rows(), width], data))
        })?;
        let rg = self.requires_grad();
        Ok(self
            .tape
            .push(value, Op::NarrowCols { src: self.id, start }, rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.register(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0).unwrap());
        assert_eq!(z.tanh().unwrap().value().item().unwrap(), 0.0);
        assert_eq!(z.sigmoid().unwrap().value().item().unwrap(), 0.5);
        let one = tape.constant(Tensor::scalar(1.0).unwrap());
        let e = one.exp().unwrap().value().item().unwrap();
        assert!((e - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        assert_eq!(v.sum(None).unwrap().value().item().unwrap(), 6.0);
        let c = tape.constant(Tensor::full(vec![2, 5], 3.25));
        assert_eq!(c.mean(None).unwrap().value().item().unwrap(), 3.25);
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let s = m.sum(Some(0)).unwrap().value();
        assert_eq!(s.shape(), &[2]);
        assert_eq!(s.data(), &[4.0, 6.0]);
        assert!(matches!(m.sum(Some(2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn broadcast_errors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(a.add(&b), Err(Error::Dimension(_))));
        let row = tape.constant(Tensor::zeros(vec![1, 3]));
        assert_eq!(a.add(&row).unwrap().shape(), vec![2, 3]);
    }

    #[test]
    fn square_gradient() {
        let (mut store, x) = store_with("x", Tensor::scalar(3.0).unwrap());
        let tape = Tape::new();
        let v = tape.param(&store, x);
        let loss = v.mul(&v).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(x).data(), &[6.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let (mut store, x) = store_with("x", Tensor::zeros(vec![4]));
        let tape = Tape::new();
        let loss = tape.param(&store, x).tanh().unwrap().sum(None).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(x).data(), &[1.0; 4]);
    }

    #[test]
    fn mean_of_linear_map_gives_column_means() {
        let a = Tensor::from_rows(&[
            vec![1.0, 2.0, -1.0],
            vec![4.0, 0.5, 3.0],
            vec![-2.0, 6.0, 0.0],
        ])
        .unwrap();
        let (mut store, x) = store_with("x", Tensor::matrix(3, 1, vec![0.3, -0.7, 1.1]).unwrap());
        let tape = Tape::new();
        let ax = tape.constant(a.clone()).matmul(&tape.param(&store, x)).unwrap();
        tape.backward(ax.mean(None).unwrap(), &mut store).unwrap();
        for j in 0..3 {
            let col_mean = (0..3).map(|i| a.get(i, j)).sum::<f64>() / 3.0;
            assert!((store.grad(x).data()[j] - col_mean).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (store, x) = store_with("x", Tensor::zeros(vec![2]));
        let tape = Tape::new();
        let v = tape.param(&store, x);
        assert!(matches!(tape.gradients(v), Err(Error::Contract(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.register("w", Tensor::zeros(vec![1])).unwrap();
        assert!(s.register("w", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn no_grad_matches_recording_bitwise() {
        let (store, x) = store_with(
            "x",
            Tensor::matrix(2, 3, vec![0.1, -2.0, 0.7, 1.3, -0.4, 0.0]).unwrap(),
        );
        let run = |tape: &Tape| {
            let v = tape.param(&store, x);
            let w = tape.constant(Tensor::matrix(3, 2, vec![0.5, 1.0, -1.0, 2.0, 0.25, -0.5]).unwrap());
            let h = v.matmul(&w).unwrap().tanh().unwrap();
            let s = h.sigmoid().unwrap().mul(&h).unwrap().exp().unwrap();
            s.mean(None).unwrap().value()
        };
        let a = run(&Tape::new());
        let b = run(&Tape::no_grad());
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }
}
