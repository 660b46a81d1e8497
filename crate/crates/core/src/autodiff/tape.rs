//! Reverse-mode tape. Every operation is evaluated eagerly and recorded in
//! creation order, so node ids are already a topological order and the
//! backward sweep is a single reverse pass over the node list.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Vector-Jacobian product of a custom node: receives the output gradient
/// and returns one gradient per parent, in parent order.
pub type CustomBackward = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Concat { parts: Vec<usize>, axis: usize },
    MeanRows(usize),
    Sum(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Cos(usize),
    Log(usize),
    ClampMin(usize, f64),
    GatherRows { src: usize, index: Vec<usize> },
    SegmentMean { src: usize, offsets: Vec<usize> },
    Custom {
        parents: Vec<usize>,
        backward: CustomBackward,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        self.push_rc(Rc::new(value), op)
    }

    fn push_rc(&self, value: Rc<Tensor>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Differentiable leaf sharing an existing buffer.
    pub fn var_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Leaf)
    }

    /// Constant sharing an existing buffer.
    pub fn constant_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Const)
    }

    /// Leaf that never accumulates a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const)
    }

    /// Records a node whose backward rule is supplied by the caller.
    pub fn custom<'t>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        backward: CustomBackward,
    ) -> Result<Var<'t>> {
        for p in parents {
            self.check(*p)?;
        }
        Ok(self.push(
            value,
            Op::Custom {
                parents: parents.iter().map(|p| p.id).collect(),
                backward,
            },
        ))
    }

    fn check(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::Usage("variable belongs to a different tape".into()))
        }
    }

    /// Reverse sweep from a scalar `loss`, seeded with 1.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.shape() != [1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            match &node.op {
                Op::Leaf | Op::Const => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(val(*b));
                    let gb = val(*a).matmul_tn(&g);
                    accumulate(&mut grads, &nodes, *a, ga);
                    accumulate(&mut grads, &nodes, *b, gb);
                }
                Op::Add(a, b) => {
                    let ga = reduce_to(&g, val(*a).shape());
                    let gb = reduce_to(&g, val(*b).shape());
                    accumulate(&mut grads, &nodes, *a, ga);
                    accumulate(&mut grads, &nodes, *b, gb);
                }
                Op::Sub(a, b) => {
                    let ga = reduce_to(&g, val(*a).shape());
                    let gb = reduce_to(&g.map(|x| -x), val(*b).shape());
                    accumulate(&mut grads, &nodes, *a, ga);
                    accumulate(&mut grads, &nodes, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let ga = broadcast_zip(&g, vb, |g, y| g * y);
                    let gb = broadcast_zip(&g, va, |g, x| g * x);
                    accumulate(&mut grads, &nodes, *a, reduce_to(&ga, va.shape()));
                    accumulate(&mut grads, &nodes, *b, reduce_to(&gb, vb.shape()));
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let ga = broadcast_zip(&g, vb, |g, y| g / y);
                    // d(x/y)/dy = -out/y
                    let out = &node.value;
                    let tmp = broadcast_zip(&g, out, |g, o| -g * o);
                    let gb = broadcast_zip(&tmp, vb, |t, y| t / y);
                    accumulate(&mut grads, &nodes, *a, reduce_to(&ga, va.shape()));
                    accumulate(&mut grads, &nodes, *b, reduce_to(&gb, vb.shape()));
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let [pr, pc] = val(p).shape();
                        let part = if *axis == 0 {
                            let c = g.cols();
                            Tensor::new(pr, pc, g.data()[offset * c..(offset + pr) * c].to_vec())
                                .expect("concat slice")
                        } else {
                            let mut d = Vec::with_capacity(pr * pc);
                            for r in 0..pr {
                                d.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                            }
                            Tensor::new(pr, pc, d).expect("concat slice")
                        };
                        offset += if *axis == 0 { pr } else { pc };
                        accumulate(&mut grads, &nodes, p, part);
                    }
                }
                Op::MeanRows(a) => {
                    let [r, c] = val(*a).shape();
                    let inv = 1.0 / r as f64;
                    let mut d = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        d.extend(g.data().iter().map(|x| x * inv));
                    }
                    accumulate(&mut grads, &nodes, *a, Tensor::new(r, c, d).expect("mean rows"));
                }
                Op::Sum(a) => {
                    let [r, c] = val(*a).shape();
                    accumulate(&mut grads, &nodes, *a, Tensor::filled(r, c, g.item()));
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, &nodes, *a, g.map(|x| x * k));
                }
                Op::AddScalar(a) => accumulate(&mut grads, &nodes, *a, g.clone()),
                Op::Tanh(a) => {
                    let ga = zip(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip(&g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::Cos(a) => {
                    let ga = zip(&g, val(*a), |g, x| -g * x.sin());
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::Log(a) => {
                    let ga = zip(&g, val(*a), |g, x| g / x);
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::ClampMin(a, lo) => {
                    let lo = *lo;
                    let ga = zip(&g, val(*a), |g, x| if x >= lo { g } else { 0.0 });
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::GatherRows { src, index } => {
                    let [r, c] = val(*src).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (i, &s) in index.iter().enumerate() {
                        let dst = &mut ga.data_mut()[s * c..(s + 1) * c];
                        for (d, x) in dst.iter_mut().zip(g.row_slice(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, &nodes, *src, ga);
                }
                Op::SegmentMean { src, offsets } => {
                    let [r, c] = val(*src).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        if hi == lo {
                            continue;
                        }
                        let inv = 1.0 / (hi - lo) as f64;
                        for row in lo..hi {
                            let dst = &mut ga.data_mut()[row * c..(row + 1) * c];
                            for (d, x) in dst.iter_mut().zip(g.row_slice(s)) {
                                *d += x * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, &nodes, *src, ga);
                }
                Op::Custom { parents, backward } => {
                    let pg = backward(&g)?;
                    if pg.len() != parents.len() {
                        return Err(Error::Usage(format!(
                            "custom backward returned {} gradients for {} parents",
                            pg.len(),
                            parents.len()
                        )));
                    }
                    for (&p, gp) in parents.iter().zip(pg) {
                        if gp.shape() != val(p).shape() {
                            return Err(Error::Config(format!(
                                "custom backward gradient shape {:?} != parent {:?}",
                                gp.shape(),
                                val(p).shape()
                            )));
                        }
                        accumulate(&mut grads, &nodes, p, gp);
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if matches!(nodes[id].op, Op::Const) {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let d = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), d).expect("same shape")
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> Option<[usize; 2]> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    Some([dim(a[0], b[0])?, dim(a[1], b[1])?])
}

/// Elementwise `f(a, b)` where `b` broadcasts onto `a`'s shape or vice versa.
fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return zip(a, b, f);
    }
    let [r, c] = broadcast_shape(a.shape(), b.shape()).expect("broadcastable");
    let at = |t: &Tensor, i: usize, j: usize| {
        let ii = if t.rows() == 1 { 0 } else { i };
        let jj = if t.cols() == 1 { 0 } else { j };
        t.get(ii, jj)
    };
    let mut d = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            d.push(f(at(a, i, j), at(b, i, j)));
        }
    }
    Tensor::new(r, c, d).expect("broadcast")
}

/// Sums `g` over the axes along which `shape` was broadcast.
fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    let c = g.cols();
    for i in 0..g.rows() {
        for j in 0..c {
            let ii = if shape[0] == 1 { 0 } else { i };
            let jj = if shape[1] == 1 { 0 } else { j };
            out.data_mut()[ii * shape[1] + jj] += g.get(i, j);
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &str,
        make: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let (a, b) = (self.value(), other.value());
        if broadcast_shape(a.shape(), b.shape()).is_none() {
            return Err(Error::Config(format!(
                "{name}: shapes {:?} and {:?} do not broadcast",
                a.shape(),
                b.shape()
            )));
        }
        let v = broadcast_zip(&a, &b, f);
        Ok(self.tape.push(v, make(self.id, other.id)))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id)))
    }

    /// Elementwise sum; either operand may broadcast along a unit dimension.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn concat(self, other: Var<'t>, axis: usize) -> Result<Var<'t>> {
        concat(&[self, other], axis)
    }

    /// Column vector of row means, shape `[1, cols]`.
    pub fn mean_rows(self) -> Var<'t> {
        let a = self.value();
        let [r, c] = a.shape();
        let mut d = vec![0.0; c];
        for i in 0..r {
            for (o, x) in d.iter_mut().zip(a.row_slice(i)) {
                *o += x;
            }
        }
        let inv = 1.0 / r.max(1) as f64;
        d.iter_mut().for_each(|x| *x *= inv);
        self.tape.push(Tensor::row(d), Op::MeanRows(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), f64::cos)
    }

    pub fn log(self) -> Result<Var<'t>> {
        let a = self.value();
        if let Some(x) = a.data().iter().find(|x| !(**x > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {x}")));
        }
        Ok(self.tape.push(a.map(f64::ln), Op::Log(self.id)))
    }

    /// `max(x, lo)` with zero gradient where clamped.
    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, lo), |x| x.max(lo))
    }

    /// Rows `index[i]` of `self`, in order; repeated indices are allowed.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let [r, c] = a.shape();
        let mut d = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(Error::Config(format!("gather row {i} out of {r}")));
            }
            d.extend_from_slice(a.row_slice(i));
        }
        let v = Tensor::new(index.len(), c, d)?;
        Ok(self.tape.push(
            v,
            Op::GatherRows {
                src: self.id,
                index: index.to_vec(),
            },
        ))
    }

    /// Mean of each contiguous row block `offsets[s]..offsets[s+1]`; empty
    /// blocks yield zero rows.
    pub fn segment_mean(self, offsets: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let [r, c] = a.shape();
        if offsets.is_empty() || offsets.last() != Some(&r) || offsets[0] != 0 {
            return Err(Error::Config(format!(
                "segment offsets must span 0..{r}, got {offsets:?}"
            )));
        }
        if offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("segment offsets must be non-decreasing".into()));
        }
        let n = offsets.len() - 1;
        let mut d = vec![0.0; n * c];
        for s in 0..n {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi == lo {
                continue;
            }
            let out = &mut d[s * c..(s + 1) * c];
            for row in lo..hi {
                for (o, x) in out.iter_mut().zip(a.row_slice(row)) {
                    *o += x;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            out.iter_mut().for_each(|x| *x *= inv);
        }
        let v = Tensor::new(n, c, d)?;
        Ok(self.tape.push(
            v,
            Op::SegmentMean {
                src: self.id,
                offsets: offsets.to_vec(),
            },
        ))
    }
}

/// Concatenation along `axis` (0 stacks rows, 1 joins columns).
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
    let tape = first.tape;
    for p in parts {
        tape.check(*p)?;
    }
    let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
    let v = match axis {
        0 => {
            let c = values[0].cols();
            if values.iter().any(|v| v.cols() != c) {
                return Err(Error::Config("concat axis 0: column counts differ".into()));
            }
            let d: Vec<f64> = values.iter().flat_map(|v| v.data().iter().copied()).collect();
            Tensor::new(d.len() / c.max(1), c, d)?
        }
        1 => {
            let r = values[0].rows();
            if values.iter().any(|v| v.rows() != r) {
                return Err(Error::Config(format!(
                    "concat axis 1: row counts differ {:?}",
                    values.iter().map(|v| v.shape()).collect::<Vec<_>>()
                )));
            }
            let c: usize = values.iter().map(|v| v.cols()).sum();
            let mut d = Vec::with_capacity(r * c);
            for i in 0..r {
                for v in &values {
                    d.extend_from_slice(v.row_slice(i));
                }
            }
            Tensor::new(r, c, d)?
        }
        _ => return Err(Error::Config(format!("concat axis {axis} out of range"))),
    };
    Ok(tape.push(
        v,
        Op::Concat {
            parts: parts.iter().map(|p| p.id).collect(),
            axis,
        },
    ))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
