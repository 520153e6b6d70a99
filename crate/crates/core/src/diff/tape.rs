//! Tape-based reverse-mode differentiation over small dense vectors.
//!
//! Every node holds a vector value (scalars are vectors of length one).
//! Nodes are appended in evaluation order, so a node's index is always
//! larger than the indices of its operands. The backward sweep walks the
//! tape from the output down to index zero, which visits every node after
//! all of its consumers.
//!
//! ```
//! use pinode_core::diff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.scalar(3.0);
//! let y = x * x + x.sin();
//! let grads = tape.backward(y).unwrap();
//! let dy = grads.wrt(x)[0];
//! assert!((dy - (6.0 + 3.0_f64.cos())).abs() < 1e-12);
//! ```

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddConst(usize),
    MulConst(usize, f64),
    /// `c / x`
    RecipScaled(usize),
    Relu(usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    Square(usize),
    /// Angle reduction into `[0, 2π)`; derivative one almost everywhere.
    Wrap(usize),
    /// Row-major `rows × cols` matrix node times a vector node.
    MatVec {
        w: usize,
        x: usize,
        rows: usize,
        cols: usize,
    },
    Sum(usize),
    Index(usize, usize),
    /// Operands live in `args[start..start + count]`.
    Concat {
        start: usize,
        count: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::RecipScaled(..) => "recip",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Square(..) => "square",
            Op::Wrap(..) => "wrap_angle",
            Op::MatVec { .. } => "matvec",
            Op::Sum(..) => "sum",
            Op::Index(..) => "index",
            Op::Concat { .. } => "concat",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    offset: usize,
    len: usize,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    values: Vec<f64>,
    args: Vec<usize>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl Inner {
    fn push(&mut self, op: Op, value: impl IntoIterator<Item = f64>) -> usize {
        let offset = self.values.len();
        self.values.extend(value);
        let len = self.values.len() - offset;
        let id = self.nodes.len();
        if self.first_non_finite.is_none() && self.values[offset..].iter().any(|v| !v.is_finite())
        {
            self.first_non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node { op, offset, len });
        id
    }

    fn value(&self, id: usize) -> &[f64] {
        let n = &self.nodes[id];
        &self.values[n.offset..n.offset + n.len]
    }

    fn unary(&mut self, a: usize, op: Op, f: impl Fn(f64) -> f64) -> usize {
        let n = self.nodes[a];
        let out: Vec<f64> = self.values[n.offset..n.offset + n.len]
            .iter()
            .map(|&v| f(v))
            .collect();
        self.push(op, out)
    }

    fn binary(&mut self, a: usize, b: usize, op: Op, f: impl Fn(f64, f64) -> f64) -> usize {
        let (na, nb) = (self.nodes[a], self.nodes[b]);
        assert_eq!(
            na.len, nb.len,
            "tape: length mismatch in {} ({} vs {})",
            op.name(),
            na.len,
            nb.len
        );
        let out: Vec<f64> = (0..na.len)
            .map(|i| f(self.values[na.offset + i], self.values[nb.offset + i]))
            .collect();
        self.push(op, out)
    }
}

/// Records operations for a single reverse sweep.
///
/// A tape is single-owner: one training step builds one tape, differentiates
/// it, and drops it (or [`clear`](Tape::clear)s it for reuse).
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("values", &inner.values.len())
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.values())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all recorded nodes but keeps the allocations.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.values.clear();
        inner.args.clear();
        inner.first_non_finite = None;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A scalar input (or constant; constants are leaves whose gradient is ignored).
    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.vector(&[value])
    }

    pub fn vector(&self, values: &[f64]) -> Var<'_> {
        let id = self
            .inner
            .borrow_mut()
            .push(Op::Leaf, values.iter().copied());
        Var { tape: self, id }
    }

    /// Stacks scalar or vector nodes end to end.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.args.len();
        let mut out = Vec::new();
        for p in parts {
            debug_assert!(core::ptr::eq(p.tape, self));
            inner.args.push(p.id);
            out.extend_from_slice(inner.value(p.id));
        }
        let id = inner.push(
            Op::Concat {
                start,
                count: parts.len(),
            },
            out,
        );
        Var { tape: self, id }
    }

    /// First node whose value was not finite, with the name of its operation.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.inner.borrow().first_non_finite
    }

    /// Reverse sweep from a scalar output.
    ///
    /// Fails if any node recorded before the output produced a non-finite
    /// value, naming that node's operation.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let inner = self.inner.borrow();
        if let Some((id, op)) = inner.first_non_finite {
            if id <= output.id {
                return Err(Error::numeric(alloc::format!(
                    "non-finite value produced by `{op}` (node {id})"
                )));
            }
        }
        let out = inner.nodes[output.id];
        if out.len != 1 {
            return Err(Error::invalid(alloc::format!(
                "backward needs a scalar output, got length {}",
                out.len
            )));
        }
        let mut grads = vec![0.0; inner.values.len()];
        grads[out.offset] = 1.0;
        let values = &inner.values;

        for id in (0..=output.id).rev() {
            let node = inner.nodes[id];
            let (go, gl) = (node.offset, node.len);
            if grads[go..go + gl].iter().all(|&g| g == 0.0) {
                continue;
            }
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |_, g| g);
                    accumulate(&mut grads, &inner.nodes, b, go, gl, |_, g| g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |_, g| g);
                    accumulate(&mut grads, &inner.nodes, b, go, gl, |_, g| -g);
                }
                Op::Mul(a, b) => {
                    let (oa, ob) = (inner.nodes[a].offset, inner.nodes[b].offset);
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        g * values[ob + i]
                    });
                    accumulate(&mut grads, &inner.nodes, b, go, gl, |i, g| {
                        g * values[oa + i]
                    });
                }
                Op::Div(a, b) => {
                    let ob = inner.nodes[b].offset;
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        g / values[ob + i]
                    });
                    // d(a/b)/db = -(a/b)/b
                    accumulate(&mut grads, &inner.nodes, b, go, gl, |i, g| {
                        -g * values[go + i] / values[ob + i]
                    });
                }
                Op::Neg(a) => accumulate(&mut grads, &inner.nodes, a, go, gl, |_, g| -g),
                Op::AddConst(a) | Op::Wrap(a) => {
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |_, g| g)
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |_, g| g * c)
                }
                Op::RecipScaled(a) => {
                    let oa = inner.nodes[a].offset;
                    // d(c/x)/dx = -(c/x)/x
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        -g * values[go + i] / values[oa + i]
                    });
                }
                Op::Relu(a) => {
                    let oa = inner.nodes[a].offset;
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        if values[oa + i] > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    });
                }
                Op::Tanh(a) => {
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        let t = values[go + i];
                        g * (1.0 - t * t)
                    });
                }
                Op::Sin(a) => {
                    let oa = inner.nodes[a].offset;
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        g * libm::cos(values[oa + i])
                    });
                }
                Op::Cos(a) => {
                    let oa = inner.nodes[a].offset;
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        -g * libm::sin(values[oa + i])
                    });
                }
                Op::Square(a) => {
                    let oa = inner.nodes[a].offset;
                    accumulate(&mut grads, &inner.nodes, a, go, gl, |i, g| {
                        2.0 * g * values[oa + i]
                    });
                }
                Op::MatVec { w, x, rows, cols } => {
                    let (ow, ox) = (inner.nodes[w].offset, inner.nodes[x].offset);
                    for r in 0..rows {
                        let g = grads[go + r];
                        if g == 0.0 {
                            continue;
                        }
                        let row = ow + r * cols;
                        for c in 0..cols {
                            grads[row + c] += g * values[ox + c];
                            grads[ox + c] += g * values[row + c];
                        }
                    }
                }
                Op::Sum(a) => {
                    let g = grads[go];
                    let na = inner.nodes[a];
                    for i in 0..na.len {
                        grads[na.offset + i] += g;
                    }
                }
                Op::Index(a, k) => {
                    let g = grads[go];
                    grads[inner.nodes[a].offset + k] += g;
                }
                Op::Concat { start, count } => {
                    let mut cursor = go;
                    for &part in &inner.args[start..start + count] {
                        let np = inner.nodes[part];
                        for i in 0..np.len {
                            grads[np.offset + i] += grads[cursor + i];
                        }
                        cursor += np.len;
                    }
                }
            }
        }

        let spans = inner.nodes.iter().map(|n| (n.offset, n.len)).collect();
        Ok(Gradients { grads, spans })
    }
}

fn accumulate(
    grads: &mut [f64],
    nodes: &[Node],
    target: usize,
    go: usize,
    len: usize,
    f: impl Fn(usize, f64) -> f64,
) {
    let ot = nodes[target].offset;
    for i in 0..len {
        let g = grads[go + i];
        grads[ot + i] += f(i, g);
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<f64>,
    spans: Vec<(usize, usize)>,
}

impl Gradients {
    /// Derivative of the output with respect to every component of `var`.
    pub fn wrt(&self, var: Var<'_>) -> &[f64] {
        let (o, l) = self.spans[var.id];
        &self.grads[o..o + l]
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn len(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.inner.borrow().value(self.id).to_vec()
    }

    /// Value of a scalar node.
    pub fn value(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let v = inner.value(self.id);
        debug_assert_eq!(v.len(), 1, "value() on a vector node");
        v[0]
    }

    fn wrap_id(self, id: usize) -> Self {
        Var { tape: self.tape, id }
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Self {
        let id = self.tape.inner.borrow_mut().unary(self.id, op, f);
        self.wrap_id(id)
    }

    fn binary(self, rhs: Self, op: Op, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(core::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        let id = self.tape.inner.borrow_mut().binary(self.id, rhs.id, op, f);
        self.wrap_id(id)
    }

    pub fn relu(self) -> Self {
        self.unary(Op::Relu(self.id), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.id), libm::tanh)
    }

    pub fn sin(self) -> Self {
        self.unary(Op::Sin(self.id), libm::sin)
    }

    pub fn cos(self) -> Self {
        self.unary(Op::Cos(self.id), libm::cos)
    }

    pub fn square(self) -> Self {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn wrap_angle(self) -> Self {
        self.unary(Op::Wrap(self.id), crate::scalar::wrap_angle)
    }

    pub fn scale(self, c: f64) -> Self {
        self.unary(Op::MulConst(self.id, c), |v| v * c)
    }

    pub fn offset(self, c: f64) -> Self {
        self.unary(Op::AddConst(self.id), |v| v + c)
    }

    pub fn sum(self) -> Self {
        let s: f64 = self.values().iter().sum();
        let id = self.tape.inner.borrow_mut().push(Op::Sum(self.id), [s]);
        self.wrap_id(id)
    }

    /// Component `k` of a vector node, as a scalar node.
    pub fn index(self, k: usize) -> Self {
        let v = self.tape.inner.borrow().value(self.id)[k];
        let id = self
            .tape
            .inner
            .borrow_mut()
            .push(Op::Index(self.id, k), [v]);
        self.wrap_id(id)
    }

    /// `self` is a row-major `rows × cols` matrix; `x` has length `cols`.
    pub fn matvec(self, x: Var<'t>, rows: usize, cols: usize) -> Result<Self> {
        let mut inner = self.tape.inner.borrow_mut();
        let (nw, nx) = (inner.nodes[self.id], inner.nodes[x.id]);
        if nw.len != rows * cols || nx.len != cols {
            return Err(Error::invalid(alloc::format!(
                "matvec shape mismatch: matrix {} values for {rows}x{cols}, vector {}",
                nw.len,
                nx.len
            )));
        }
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                let row = &inner.values[nw.offset + r * cols..nw.offset + (r + 1) * cols];
                let xs = &inner.values[nx.offset..nx.offset + cols];
                row.iter().zip(xs).map(|(a, b)| a * b).sum()
            })
            .collect();
        let id = inner.push(
            Op::MatVec {
                w: self.id,
                x: x.id,
                rows,
                cols,
            },
            out,
        );
        Ok(self.wrap_id(id))
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $op:ident, $f:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, Op::$op(self.id, rhs.id), $f)
            }
        }
    };
}

var_binop!(Add, add, Add, |a, b| a + b);
var_binop!(Sub, sub, Sub, |a, b| a - b);
var_binop!(Mul, mul, Mul, |a, b| a * b);
var_binop!(Div, div, Div, |a, b| a / b);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |v| -v)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.offset(c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.offset(-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.scale(c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.scale(1.0 / c)
    }
}

impl<'t> Var<'t> {
    /// `c / self`.
    pub fn recip_scaled(self, c: f64) -> Self {
        self.unary(Op::RecipScaled(self.id), |v| c / v)
    }
}

impl<'t> Scalar for Var<'t> {
    type Context = &'t Tape;

    fn constant(ctx: &'t Tape, c: f64) -> Self {
        ctx.scalar(c)
    }

    fn lift(self, c: f64) -> Self {
        self.tape.scalar(c)
    }

    fn value(self) -> f64 {
        Var::value(&self)
    }

    fn sin(self) -> Self {
        Var::sin(self)
    }

    fn cos(self) -> Self {
        Var::cos(self)
    }

    fn tanh(self) -> Self {
        Var::tanh(self)
    }

    fn relu(self) -> Self {
        Var::relu(self)
    }

    fn square(self) -> Self {
        Var::square(self)
    }

    fn wrap_angle(self) -> Self {
        Var::wrap_angle(self)
    }
}
