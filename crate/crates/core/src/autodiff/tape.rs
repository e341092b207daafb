//! Reverse-mode tape over a generic scalar.
//!
//! The tape records elementary operations on `Var`s whose values are any
//! [`TapeScalar`] — plain `f64` for ordinary losses, [`Jet2`] for losses
//! that contain spatial derivatives. With jets as the tape scalar, one
//! reverse sweep yields ∂/∂θ of expressions like (∂²u/∂x²)², i.e.
//! reverse-over-forward nested differentiation.
//!
//! Correctness of the jet-valued sweep rests on two facts about the
//! truncated Taylor algebra `Jet2` implements:
//!  * every unary elementary op has Jacobian equal to *multiplication by
//!    the lifted derivative* (an algebra element), so local partials are
//!    recorded as scalars of the same type, and
//!  * reverse propagation of a cotangent through such a Jacobian is the
//!    transposed multiplication action [`TapeScalar::adjoint_mul`], not a
//!    plain product — the two differ once component extraction mixes
//!    derivative slots into values.
//!
//! A tape is confined to one thread (it is interiorly mutable and not
//! `Sync`); parallel batch evaluation uses one tape per worker and sums
//! the resulting gradient buffers in a fixed order.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::{Scalar, SpatialScalar};
use super::Jet2;

/// Sentinel index for untracked constants.
const CONST: u32 = u32::MAX;

/// Extraction slots, shared by [`SpatialScalar`] accessors on tape vars.
const SLOT_VALUE: u32 = 0;
const SLOT_DX: u32 = 1;
const SLOT_DY: u32 = 2;
const SLOT_DXX: u32 = 3;
const SLOT_DYY: u32 = 4;
const SLOT_DXY: u32 = 5;

/// Scalars a tape can record: plain values or jets. The extra methods
/// are the adjoint algebra the reverse sweep needs.
pub trait TapeScalar: Scalar {
    /// Transposed action of "multiply by `partial`" applied to a
    /// cotangent. For plain floats this is an ordinary product; for jets
    /// it is Mᵀ(p)·c̄ where M(p) is the multiplication matrix of p.
    fn adjoint_mul(partial: Self, cotangent: Self) -> Self;
    /// Value component of [`adjoint_mul`](Self::adjoint_mul) — the piece
    /// that lands in a parameter gradient.
    fn cotangent_dot(partial: Self, cotangent: Self) -> f64;
    /// Cotangent of the loss with respect to itself.
    fn cotangent_seed() -> Self;
    /// Reciprocal, used when recording division partials.
    fn recip(self) -> Self;
    /// Logistic function, the softplus partial.
    fn sigmoid(self) -> Self;
    /// Component extraction (see the `SLOT_*` constants).
    fn extract(self, slot: u32) -> Self;
    /// Adjoint of extraction: route the cotangent's value component back
    /// into `slot`.
    fn inject(slot: u32, cotangent: Self) -> Self;
    fn all_finite(self) -> bool;
    fn adjoint_is_zero(self) -> bool;
}

impl TapeScalar for f64 {
    #[inline]
    fn adjoint_mul(partial: f64, cotangent: f64) -> f64 {
        partial * cotangent
    }
    #[inline]
    fn cotangent_dot(partial: f64, cotangent: f64) -> f64 {
        partial * cotangent
    }
    #[inline]
    fn cotangent_seed() -> f64 {
        1.0
    }
    #[inline]
    fn recip(self) -> f64 {
        1.0 / self
    }
    #[inline]
    fn sigmoid(self) -> f64 {
        if self >= 0.0 {
            1.0 / (1.0 + (-self).exp())
        } else {
            let e = self.exp();
            e / (1.0 + e)
        }
    }
    #[inline]
    fn extract(self, slot: u32) -> f64 {
        if slot == SLOT_VALUE {
            self
        } else {
            0.0
        }
    }
    #[inline]
    fn inject(slot: u32, cotangent: f64) -> f64 {
        if slot == SLOT_VALUE {
            cotangent
        } else {
            0.0
        }
    }
    #[inline]
    fn all_finite(self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn adjoint_is_zero(self) -> bool {
        self == 0.0
    }
}

impl TapeScalar for Jet2 {
    /// Mᵀ(p)·c̄ in (value, dx, dy, dxx, dyy, dxy) coordinates. Derived by
    /// transposing the product-rule matrix of jet multiplication.
    #[inline]
    fn adjoint_mul(p: Jet2, c: Jet2) -> Jet2 {
        Jet2 {
            value: p.value * c.value
                + p.dx * c.dx
                + p.dy * c.dy
                + p.dxx * c.dxx
                + p.dyy * c.dyy
                + p.dxy * c.dxy,
            dx: p.value * c.dx + 2.0 * p.dx * c.dxx + p.dy * c.dxy,
            dy: p.value * c.dy + 2.0 * p.dy * c.dyy + p.dx * c.dxy,
            dxx: p.value * c.dxx,
            dyy: p.value * c.dyy,
            dxy: p.value * c.dxy,
        }
    }
    #[inline]
    fn cotangent_dot(p: Jet2, c: Jet2) -> f64 {
        p.value * c.value
            + p.dx * c.dx
            + p.dy * c.dy
            + p.dxx * c.dxx
            + p.dyy * c.dyy
            + p.dxy * c.dxy
    }
    #[inline]
    fn cotangent_seed() -> Jet2 {
        Jet2::constant(1.0)
    }
    #[inline]
    fn recip(self) -> Jet2 {
        Jet2::recip(self)
    }
    #[inline]
    fn sigmoid(self) -> Jet2 {
        Jet2::sigmoid(self)
    }
    #[inline]
    fn extract(self, slot: u32) -> Jet2 {
        match slot {
            SLOT_VALUE => Jet2::constant(self.value),
            SLOT_DX => Jet2::constant(self.dx),
            SLOT_DY => Jet2::constant(self.dy),
            SLOT_DXX => Jet2::constant(self.dxx),
            SLOT_DYY => Jet2::constant(self.dyy),
            _ => Jet2::constant(self.dxy),
        }
    }
    #[inline]
    fn inject(slot: u32, c: Jet2) -> Jet2 {
        let mut out = Jet2::constant(0.0);
        match slot {
            SLOT_VALUE => out.value = c.value,
            SLOT_DX => out.dx = c.value,
            SLOT_DY => out.dy = c.value,
            SLOT_DXX => out.dxx = c.value,
            SLOT_DYY => out.dyy = c.value,
            _ => out.dxy = c.value,
        }
        out
    }
    #[inline]
    fn all_finite(self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn adjoint_is_zero(self) -> bool {
        self.value == 0.0
            && self.dx == 0.0
            && self.dy == 0.0
            && self.dxx == 0.0
            && self.dyy == 0.0
            && self.dxy == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OpCode {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddK,
    MulK,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Softplus,
    Extract,
    /// Fused affine combination: bias + Σ wᵢ·xᵢ over a contiguous run of
    /// nodes, with weights and bias taken straight from the parameter
    /// vector. One node per neuron instead of one per weight.
    DotAffine,
}

#[derive(Clone, Copy)]
struct Node<T> {
    op: OpCode,
    /// First argument (node or parameter index), or `CONST`.
    a: u32,
    /// Second argument; for `DotAffine` the weight parameter base.
    b: u32,
    /// Extraction slot, or `DotAffine` input count.
    n: u32,
    /// `DotAffine` bias parameter index.
    m: u32,
    /// Constant payload for the `*K` ops.
    k: f64,
    value: T,
    /// Local partials as algebra elements (see module docs).
    p1: T,
    p2: T,
    adj: T,
}

/// Errors from recording or replaying a tape.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("reverse sweep already replayed; reset the tape before reusing it")]
    Replayed,
    #[error("gradient buffer length {got} does not match parameter vector length {expected}")]
    BufferMismatch { expected: usize, got: usize },
    #[error("non-finite loss: first offending term {term}")]
    NonFiniteLoss { term: String },
}

/// Recorded elementary operations over parameter-tracked scalars, plus
/// the parameter vector they track. Gradients land in a caller-supplied
/// buffer aligned index-for-index with that vector.
pub struct Tape<'p, T: TapeScalar> {
    params: &'p [f64],
    nodes: RefCell<Vec<Node<T>>>,
    swept: Cell<bool>,
}

/// A value recorded on (or constant with respect to) a tape.
#[derive(Clone, Copy)]
pub struct Var<'a, T: TapeScalar> {
    tape: Option<&'a Tape<'a, T>>,
    idx: u32,
    value: T,
}

impl<T: TapeScalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("idx", &self.idx).field("value", &self.value).finish()
    }
}

impl<'p, T: TapeScalar> Tape<'p, T> {
    pub fn new(params: &'p [f64]) -> Self {
        assert!(params.len() < CONST as usize, "parameter vector too large");
        Tape { params, nodes: RefCell::new(Vec::new()), swept: Cell::new(false) }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn param_value(&self, i: usize) -> f64 {
        self.params[i]
    }

    /// Clear recorded operations (parameters stay) and re-arm the sweep.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        self.swept.set(false);
    }

    /// A tracked variable for parameter `i`.
    pub fn param<'a>(&'a self, i: usize) -> Var<'a, T> {
        assert!(i < self.params.len(), "parameter index {i} out of range");
        Var { tape: Some(self.shorten()), idx: i as u32, value: T::constant(self.params[i]) }
    }

    /// A tracked input leaf (e.g. a seeded coordinate jet).
    pub fn leaf<'a>(&'a self, value: T) -> Var<'a, T> {
        let idx = self.push(Node {
            op: OpCode::Leaf,
            a: CONST,
            b: CONST,
            n: 0,
            m: 0,
            k: 0.0,
            value,
            p1: T::constant(0.0),
            p2: T::constant(0.0),
            adj: T::constant(0.0),
        });
        Var { tape: Some(self.shorten()), idx, value }
    }

    /// An untracked constant. Also available through `Scalar::constant`
    /// on `Var`, which is how generic code creates them.
    pub fn constant<'a>(&'a self, c: f64) -> Var<'a, T> {
        Var { tape: Some(self.shorten()), idx: CONST, value: T::constant(c) }
    }

    /// Fused affine combination `params[bias] + Σ params[w_base+i]·xᵢ`
    /// where the inputs are the `len` consecutively recorded nodes
    /// starting at `x_base`. Accumulation order is bias first, then
    /// ascending `i` — the plain (off-tape) forward uses the same order
    /// so the two agree bit for bit.
    pub fn dot_affine<'a>(
        &'a self,
        x_base: Var<'a, T>,
        len: usize,
        w_base: usize,
        bias: usize,
    ) -> Var<'a, T> {
        let p = self.params.len();
        assert!(x_base.idx != CONST && (x_base.idx as usize) >= p, "inputs must be nodes");
        assert!(w_base + len <= p && bias < p, "parameter slice out of range");
        let base = x_base.idx as usize - p;
        let mut acc = T::constant(self.params[bias]);
        {
            let nodes = self.nodes.borrow();
            assert!(base + len <= nodes.len(), "input run out of range");
            for i in 0..len {
                acc = acc + nodes[base + i].value.scale(self.params[w_base + i]);
            }
        }
        let idx = self.push(Node {
            op: OpCode::DotAffine,
            a: x_base.idx,
            b: w_base as u32,
            n: len as u32,
            m: bias as u32,
            k: 0.0,
            value: acc,
            p1: T::constant(0.0),
            p2: T::constant(0.0),
            adj: T::constant(0.0),
        });
        Var { tape: Some(self.shorten()), idx, value: acc }
    }

    /// Reverse sweep from `loss`, accumulating parameter cotangents into
    /// `grad` (added, not overwritten). Errors if the buffer is
    /// misaligned, if the sweep was already replayed without a reset, or
    /// if the loss value is non-finite.
    pub fn backward_into(&self, loss: Var<'_, T>, grad: &mut [f64]) -> Result<(), AdError> {
        if grad.len() != self.params.len() {
            return Err(AdError::BufferMismatch { expected: self.params.len(), got: grad.len() });
        }
        if self.swept.get() {
            return Err(AdError::Replayed);
        }
        self.swept.set(true);
        if !loss.value.all_finite() {
            return Err(AdError::NonFiniteLoss { term: self.first_non_finite() });
        }
        let p = self.params.len();
        if loss.idx == CONST {
            return Ok(()); // constant loss: zero gradient
        }
        if (loss.idx as usize) < p {
            grad[loss.idx as usize] += 1.0;
            return Ok(());
        }
        let mut nodes = self.nodes.borrow_mut();
        let start = loss.idx as usize - p;
        nodes[start].adj = T::cotangent_seed();
        for i in (0..=start).rev() {
            let nd = nodes[i];
            if nd.adj.adjoint_is_zero() {
                continue;
            }
            let cbar = nd.adj;
            match nd.op {
                OpCode::Leaf => {}
                OpCode::Add => {
                    Self::accum(&mut nodes, grad, p, nd.a, cbar);
                    Self::accum(&mut nodes, grad, p, nd.b, cbar);
                }
                OpCode::Sub => {
                    Self::accum(&mut nodes, grad, p, nd.a, cbar);
                    Self::accum(&mut nodes, grad, p, nd.b, -cbar);
                }
                OpCode::Mul | OpCode::Div => {
                    Self::accum(&mut nodes, grad, p, nd.a, T::adjoint_mul(nd.p1, cbar));
                    Self::accum(&mut nodes, grad, p, nd.b, T::adjoint_mul(nd.p2, cbar));
                }
                OpCode::Neg => Self::accum(&mut nodes, grad, p, nd.a, -cbar),
                OpCode::AddK => Self::accum(&mut nodes, grad, p, nd.a, cbar),
                OpCode::MulK => Self::accum(&mut nodes, grad, p, nd.a, cbar.scale(nd.k)),
                OpCode::Tanh
                | OpCode::Exp
                | OpCode::Ln
                | OpCode::Sqrt
                | OpCode::Sin
                | OpCode::Cos
                | OpCode::Softplus => {
                    Self::accum(&mut nodes, grad, p, nd.a, T::adjoint_mul(nd.p1, cbar));
                }
                OpCode::Extract => {
                    Self::accum(&mut nodes, grad, p, nd.a, T::inject(nd.n, cbar));
                }
                OpCode::DotAffine => {
                    let base = nd.a as usize - p;
                    let (w, len, bias) = (nd.b as usize, nd.n as usize, nd.m as usize);
                    for j in 0..len {
                        let xv = nodes[base + j].value;
                        nodes[base + j].adj = nodes[base + j].adj + cbar.scale(self.params[w + j]);
                        grad[w + j] += T::cotangent_dot(xv, cbar);
                    }
                    grad[bias] += T::cotangent_dot(T::constant(1.0), cbar);
                }
            }
        }
        Ok(())
    }

    fn accum(nodes: &mut [Node<T>], grad: &mut [f64], p: usize, idx: u32, delta: T) {
        if idx == CONST {
            return;
        }
        let i = idx as usize;
        if i < p {
            grad[i] += delta.primal();
        } else {
            nodes[i - p].adj = nodes[i - p].adj + delta;
        }
    }

    fn first_non_finite(&self) -> String {
        let nodes = self.nodes.borrow();
        for (i, nd) in nodes.iter().enumerate() {
            if !nd.value.all_finite() {
                return format!("{:?} at node {i} (value {:?})", nd.op, nd.value);
            }
        }
        "loss combination of finite terms".to_string()
    }

    fn push(&self, node: Node<T>) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = self.params.len() + nodes.len();
        assert!(idx < CONST as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// View `&'a Tape<'p, T>` as `&'a Tape<'a, T>` (covariant in the
    /// parameter lifetime), so `Var` needs only one lifetime.
    fn shorten<'a>(&'a self) -> &'a Tape<'a, T> {
        self
    }
}

impl<'a, T: TapeScalar> Var<'a, T> {
    /// The underlying scalar (named to avoid shadowing the
    /// `SpatialScalar::value` extraction, which records a tape node).
    pub fn inner(self) -> T {
        self.value
    }

    pub fn is_tracked(self) -> bool {
        self.idx != CONST
    }

    fn tape_of(a: Var<'a, T>, b: Var<'a, T>) -> Option<&'a Tape<'a, T>> {
        match (a.tape, b.tape) {
            (Some(t), Some(u)) => {
                debug_assert!(std::ptr::eq(t, u), "variables from different tapes");
                Some(t)
            }
            (Some(t), None) | (None, Some(t)) => Some(t),
            (None, None) => None,
        }
    }

    fn record(
        tape: Option<&'a Tape<'a, T>>,
        op: OpCode,
        a: u32,
        b: u32,
        n: u32,
        k: f64,
        value: T,
        p1: T,
        p2: T,
    ) -> Var<'a, T> {
        match tape {
            Some(t) if a != CONST || b != CONST => {
                let idx = t.push(Node {
                    op,
                    a,
                    b,
                    n,
                    m: 0,
                    k,
                    value,
                    p1,
                    p2,
                    adj: T::constant(0.0),
                });
                Var { tape: Some(t), idx, value }
            }
            // Both operands constant: fold without recording.
            other => Var { tape: other, idx: CONST, value },
        }
    }

    fn unary(self, op: OpCode, value: T, p1: T) -> Var<'a, T> {
        if self.idx == CONST {
            return Var { tape: self.tape, idx: CONST, value };
        }
        Self::record(self.tape, op, self.idx, CONST, 0, 0.0, value, p1, T::constant(0.0))
    }
}

impl<'a, T: TapeScalar> Add for Var<'a, T> {
    type Output = Var<'a, T>;
    fn add(self, rhs: Self) -> Self {
        let tape = Self::tape_of(self, rhs);
        let value = self.value + rhs.value;
        if self.idx == CONST && rhs.idx == CONST {
            return Var { tape, idx: CONST, value };
        }
        if self.idx == CONST {
            return rhs.offset_by(self.value.primal(), tape, value);
        }
        if rhs.idx == CONST {
            return self.offset_by(rhs.value.primal(), tape, value);
        }
        Self::record(
            tape,
            OpCode::Add,
            self.idx,
            rhs.idx,
            0,
            0.0,
            value,
            T::constant(0.0),
            T::constant(0.0),
        )
    }
}

impl<'a, T: TapeScalar> Sub for Var<'a, T> {
    type Output = Var<'a, T>;
    fn sub(self, rhs: Self) -> Self {
        let tape = Self::tape_of(self, rhs);
        let value = self.value - rhs.value;
        if self.idx == CONST && rhs.idx == CONST {
            return Var { tape, idx: CONST, value };
        }
        if rhs.idx == CONST {
            return self.offset_by(-rhs.value.primal(), tape, value);
        }
        if self.idx == CONST {
            // k - b = -(b - k): one Neg node plus the folded offset.
            let shifted = rhs.offset_by(-self.value.primal(), tape, rhs.value - self.value);
            return -shifted;
        }
        Self::record(
            tape,
            OpCode::Sub,
            self.idx,
            rhs.idx,
            0,
            0.0,
            value,
            T::constant(0.0),
            T::constant(0.0),
        )
    }
}

impl<'a, T: TapeScalar> Mul for Var<'a, T> {
    type Output = Var<'a, T>;
    fn mul(self, rhs: Self) -> Self {
        let tape = Self::tape_of(self, rhs);
        let value = self.value * rhs.value;
        match (self.idx == CONST, rhs.idx == CONST) {
            (true, true) => Var { tape, idx: CONST, value },
            // Multiplying a tracked var by a *jet* constant is a full
            // product; only plain constants take the cheap MulK path.
            (true, false) => Self::record(
                tape,
                OpCode::Mul,
                CONST,
                rhs.idx,
                0,
                0.0,
                value,
                T::constant(0.0),
                self.value,
            ),
            (false, true) => Self::record(
                tape,
                OpCode::Mul,
                self.idx,
                CONST,
                0,
                0.0,
                value,
                rhs.value,
                T::constant(0.0),
            ),
            (false, false) => Self::record(
                tape,
                OpCode::Mul,
                self.idx,
                rhs.idx,
                0,
                0.0,
                value,
                rhs.value,
                self.value,
            ),
        }
    }
}

impl<'a, T: TapeScalar> Div for Var<'a, T> {
    type Output = Var<'a, T>;
    fn div(self, rhs: Self) -> Self {
        let tape = Self::tape_of(self, rhs);
        let rinv = rhs.value.recip();
        let value = self.value * rinv;
        match (self.idx == CONST, rhs.idx == CONST) {
            (true, true) => Var { tape, idx: CONST, value },
            (false, true) => Self::record(
                tape,
                OpCode::Div,
                self.idx,
                CONST,
                0,
                0.0,
                value,
                rinv,
                T::constant(0.0),
            ),
            _ => Self::record(
                tape,
                OpCode::Div,
                self.idx,
                rhs.idx,
                0,
                0.0,
                value,
                rinv,
                -(value * rinv),
            ),
        }
    }
}

impl<'a, T: TapeScalar> Neg for Var<'a, T> {
    type Output = Var<'a, T>;
    fn neg(self) -> Self {
        self.unary(OpCode::Neg, -self.value, T::constant(0.0))
    }
}

impl<'a, T: TapeScalar> Var<'a, T> {
    fn offset_by(self, k: f64, tape: Option<&'a Tape<'a, T>>, value: T) -> Var<'a, T> {
        if self.idx == CONST {
            return Var { tape, idx: CONST, value };
        }
        Self::record(tape, OpCode::AddK, self.idx, CONST, 0, k, value, T::constant(0.0), T::constant(0.0))
    }
}

impl<'a, T: TapeScalar> Scalar for Var<'a, T> {
    fn constant(c: f64) -> Self {
        Var { tape: None, idx: CONST, value: T::constant(c) }
    }
    fn primal(self) -> f64 {
        self.value.primal()
    }
    fn scale(self, k: f64) -> Self {
        if self.idx == CONST {
            return Var { tape: self.tape, idx: CONST, value: self.value.scale(k) };
        }
        Self::record(
            self.tape,
            OpCode::MulK,
            self.idx,
            CONST,
            0,
            k,
            self.value.scale(k),
            T::constant(0.0),
            T::constant(0.0),
        )
    }
    fn offset(self, k: f64) -> Self {
        self.offset_by(k, self.tape, self.value.offset(k))
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(OpCode::Tanh, t, T::constant(1.0) - t * t)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(OpCode::Exp, e, e)
    }
    fn ln(self) -> Self {
        self.unary(OpCode::Ln, self.value.ln(), self.value.recip())
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.unary(OpCode::Sqrt, s, s.recip().scale(0.5))
    }
    fn sin(self) -> Self {
        self.unary(OpCode::Sin, self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.unary(OpCode::Cos, self.value.cos(), -self.value.sin())
    }
    fn softplus(self) -> Self {
        self.unary(OpCode::Softplus, self.value.softplus(), self.value.sigmoid())
    }
    fn floor_at(self, k: f64) -> Self {
        // Above the floor the result *is* the input; below it the result
        // is a constant, which deliberately cuts the derivative path.
        if self.value.primal() >= k {
            self
        } else {
            Var { tape: self.tape, idx: CONST, value: T::constant(k) }
        }
    }
}

impl<'a> Var<'a, Jet2> {
    fn extract_slot(self, slot: u32) -> Var<'a, Jet2> {
        let value = self.value.extract(slot);
        if self.idx == CONST {
            return Var { tape: self.tape, idx: CONST, value };
        }
        Self::record(
            self.tape,
            OpCode::Extract,
            self.idx,
            CONST,
            slot,
            0.0,
            value,
            Jet2::constant(0.0),
            Jet2::constant(0.0),
        )
    }
}

impl<'a> SpatialScalar for Var<'a, Jet2> {
    fn value(self) -> Self {
        self.extract_slot(SLOT_VALUE)
    }
    fn dx(self) -> Self {
        self.extract_slot(SLOT_DX)
    }
    fn dy(self) -> Self {
        self.extract_slot(SLOT_DY)
    }
    fn dxx(self) -> Self {
        self.extract_slot(SLOT_DXX)
    }
    fn dyy(self) -> Self {
        self.extract_slot(SLOT_DYY)
    }
    fn dxy(self) -> Self {
        self.extract_slot(SLOT_DXY)
    }
}

/// Evaluate `loss_eval` on a fresh tape over `params` and return the
/// loss value together with its gradient. Works for any tape scalar;
/// instantiate with [`Jet2`] when the loss contains spatial-derivative
/// terms (residuals with ∂²u/∂x² and the like).
pub fn loss_gradient<T, F>(params: &[f64], loss_eval: F) -> Result<(f64, Vec<f64>), AdError>
where
    T: TapeScalar,
    F: for<'a> FnOnce(&'a Tape<'a, T>) -> Var<'a, T>,
{
    let tape: Tape<'_, T> = Tape::new(params);
    let loss = loss_eval(&tape);
    let mut grad = vec![0.0; params.len()];
    tape.backward_into(loss, &mut grad)?;
    Ok((loss.primal(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences in parameter space — the independent
    /// oracle for every gradient produced by the tape.
    fn fd_grad(params: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        let mut w = params.to_vec();
        for i in 0..params.len() {
            let h = 1e-6 * params[i].abs().max(1.0);
            w[i] = params[i] + h;
            let up = f(&w);
            w[i] = params[i] - h;
            let dn = f(&w);
            w[i] = params[i];
            g[i] = (up - dn) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(got: &[f64], want: &[f64], rel: f64) {
        for (i, (a, b)) in got.iter().zip(want).enumerate() {
            let diff = (a - b).abs();
            let scale = a.abs().max(b.abs()).max(1e-3);
            assert!(diff <= rel * scale, "grad[{i}]: {a} vs oracle {b} (diff {diff:e})");
        }
    }

    /// Closed-form check: L = θ₀²·θ₁ + sin θ₀.
    #[test]
    fn plain_gradient_matches_closed_form() {
        let params = [0.7, -1.3];
        let (loss, grad) = loss_gradient::<f64, _>(&params, |t| {
            let a = t.param(0);
            let b = t.param(1);
            a * a * b + a.sin()
        })
        .unwrap();
        let want_loss = 0.7f64 * 0.7 * -1.3 + 0.7f64.sin();
        assert!((loss - want_loss).abs() < 1e-15);
        let want = [2.0 * 0.7 * -1.3 + 0.7f64.cos(), 0.7 * 0.7];
        assert_grad_close(&grad, &want, 1e-14);
    }

    /// Least squares through the fused affine op: L = Σ(w·xᵢ + b − yᵢ)²/N
    /// has the textbook normal-equation gradient.
    #[test]
    fn dot_affine_least_squares_gradient() {
        let params = [0.4, -0.2, 0.9, 0.1]; // w0, w1, w2, b
        let xs = [[1.0, 2.0, -1.0], [0.5, -0.3, 0.7], [2.0, 0.1, 0.4], [-1.2, 1.1, 0.0]];
        let ys = [1.0, -0.5, 2.0, 0.3];
        let eval = |p: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                let pred = p[3] + p[0] * x[0] + p[1] * x[1] + p[2] * x[2];
                acc += (pred - y) * (pred - y);
            }
            acc / xs.len() as f64
        };
        let (loss, grad) = loss_gradient::<f64, _>(&params, |t| {
            let mut acc = Var::constant(0.0);
            for (x, y) in xs.iter().zip(&ys) {
                let x0 = t.leaf(x[0]);
                let _x1 = t.leaf(x[1]);
                let _x2 = t.leaf(x[2]);
                let pred = t.dot_affine(x0, 3, 0, 3);
                let e = pred.offset(-y);
                acc = acc + e * e;
            }
            acc.scale(1.0 / xs.len() as f64)
        })
        .unwrap();
        assert!((loss - eval(&params)).abs() < 1e-14);
        // Analytic: ∂L/∂w_j = 2/N Σ (pred−y)·x_j, ∂L/∂b = 2/N Σ (pred−y).
        let mut want = [0.0; 4];
        for (x, y) in xs.iter().zip(&ys) {
            let pred = params[3] + params[0] * x[0] + params[1] * x[1] + params[2] * x[2];
            let r = 2.0 * (pred - y) / xs.len() as f64;
            want[0] += r * x[0];
            want[1] += r * x[1];
            want[2] += r * x[2];
            want[3] += r;
        }
        assert_grad_close(&grad, &want, 1e-13);
        assert_grad_close(&grad, &fd_grad(&params, &eval), 1e-7);
    }

    /// A loss built from a *second* spatial derivative of a tiny network:
    /// u(x) = tanh(θ₀·x + θ₁), L = (∂²u/∂x² + u)². The parameter
    /// gradient must match parameter-space finite differences even
    /// though the loss mixes jet components.
    #[test]
    fn jet_tape_differentiates_second_derivative_losses() {
        let params = [0.8, -0.3];
        let x0 = 0.45;
        let eval = |p: &[f64]| -> f64 {
            // Closed form: u = tanh(z), u_xx = θ₀²·(-2 t (1-t²)).
            let z = p[0] * x0 + p[1];
            let t = z.tanh();
            let uxx = p[0] * p[0] * (-2.0 * t * (1.0 - t * t));
            (uxx + t) * (uxx + t)
        };
        let (loss, grad) = loss_gradient::<Jet2, _>(&params, |t| {
            let x = t.leaf(Jet2::seed_x(x0));
            let th0 = t.param(0);
            let th1 = t.param(1);
            let u = (x * th0 + th1).tanh();
            let r = u.dxx() + u.value();
            r * r
        })
        .unwrap();
        assert!((loss - eval(&params)).abs() < 1e-12, "loss {loss} vs {}", eval(&params));
        assert_grad_close(&grad, &fd_grad(&params, &eval), 1e-7);
    }

    /// Worked example for the extraction adjoint: the dx component of
    /// θ·x has ∂/∂θ exactly 1.
    #[test]
    fn extraction_adjoint_routes_slots() {
        let params = [2.5];
        let (loss, grad) = loss_gradient::<Jet2, _>(&params, |t| {
            let x = t.leaf(Jet2::seed_x(1.7));
            (x * t.param(0)).dx()
        })
        .unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(grad, vec![1.0]);
    }

    /// Gradient of a sum of losses equals the sum of the gradients.
    #[test]
    fn gradient_is_additive_over_losses() {
        let params = [0.3, 1.1, -0.6];
        fn l1<'a>(t: &'a Tape<'a, f64>) -> Var<'a, f64> {
            let a = t.param(0);
            let b = t.param(1);
            (a * b).exp()
        }
        fn l2<'a>(t: &'a Tape<'a, f64>) -> Var<'a, f64> {
            let b = t.param(1);
            let c = t.param(2);
            b.tanh() * c + c * c
        }
        let (_, g1) = loss_gradient::<f64, _>(&params, l1).unwrap();
        let (_, g2) = loss_gradient::<f64, _>(&params, l2).unwrap();
        let (_, gsum) = loss_gradient::<f64, _>(&params, |t| l1(t) + l2(t)).unwrap();
        for i in 0..params.len() {
            let want = g1[i] + g2[i];
            assert!(
                (gsum[i] - want).abs() <= 1e-12 * want.abs().max(1.0),
                "component {i}: {} vs {}",
                gsum[i],
                want
            );
        }
    }

    /// Every elementary op on the tape agrees with finite differences,
    /// both at the f64 scalar and at the jet scalar (value component).
    #[test]
    fn tape_ops_match_finite_differences() {
        type Case = (&'static str, fn(&[f64]) -> f64, for<'a> fn(&'a Tape<'a, f64>) -> Var<'a, f64>);
        let cases: Vec<Case> = vec![
            ("div", |p| p[0] / p[1], |t| t.param(0) / t.param(1)),
            ("sub_neg", |p| -(p[0] - p[1] * 2.0), |t| -(t.param(0) - t.param(1).scale(2.0))),
            ("ln_sqrt", |p| (p[0].sqrt() + 1.0).ln(), |t| t.param(0).sqrt().offset(1.0).ln()),
            ("sincos", |p| p[0].sin() * p[1].cos(), |t| t.param(0).sin() * t.param(1).cos()),
            (
                "softplus",
                |p| (1.0 + (p[0] * p[1]).exp()).ln(),
                |t| (t.param(0) * t.param(1)).softplus(),
            ),
            (
                "const_sub",
                |p| 3.0 - p[0] / (2.0 / p[1]),
                |t| Var::constant(3.0) - t.param(0) / (Var::constant(2.0) / t.param(1)),
            ),
            (
                "floor_active",
                |p| p[0].max(10.0) * p[1],
                |t| t.param(0).floor_at(10.0) * t.param(1),
            ),
        ];
        let params = [1.3, 0.7];
        for (name, plain, taped) in cases {
            let (loss, grad) = loss_gradient::<f64, _>(&params, taped).unwrap();
            assert!((loss - plain(&params)).abs() < 1e-12, "{name} value");
            let want = fd_grad(&params, &plain);
            for (g, w) in grad.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-6 * w.abs().max(1e-3), "{name}: {g} vs fd {w}");
            }
        }
    }

    #[test]
    fn replaying_without_reset_is_an_error() {
        let params = [1.0];
        let tape: Tape<'_, f64> = Tape::new(&params);
        let loss = tape.param(0).tanh();
        let mut grad = vec![0.0];
        tape.backward_into(loss, &mut grad).unwrap();
        assert_eq!(tape.backward_into(loss, &mut grad), Err(AdError::Replayed));
        // After a reset the tape records and sweeps again.
        tape.reset();
        let loss = tape.param(0).exp();
        let mut grad2 = vec![0.0];
        tape.backward_into(loss, &mut grad2).unwrap();
        assert!((grad2[0] - 1.0f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn misaligned_gradient_buffer_is_an_error() {
        let params = [1.0, 2.0];
        let tape: Tape<'_, f64> = Tape::new(&params);
        let loss = tape.param(0) + tape.param(1);
        let mut grad = vec![0.0; 3];
        assert_eq!(
            tape.backward_into(loss, &mut grad),
            Err(AdError::BufferMismatch { expected: 2, got: 3 })
        );
    }

    #[test]
    fn non_finite_loss_identifies_offending_term() {
        let params = [-2.0];
        let err = loss_gradient::<f64, _>(&params, |t| t.param(0).ln()).unwrap_err();
        match err {
            AdError::NonFiniteLoss { term } => assert!(term.contains("Ln"), "term: {term}"),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    /// The fused affine op is exactly the unfused chain of mul/add.
    #[test]
    fn dot_affine_equals_unfused_ops() {
        let params = [0.3, -0.8, 0.5, 0.2]; // two weights + bias reused twice
        let fused = loss_gradient::<Jet2, _>(&params, |t| {
            let a = t.leaf(Jet2::seed_x(0.6));
            let _b = t.leaf(Jet2::seed_y(-0.4));
            let z = t.dot_affine(a, 2, 0, 2);
            let u = z.tanh();
            u.dxx() * u.dxx() + u.value()
        })
        .unwrap();
        let unfused = loss_gradient::<Jet2, _>(&params, |t| {
            let a = t.leaf(Jet2::seed_x(0.6));
            let b = t.leaf(Jet2::seed_y(-0.4));
            let z = t.param(2) + a * t.param(0) + b * t.param(1);
            let u = z.tanh();
            u.dxx() * u.dxx() + u.value()
        })
        .unwrap();
        assert!((fused.0 - unfused.0).abs() < 1e-15);
        assert_grad_close(&fused.1, &unfused.1, 1e-12);
    }
}
