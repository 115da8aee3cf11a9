//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! The likelihood, priors and transforms are written once, generically over
//! [`Real`]; instantiating with `f64` gives the plain fast evaluation and
//! instantiating with [`Var`] records the computation on a [`Tape`] so a
//! single backward sweep yields the full gradient.
//!
//! Local partial derivatives are computed eagerly during the forward pass and
//! stored with each node, so the backward sweep is a pure multiply-accumulate
//! loop. Nodes with many parents (the stationary-distribution solve) spill
//! their partials into a side buffer.

use crate::math::special;
use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf,
    Unary(u32, f64),
    Binary(u32, f64, u32, f64),
    Multi { start: u32, len: u32 },
}

/// Arena for one gradient evaluation. Cleared and reused between calls.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    spill: RefCell<Vec<(u32, f64)>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(nodes)),
            spill: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Reset for reuse without freeing capacity.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.spill.borrow_mut().clear();
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(node);
        idx
    }

    /// New independent input variable.
    pub fn var(&self, val: f64) -> Var<'_> {
        let idx = self.push(Node::Leaf);
        Var { tape: self, idx, val }
    }

    /// Node whose partials against many parents are supplied explicitly.
    /// Used for operations differentiated implicitly (e.g. a linear solve).
    pub fn multi(&self, val: f64, partials: &[(Var<'_>, f64)]) -> Var<'_> {
        let start = {
            let mut spill = self.spill.borrow_mut();
            let start = spill.len() as u32;
            spill.extend(partials.iter().map(|&(v, d)| (v.idx, d)));
            start
        };
        let idx = self.push(Node::Multi { start, len: partials.len() as u32 });
        Var { tape: self, idx, val }
    }

    /// Adjoints of every node with respect to `out` (∂out/∂node).
    pub fn gradient(&self, out: Var<'_>) -> Vec<f64> {
        debug_assert!(std::ptr::eq(out.tape, self));
        let nodes = self.nodes.borrow();
        let spill = self.spill.borrow();
        let n = nodes.len();
        let mut adj = vec![0.0f64; n];
        adj[out.idx as usize] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            match nodes[i] {
                Node::Leaf => {}
                Node::Unary(p, d) => adj[p as usize] += a * d,
                Node::Binary(p1, d1, p2, d2) => {
                    adj[p1 as usize] += a * d1;
                    adj[p2 as usize] += a * d2;
                }
                Node::Multi { start, len } => {
                    for &(p, d) in &spill[start as usize..(start + len) as usize] {
                        adj[p as usize] += a * d;
                    }
                }
            }
        }
        adj
    }
}

/// Handle to a tape node; cheap to copy, carries its primal value.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    #[inline]
    pub fn index(&self) -> usize {
        self.idx as usize
    }

    #[inline]
    pub(crate) fn tape(&self) -> &'t Tape {
        self.tape
    }

    #[inline]
    fn unary(self, val: f64, partial: f64) -> Var<'t> {
        let idx = self.tape.push(Node::Unary(self.idx, partial));
        Var { tape: self.tape, idx, val }
    }

    #[inline]
    fn binary(self, other: Var<'t>, val: f64, d_self: f64, d_other: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let idx = self.tape.push(Node::Binary(self.idx, d_self, other.idx, d_other));
        Var { tape: self.tape, idx, val }
    }
}

impl PartialEq for Var<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        let inv = 1.0 / rhs.val;
        self.binary(rhs, self.val * inv, inv, -self.val * inv * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self::Output {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self::Output {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self::Output {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self::Output {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

/// Scalar abstraction implemented by `f64` (plain evaluation) and [`Var`]
/// (taped evaluation). Mixed `f64` operands fold into node partials, so no
/// constant nodes are recorded.
pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Primal value.
    fn val(self) -> f64;
    /// A constant in the same evaluation context as `self`.
    fn lit(self, c: f64) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn ln_gamma(self) -> Self;
    /// `lhs - self` without a separate constant node.
    fn rsub(self, lhs: f64) -> Self;
    /// `lhs / self`.
    fn rdiv(self, lhs: f64) -> Self;
}

impl Real for f64 {
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn lit(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn ln_gamma(self) -> Self {
        special::ln_gamma(self)
    }
    #[inline]
    fn rsub(self, lhs: f64) -> Self {
        lhs - self
    }
    #[inline]
    fn rdiv(self, lhs: f64) -> Self {
        lhs / self
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn val(self) -> f64 {
        self.val
    }
    fn lit(self, c: f64) -> Self {
        self.tape.var(c)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn ln_1p(self) -> Self {
        self.unary(self.val.ln_1p(), 1.0 / (1.0 + self.val))
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn powi(self, n: i32) -> Self {
        self.unary(self.val.powi(n), n as f64 * self.val.powi(n - 1))
    }
    fn ln_gamma(self) -> Self {
        self.unary(special::ln_gamma(self.val), special::digamma(self.val))
    }
    fn rsub(self, lhs: f64) -> Self {
        self.unary(lhs - self.val, -1.0)
    }
    fn rdiv(self, lhs: f64) -> Self {
        self.unary(lhs / self.val, -lhs / (self.val * self.val))
    }
}

/// Stable log(Σ exp(x_i)) over any `Real`.
pub fn log_sum_exp_real<S: Real>(xs: &[S]) -> S {
    let (mut arg_max, mut max) = (0usize, f64::NEG_INFINITY);
    for (i, x) in xs.iter().enumerate() {
        if x.val() > max {
            max = x.val();
            arg_max = i;
        }
    }
    let m = xs[arg_max];
    let mut sum = m.lit(0.0);
    for (i, &x) in xs.iter().enumerate() {
        if i != arg_max {
            sum = sum + (x - m).exp();
        }
    }
    m + sum.ln_1p()
}
