//! Scalar reverse-mode automatic differentiation on a Wengert tape.
//!
//! Operations record one node per scalar result: the parent indices plus the
//! local partial derivatives, computed at construction time. [`Tape::backward`]
//! then walks the node list once in reverse, accumulating adjoints by the
//! chain rule. Fan-out (reusing a [`Var`] in several expressions) accumulates
//! additively, which is what lets shared network parameters collect gradient
//! contributions from every instance in a bag.
//!
//! One tape per loss graph; tapes are cheap to create and are dropped after
//! the gradients have been read out. Graph construction and backward are
//! single-threaded per tape; callers may evaluate many tapes concurrently.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport};

use std::cell::RefCell;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    local_grads: [f64; 2],
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    /// Sign (input > 0) of every relu recorded, in construction order.
    /// Used by the gradient checker to detect kink crossings.
    relu_signs: Vec<bool>,
    adjoints: Vec<f64>,
    backward_done: bool,
}

/// A tape of recorded scalar operations.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { inner: RefCell::new(TapeInner::default()) }
    }

    /// Record a leaf (input or parameter). Its adjoint is 0.0 until
    /// backward runs.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let index = inner.nodes.len() as u32;
        inner.nodes.push(Node { parents: [index, index], local_grads: [0.0, 0.0] });
        Var { tape: self, index, value }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Activation pattern of all relu nodes, in construction order. Two
    /// builds of the same graph at different inputs can be compared to tell
    /// whether a perturbation crossed a relu kink.
    pub fn relu_signature(&self) -> Vec<bool> {
        self.inner.borrow().relu_signs.clone()
    }

    /// Reverse pass from `root`: after this call every node's adjoint holds
    /// d(root)/d(node). May be called once per tape.
    ///
    /// # Panics
    ///
    /// Panics if `root` was recorded on a different tape, or if backward has
    /// already run on this tape.
    pub fn backward(&self, root: Var<'_>) {
        assert!(
            std::ptr::eq(self, root.tape),
            "backward: root variable belongs to a different tape"
        );
        let mut inner = self.inner.borrow_mut();
        assert!(
            !inner.backward_done,
            "backward: tape already consumed; build a fresh tape per loss"
        );
        inner.backward_done = true;
        let n = inner.nodes.len();
        inner.adjoints = vec![0.0; n];
        inner.adjoints[root.index as usize] = 1.0;
        for i in (0..=root.index as usize).rev() {
            let a = inner.adjoints[i];
            if a == 0.0 {
                continue;
            }
            let node = inner.nodes[i];
            let [p0, p1] = node.parents;
            if p0 as usize != i {
                inner.adjoints[p0 as usize] += node.local_grads[0] * a;
            }
            if p1 as usize != i {
                inner.adjoints[p1 as usize] += node.local_grads[1] * a;
            }
        }
    }

    fn push_binary(&self, a: Var<'_>, b: Var<'_>, value: f64, ga: f64, gb: f64) -> Var<'_> {
        debug_assert!(std::ptr::eq(self, a.tape) && std::ptr::eq(self, b.tape));
        let mut inner = self.inner.borrow_mut();
        let index = inner.nodes.len() as u32;
        inner.nodes.push(Node { parents: [a.index, b.index], local_grads: [ga, gb] });
        Var { tape: self, index, value }
    }

    fn push_unary(&self, a: Var<'_>, value: f64, ga: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let index = inner.nodes.len() as u32;
        // Second parent slot points at the node itself with zero weight.
        inner.nodes.push(Node { parents: [a.index, index], local_grads: [ga, 0.0] });
        Var { tape: self, index, value }
    }

    /// Record a unary node with an arbitrary local gradient. Test hook for
    /// injecting a wrong differentiation rule into the gradient checker.
    #[cfg(test)]
    pub(crate) fn push_unary_raw(&self, a: Var<'_>, value: f64, ga: f64) -> Var<'_> {
        self.push_unary(a, value, ga)
    }
}

/// A scalar value recorded on a [`Tape`]. Copyable handle: the value is
/// cached inline, the adjoint lives on the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    /// The tape this variable was recorded on.
    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// d(root)/d(self) after [`Tape::backward`]; 0.0 before.
    pub fn adjoint(self) -> f64 {
        let inner = self.tape.inner.borrow();
        inner.adjoints.get(self.index as usize).copied().unwrap_or(0.0)
    }

    pub fn backward(self) {
        self.tape.backward(self);
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value.exp();
        self.tape.push_unary(self, v, v)
    }

    /// Natural logarithm.
    ///
    /// # Panics
    ///
    /// Panics on non-positive input; loss code must clamp first.
    pub fn ln(self) -> Var<'t> {
        assert!(
            self.value > 0.0,
            "ln of non-positive value {}; clamp before taking logs",
            self.value
        );
        self.tape.push_unary(self, self.value.ln(), 1.0 / self.value)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let x = self.value;
        // Branch keeps exp() from overflowing for large |x|.
        let s = if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { let e = x.exp(); e / (1.0 + e) };
        self.tape.push_unary(self, s, s * (1.0 - s))
    }

    /// Rectifier; subgradient at 0 is 0.
    pub fn relu(self) -> Var<'t> {
        let active = self.value > 0.0;
        self.tape.inner.borrow_mut().relu_signs.push(active);
        if active {
            self.tape.push_unary(self, self.value, 1.0)
        } else {
            self.tape.push_unary(self, 0.0, 0.0)
        }
    }

    pub fn neg(self) -> Var<'t> {
        self.tape.push_unary(self, -self.value, -1.0)
    }

    /// Clamp by selection at construction time: inside the range the node is
    /// returned unchanged; outside it a detached constant is substituted, so
    /// no gradient flows while the clamp binds.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        if self.value < lo {
            self.tape.var(lo)
        } else if self.value > hi {
            self.tape.var(hi)
        } else {
            self
        }
    }

    fn lift(self, c: f64) -> Var<'t> {
        self.tape.var(c)
    }
}

impl std::ops::Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.tape.push_binary(self, rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl std::ops::Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.tape.push_binary(self, rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl std::ops::Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.tape.push_binary(self, rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl std::ops::Div for Var<'_> {
    type Output = Self;
    /// # Panics
    ///
    /// Panics when the divisor is exactly zero.
    fn div(self, rhs: Self) -> Self {
        assert!(rhs.value != 0.0, "division by zero while recording the graph");
        let v = self.value / rhs.value;
        self.tape
            .push_binary(self, rhs, v, 1.0 / rhs.value, -self.value / (rhs.value * rhs.value))
    }
}

impl std::ops::Add<f64> for Var<'_> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        let c = self.lift(rhs);
        self + c
    }
}

impl std::ops::Sub<f64> for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        let c = self.lift(rhs);
        self - c
    }
}

impl std::ops::Mul<f64> for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        let c = self.lift(rhs);
        self * c
    }
}

impl std::ops::Div<f64> for Var<'_> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        let c = self.lift(rhs);
        self / c
    }
}

impl<'t> std::ops::Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let c = rhs.lift(self);
        c - rhs
    }
}

/// Sum of a non-empty slice of variables.
pub fn sum<'t>(vars: &[Var<'t>]) -> Var<'t> {
    assert!(!vars.is_empty(), "sum of an empty slice");
    vars.iter().copied().reduce(|a, b| a + b).unwrap()
}

/// Numerically stable softmax: exponentials are shifted by the (detached)
/// max logit, which leaves both the values and the gradients of the exact
/// softmax unchanged.
pub fn softmax<'t>(logits: &[Var<'t>]) -> Vec<Var<'t>> {
    assert!(!logits.is_empty(), "softmax of an empty slice");
    let max = logits.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<Var<'t>> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total = sum(&exps);
    exps.into_iter().map(|e| e / total).collect()
}
