//! Scalar reverse-mode tape.
//!
//! Every operation appends a node holding up to two parent indices and the
//! local partial derivatives. Nodes are appended in evaluation order, so the
//! tape is already topologically sorted and a single backward sweep yields
//! the adjoint of every node.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

#[derive(Default)]
pub struct ParamTape {
    nodes: RefCell<Vec<Node>>,
}

/// A scalar recorded on a [`ParamTape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t ParamTape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("index", &self.index)
            .field("value", &self.value)
            .finish()
    }
}

impl ParamTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A new leaf (parameter, input or constant).
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push([0, 0], [0.0, 0.0]);
        Var { tape: self, index, value }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push(&self, parents: [usize; 2], partials: [f64; 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents, partials });
        nodes.len() - 1
    }

    fn unary(&self, a: Var<'_>, partial: f64, value: f64) -> Var<'_> {
        let index = self.push([a.index, a.index], [partial, 0.0]);
        Var { tape: self, index, value }
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, partials: [f64; 2], value: f64) -> Var<'_> {
        let index = self.push([a.index, b.index], partials);
        Var { tape: self, index, value }
    }

    /// Adjoint of every node with respect to `root`.
    pub fn adjoints(&self, root: Var<'_>) -> Vec<f64> {
        assert!(std::ptr::eq(self, root.tape), "root recorded on another tape");
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[root.index] = 1.0;
        for i in (0..=root.index).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                if node.partials[k] != 0.0 {
                    adj[node.parents[k]] += a * node.partials[k];
                }
            }
        }
        adj
    }
}

/// Reverse sweep from `loss_root`, returning `d loss / d p` for each entry of
/// `params`. Parameters the loss never touched get exactly zero.
pub fn loss_gradient(tape: &ParamTape, loss_root: Var<'_>, params: &[Var<'_>]) -> Vec<f64> {
    let adj = tape.adjoints(loss_root);
    params
        .iter()
        .map(|p| adj.get(p.index).copied().unwrap_or(0.0))
        .collect()
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tape(&self) -> &'t ParamTape {
        self.tape
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self, rhs, [1.0, 1.0], self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self, rhs, [1.0, -1.0], self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(self, rhs, [rhs.value, self.value], self.value * rhs.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self.value / rhs.value;
        self.tape.binary(self, rhs, [1.0 / rhs.value, -q / rhs.value], q)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self, -1.0, -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, 1.0, self.value + rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, 1.0, self.value - rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, rhs, self.value * rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, 1.0 / rhs, self.value / rhs)
    }
}

impl Scalar for Var<'_> {
    fn value(&self) -> f64 {
        self.value
    }

    fn constant_like(&self, v: f64) -> Self {
        self.tape.var(v)
    }

    fn tanh(self) -> Self {
        let y = self.value.tanh();
        self.tape.unary(self, 1.0 - y * y, y)
    }
}
