//! Reverse-mode differentiation over dynamically built scalar graphs.
//!
//! A [`Graph`] is an append-only tape of nodes. Every builder method computes
//! the node value eagerly and returns an [`Expr`] handle; operands always refer
//! to earlier nodes, so the tape is acyclic by construction and a single
//! reverse sweep yields all partial derivatives.
//!
//! Out-of-domain operations (log of a value below [`LOG_DOMAIN_MIN`], division
//! by zero) do not panic while building: the offending node is recorded and
//! reported by [`Graph::evaluate`] / [`Graph::backward`] when it is reachable
//! from the requested root.
//!
//! ```
//! use rrcal_core::grad::Graph;
//!
//! let mut g = Graph::new();
//! let x = g.param(3.0);
//! let y = g.param(4.0);
//! let z = g.mul(x, y);
//! let grads = g.backward(z).unwrap();
//! assert_eq!(g.evaluate(z).unwrap(), 12.0);
//! assert_eq!(grads.get(x), 4.0);
//! assert_eq!(grads.get(y), 3.0);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Smallest argument accepted by [`Graph::log`].
pub const LOG_DOMAIN_MIN: f64 = 1e-300;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expr(u32);

impl Expr {
    pub fn id(self) -> usize {
        self.0 as usize
    }
}

/// Operation tag of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Constant,
    Parameter,
    Add(Expr, Expr),
    Multiply(Expr, Expr),
    Divide(Expr, Expr),
    Negate(Expr),
    Exp(Expr),
    Log(Expr),
    Logistic(Expr),
    /// `max(operand, c)` for a constant `c`.
    MaxConst(Expr, f64),
}

impl Op {
    pub fn operands(&self) -> [Option<Expr>; 2] {
        match *self {
            Op::Constant | Op::Parameter => [None, None],
            Op::Add(a, b) | Op::Multiply(a, b) | Op::Divide(a, b) => [Some(a), Some(b)],
            Op::Negate(a) | Op::Exp(a) | Op::Log(a) | Op::Logistic(a) | Op::MaxConst(a, _) => {
                [Some(a), None]
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

#[derive(Debug, Clone, Copy)]
struct Fault {
    node: usize,
    what: &'static str,
}

/// Append-only scalar expression tape.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Expr>,
    faults: Vec<Fault>,
}

/// Partial derivatives of a root with respect to every parameter of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    entries: Vec<(Expr, f64)>,
}

impl GradientMap {
    /// Derivative with respect to `param`; zero when `param` is not a
    /// parameter of the differentiated graph.
    pub fn get(&self, param: Expr) -> f64 {
        self.entries
            .binary_search_by_key(&param, |&(e, _)| e)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Expr, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node while keeping the allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.faults.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached value of a node.
    pub fn value(&self, e: Expr) -> f64 {
        self.nodes[e.id()].value
    }

    pub fn op(&self, e: Expr) -> Op {
        self.nodes[e.id()].op
    }

    pub fn params(&self) -> &[Expr] {
        &self.params
    }

    fn push(&mut self, op: Op, value: f64) -> Expr {
        let id = self.nodes.len();
        assert!(id < u32::MAX as usize, "graph exceeds u32 node ids");
        self.nodes.push(Node { op, value });
        Expr(id as u32)
    }

    fn fault(&mut self, e: Expr, what: &'static str) -> Expr {
        self.faults.push(Fault { node: e.id(), what });
        e
    }

    pub fn constant(&mut self, value: f64) -> Expr {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, value: f64) -> Expr {
        let e = self.push(Op::Parameter, value);
        self.params.push(e);
        e
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        let v = self.value(a) * self.value(b);
        self.push(Op::Multiply(a, b), v)
    }

    pub fn div(&mut self, a: Expr, b: Expr) -> Expr {
        let den = self.value(b);
        let v = self.value(a) / den;
        let e = self.push(Op::Divide(a, b), v);
        if den == 0.0 {
            self.fault(e, "division by zero")
        } else {
            e
        }
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        let v = -self.value(a);
        self.push(Op::Negate(a), v)
    }

    pub fn exp(&mut self, a: Expr) -> Expr {
        let v = math::exp(self.value(a));
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Expr) -> Expr {
        let x = self.value(a);
        let e = self.push(Op::Log(a), math::ln(x));
        // NaN fails the comparison as well.
        if !(x >= LOG_DOMAIN_MIN) {
            self.fault(e, "log of a non-positive value")
        } else {
            e
        }
    }

    pub fn logistic(&mut self, a: Expr) -> Expr {
        let v = math::sigmoid(self.value(a));
        self.push(Op::Logistic(a), v)
    }

    pub fn max_const(&mut self, a: Expr, c: f64) -> Expr {
        let v = self.value(a).max(c);
        self.push(Op::MaxConst(a, c), v)
    }

    // Composites built from the primitives above.

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn add_const(&mut self, a: Expr, c: f64) -> Expr {
        let k = self.constant(c);
        self.add(a, k)
    }

    pub fn mul_const(&mut self, a: Expr, c: f64) -> Expr {
        let k = self.constant(c);
        self.mul(a, k)
    }

    /// `min(a, c)` as `-max(-a, -c)`.
    pub fn min_const(&mut self, a: Expr, c: f64) -> Expr {
        let na = self.neg(a);
        let m = self.max_const(na, -c);
        self.neg(m)
    }

    pub fn clamp(&mut self, a: Expr, lo: f64, hi: f64) -> Expr {
        let m = self.max_const(a, lo);
        self.min_const(m, hi)
    }

    /// `tanh(x) = 2 logistic(2x) - 1`.
    pub fn tanh(&mut self, a: Expr) -> Expr {
        let two_a = self.mul_const(a, 2.0);
        let s = self.logistic(two_a);
        let two_s = self.mul_const(s, 2.0);
        self.add_const(two_s, -1.0)
    }

    /// Sum of a slice; the empty sum is a zero constant.
    pub fn sum(&mut self, terms: &[Expr]) -> Expr {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// Softmax with the running maximum subtracted as a constant shift, which
    /// leaves both values and derivatives unchanged.
    pub fn softmax(&mut self, logits: &[Expr]) -> Vec<Expr> {
        let m = logits
            .iter()
            .map(|&e| self.value(e))
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = if m.is_finite() { -m } else { 0.0 };
        let exps: Vec<Expr> = logits
            .iter()
            .map(|&e| {
                let z = self.add_const(e, shift);
                self.exp(z)
            })
            .collect();
        let total = self.sum(&exps);
        exps.iter().map(|&e| self.div(e, total)).collect()
    }

    fn first_reachable_fault(&self, root: Expr) -> Option<Fault> {
        if self.faults.is_empty() {
            return None;
        }
        let mut reach = vec![false; root.id() + 1];
        reach[root.id()] = true;
        for i in (0..=root.id()).rev() {
            if !reach[i] {
                continue;
            }
            for operand in self.nodes[i].op.operands().into_iter().flatten() {
                reach[operand.id()] = true;
            }
        }
        self.faults
            .iter()
            .filter(|f| f.node <= root.id() && reach[f.node])
            .min_by_key(|f| f.node)
            .copied()
    }

    /// Forward value of `root`, or the first domain error reachable from it.
    pub fn evaluate(&self, root: Expr) -> Result<f64> {
        match self.first_reachable_fault(root) {
            Some(f) => Err(Error::Domain {
                node: f.node,
                what: f.what,
            }),
            None => Ok(self.value(root)),
        }
    }

    /// Derivatives of `root` with respect to every parameter in the graph.
    pub fn backward(&self, root: Expr) -> Result<GradientMap> {
        self.evaluate(root)?;
        let mut adj = vec![0.0f64; root.id() + 1];
        adj[root.id()] = 1.0;
        for i in (0..=root.id()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            match node.op {
                Op::Constant | Op::Parameter => {}
                Op::Add(x, y) => {
                    adj[x.id()] += a;
                    adj[y.id()] += a;
                }
                Op::Multiply(x, y) => {
                    adj[x.id()] += a * self.value(y);
                    adj[y.id()] += a * self.value(x);
                }
                Op::Divide(x, y) => {
                    let vy = self.value(y);
                    adj[x.id()] += a / vy;
                    adj[y.id()] -= a * node.value / vy;
                }
                Op::Negate(x) => adj[x.id()] -= a,
                Op::Exp(x) => adj[x.id()] += a * node.value,
                Op::Log(x) => adj[x.id()] += a / self.value(x),
                Op::Logistic(x) => adj[x.id()] += a * node.value * (1.0 - node.value),
                Op::MaxConst(x, c) => {
                    if self.value(x) >= c {
                        adj[x.id()] += a;
                    }
                }
            }
        }
        let entries = self
            .params
            .iter()
            .map(|&p| {
                (
                    p,
                    if p.id() <= root.id() {
                        adj[p.id()]
                    } else {
                        0.0
                    },
                )
            })
            .collect();
        Ok(GradientMap { entries })
    }
}

/// Central finite differences `(f(p + h e_i) - f(p - h e_i)) / 2h`.
pub fn finite_diff<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite difference step must be positive"));
    }
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("finite difference function value"));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}
