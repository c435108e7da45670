//! Reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends a node holding its parent
//! indices and local partials. Because `Var` implements [`Scalar`], the
//! network forward pass and the loss assembly can run on the tape unchanged;
//! running them on `Jet2<Var>` records the jet arithmetic itself, so the
//! reverse sweep differentiates through input derivatives exactly.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::Error;
use crate::scalar::{Real, Scalar};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    AddConst(T),
    MulConst(T),
    ConstSub(T),
    Gelu,
    GeluSlope,
    GeluCurvature,
}

#[derive(Clone, Copy, Debug)]
struct Node<T> {
    op: Op<T>,
    parents: [u32; 2],
    partials: [T; 2],
    value: T,
}

/// A Wengert list with a registry of parameter slots.
#[derive(Debug)]
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<Vec<u32>>,
    output: Cell<Option<u32>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
            output: Cell::new(None),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
            params: RefCell::new(Vec::new()),
            output: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>, parents: [u32; 2], partials: [T; 2], value: T) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(Node {
            op,
            parents,
            partials,
            value,
        });
        index
    }

    /// An independent input that is not a trainable parameter.
    pub fn input(&self, value: T) -> Var<'_, T> {
        let index = self.push(Op::Leaf, [NONE, NONE], [T::zero(); 2], value);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    /// A trainable parameter; its slot number is its registration order.
    pub fn parameter(&self, value: T) -> Var<'_, T> {
        let var = self.input(value);
        self.params.borrow_mut().push(var.index);
        var
    }

    pub fn parameters(&self, values: &[T]) -> Vec<Var<'_, T>> {
        values.iter().map(|&v| self.parameter(v)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.borrow().len()
    }

    /// Marks `out` as the scalar whose gradient the reverse sweep computes.
    pub fn finalize(&self, out: Var<'_, T>) {
        let index = match out.tape {
            Some(_) => out.index,
            // A constant output: record it so the sweep has a root.
            None => self.push(Op::Leaf, [NONE, NONE], [T::zero(); 2], out.value),
        };
        self.output.set(Some(index));
    }

    pub fn is_finalized(&self) -> bool {
        self.output.get().is_some()
    }

    /// Adjoints of every node for `d(output)/d(output) = seed`.
    ///
    /// Each node is visited exactly once, from the output back to the first
    /// recorded node.
    pub fn adjoints(&self, seed: T) -> Result<Vec<T>, Error> {
        let out = self.output.get().ok_or(Error::TapeNotFinalized)? as usize;
        let nodes = self.nodes.borrow();
        let mut adj = vec![T::zero(); nodes.len()];
        adj[out] = seed;
        for i in (0..=out).rev() {
            let a = adj[i];
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p as usize] += node.partials[k] * a;
                }
            }
        }
        Ok(adj)
    }

    /// Number of nodes a reverse sweep visits.
    pub fn sweep_length(&self) -> Result<usize, Error> {
        self.output
            .get()
            .map(|o| o as usize + 1)
            .ok_or(Error::TapeNotFinalized)
    }

    pub fn adjoint_of(adjoints: &[T], var: Var<'_, T>) -> T {
        match var.tape {
            Some(_) => adjoints[var.index as usize],
            None => T::zero(),
        }
    }

    /// Recorded value of every node.
    pub fn values(&self) -> Vec<T> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }

    /// Recomputes every node forward from the recorded leaf values.
    pub fn replay(&self) -> Vec<T> {
        let nodes = self.nodes.borrow();
        let mut vals: Vec<T> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let a = || vals[node.parents[0] as usize];
            let b = || vals[node.parents[1] as usize];
            let v = match node.op {
                Op::Leaf => node.value,
                Op::Add => a() + b(),
                Op::Sub => a() - b(),
                Op::Mul => a() * b(),
                Op::Neg => -a(),
                Op::AddConst(c) => a() + c,
                Op::MulConst(c) => a() * c,
                Op::ConstSub(c) => c - a(),
                Op::Gelu => a().gelu_derivatives()[0],
                Op::GeluSlope => a().gelu_derivatives()[1],
                Op::GeluCurvature => a().gelu_derivatives()[2],
            };
            vals.push(v);
        }
        vals
    }
}

/// Gradient of the finalized output with respect to every registered
/// parameter, in slot order.
pub fn grad_params<T: Real>(tape: &Tape<T>, seed: T) -> Result<Vec<T>, Error> {
    let adj = tape.adjoints(seed)?;
    Ok(tape
        .params
        .borrow()
        .iter()
        .map(|&i| adj[i as usize])
        .collect())
}

/// A scalar recorded on a [`Tape`], or a constant that is not.
#[derive(Clone, Copy, Debug)]
pub struct Var<'t, T: Real> {
    tape: Option<&'t Tape<T>>,
    index: u32,
    value: T,
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> T {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn lift(value: T) -> Self {
        Self {
            tape: None,
            index: NONE,
            value,
        }
    }

    fn unary(self, op: Op<T>, partial: T, value: T) -> Self {
        match self.tape {
            None => Self::lift(value),
            Some(t) => Self {
                tape: Some(t),
                index: t.push(op, [self.index, NONE], [partial, T::zero()], value),
                value,
            },
        }
    }

    fn binary(self, rhs: Self, op: Op<T>, partials: [T; 2], value: T) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Self::lift(value),
            (Some(t), Some(_)) => Self {
                tape: Some(t),
                index: t.push(op, [self.index, rhs.index], partials, value),
                value,
            },
            (Some(_), None) => match op {
                Op::Add => self.unary(Op::AddConst(rhs.value), T::one(), value),
                Op::Sub => self.unary(Op::AddConst(-rhs.value), T::one(), value),
                Op::Mul => self.unary(Op::MulConst(rhs.value), partials[0], value),
                _ => unreachable!("binary op"),
            },
            (None, Some(_)) => match op {
                Op::Add => rhs.unary(Op::AddConst(self.value), T::one(), value),
                Op::Sub => rhs.unary(Op::ConstSub(self.value), -T::one(), value),
                Op::Mul => rhs.unary(Op::MulConst(self.value), partials[1], value),
                _ => unreachable!("binary op"),
            },
        }
    }
}

impl<'t, T: Real> Add for Var<'t, T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        let v = self.value + rhs.value;
        self.binary(rhs, Op::Add, [T::one(), T::one()], v)
    }
}

impl<'t, T: Real> Sub for Var<'t, T> {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        let v = self.value - rhs.value;
        self.binary(rhs, Op::Sub, [T::one(), -T::one()], v)
    }
}

impl<'t, T: Real> Mul for Var<'t, T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let v = self.value * rhs.value;
        self.binary(rhs, Op::Mul, [rhs.value, self.value], v)
    }
}

impl<'t, T: Real> Neg for Var<'t, T> {
    type Output = Self;

    fn neg(self) -> Self {
        self.unary(Op::Neg, -T::one(), -self.value)
    }
}

impl<'t, T: Real> Scalar for Var<'t, T> {
    fn constant(c: f64) -> Self {
        Self::lift(T::of(c))
    }

    fn gelu_parts(self) -> [Self; 3] {
        let [g, g1, g2, g3] = self.value.gelu_derivatives();
        [
            self.unary(Op::Gelu, g1, g),
            self.unary(Op::GeluSlope, g2, g1),
            self.unary(Op::GeluCurvature, g3, g2),
        ]
    }

    fn primal(&self) -> f64 {
        self.value.to_f64_lossy()
    }
}
