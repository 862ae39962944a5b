use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Smoothing width of [`Op::AbsSmooth`]; intensities live in [0, 1].
pub const ABS_SMOOTHING: f64 = 1e-3;

const NO_PARENT: u32 = u32::MAX;

/// Primitive operations the tape knows how to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Tanh,
    Exp,
    Log,
    Sqrt,
    /// `sqrt(x^2 + eps^2) - eps`, zero at the origin.
    AbsSmooth,
    /// `atan2(y, x)` with operands ordered `(y, x)`.
    Atan2,
    /// Ties resolve to the first operand.
    Min,
    /// Ties resolve to the first operand.
    Max,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Atan2 | Op::Min | Op::Max => 2,
            _ => 1,
        }
    }

    /// Value and local partials of the operation.
    fn eval(self, a: f64, b: f64) -> Result<(f64, [f64; 2])> {
        Ok(match self {
            Op::Add => (a + b, [1.0, 1.0]),
            Op::Sub => (a - b, [1.0, -1.0]),
            Op::Mul => (a * b, [b, a]),
            Op::Div => (a / b, [1.0 / b, -a / (b * b)]),
            Op::Neg => (-a, [-1.0, 0.0]),
            Op::Sin => (a.sin(), [a.cos(), 0.0]),
            Op::Cos => (a.cos(), [-a.sin(), 0.0]),
            Op::Tanh => {
                let t = a.tanh();
                (t, [1.0 - t * t, 0.0])
            }
            Op::Exp => {
                let e = a.exp();
                (e, [e, 0.0])
            }
            Op::Log => {
                if !(a > 0.0) {
                    return Err(Error::Domain { op: "log", value: a });
                }
                (a.ln(), [1.0 / a, 0.0])
            }
            Op::Sqrt => {
                if !(a > 0.0) {
                    return Err(Error::Domain { op: "sqrt", value: a });
                }
                let s = a.sqrt();
                (s, [0.5 / s, 0.0])
            }
            Op::AbsSmooth => {
                let s = (a * a + ABS_SMOOTHING * ABS_SMOOTHING).sqrt();
                (s - ABS_SMOOTHING, [a / s, 0.0])
            }
            Op::Atan2 => {
                let r2 = a * a + b * b;
                if r2 == 0.0 {
                    (0.0, [0.0, 0.0])
                } else {
                    (a.atan2(b), [b / r2, -a / r2])
                }
            }
            Op::Min => {
                if a <= b {
                    (a, [1.0, 0.0])
                } else {
                    (b, [0.0, 1.0])
                }
            }
            Op::Max => {
                if a >= b {
                    (a, [1.0, 0.0])
                } else {
                    (b, [0.0, 1.0])
                }
            }
        })
    }
}

/// One recorded value with up to two parents and the local partials
/// towards them.
#[derive(Clone, Copy, Debug)]
pub struct TapeNode {
    pub value: f64,
    parents: [u32; 2],
    partials: [f64; 2],
}

impl TapeNode {
    /// Parent indices paired with local partial derivatives.
    pub fn parents(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.parents
            .iter()
            .zip(self.partials.iter())
            .filter(|(p, _)| **p != NO_PARENT)
            .map(|(p, d)| (*p as usize, *d))
    }
}

/// Append-only Wengert list. Nodes only ever reference earlier nodes, so the
/// tape is always in topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<TapeNode>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.nodes.borrow().capacity()
    }

    /// Drops every node but keeps the allocation, so the next evaluation of a
    /// loss of the same shape does not reallocate. Returns the old length.
    pub fn reset(&mut self) -> usize {
        let nodes = self.nodes.get_mut();
        let len = nodes.len();
        nodes.clear();
        len
    }

    pub fn node(&self, index: usize) -> Option<TapeNode> {
        self.nodes.borrow().get(index).copied()
    }

    /// A leaf (input or constant).
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [NO_PARENT; 2], [0.0; 2])
    }

    /// Records `op` applied to `operands`.
    pub fn record<'t>(&'t self, op: Op, operands: &[Var<'t>]) -> Result<Var<'t>> {
        if operands.len() != op.arity() {
            return Err(Error::usage(format!(
                "{op:?} takes {} operands, got {}",
                op.arity(),
                operands.len()
            )));
        }
        for v in operands {
            if !std::ptr::eq(v.tape, self) {
                return Err(Error::usage("operand belongs to a different tape"));
            }
        }
        let a = operands[0];
        let b = operands.get(1).copied();
        let (value, partials) = op.eval(a.value, b.map_or(0.0, |b| b.value))?;
        let parents = [a.index, b.map_or(NO_PARENT, |b| b.index)];
        Ok(self.push(value, parents, partials))
    }

    fn push(&self, value: f64, parents: [u32; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len()).expect("tape exceeds u32::MAX nodes");
        nodes.push(TapeNode {
            value,
            parents,
            partials,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    fn unary(&self, a: Var<'_>, value: f64, partial: f64) -> Var<'_> {
        self.push(value, [a.index, NO_PARENT], [partial, 0.0])
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, value: f64, partials: [f64; 2]) -> Var<'_> {
        self.push(value, [a.index, b.index], partials)
    }

    /// Reverse accumulation from `output`. Every node at or before `output`
    /// is visited once, in reverse order.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(output.tape, self) {
            return Err(Error::usage("backward output is not on this tape"));
        }
        let nodes = self.nodes.borrow();
        let out = output.index as usize;
        if out >= nodes.len() {
            return Err(Error::usage("backward output is not on this tape"));
        }
        let mut adjoints = vec![0.0; out + 1];
        adjoints[out] = 1.0;
        for i in (0..=out).rev() {
            let g = adjoints[i];
            if g == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adjoints[p as usize] += g * node.partials[k];
                }
            }
        }
        Ok(Gradients { adjoints })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// d(output)/d(v); zero for nodes that do not influence the output.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoints.get(v.index as usize).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adjoints
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn constant(&self, value: f64) -> Var<'t> {
        self.tape.var(value)
    }

    fn apply(self, op: Op) -> Var<'t> {
        let (value, p) = op.eval(self.value, 0.0).expect("total unary op");
        self.tape.unary(self, value, p[0])
    }

    fn apply2(self, op: Op, other: Var<'t>) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "mixing tapes");
        let (value, p) = op.eval(self.value, other.value).expect("total binary op");
        self.tape.binary(self, other, value, p)
    }

    pub fn sin(self) -> Var<'t> {
        self.apply(Op::Sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.apply(Op::Cos)
    }

    pub fn tanh(self) -> Var<'t> {
        self.apply(Op::Tanh)
    }

    pub fn exp(self) -> Var<'t> {
        self.apply(Op::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        let (value, p) = Op::Log.eval(self.value, 0.0)?;
        Ok(self.tape.unary(self, value, p[0]))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let (value, p) = Op::Sqrt.eval(self.value, 0.0)?;
        Ok(self.tape.unary(self, value, p[0]))
    }

    pub fn abs_smooth(self) -> Var<'t> {
        self.apply(Op::AbsSmooth)
    }

    /// `atan2(self, x)`.
    pub fn atan2(self, x: Var<'t>) -> Var<'t> {
        self.apply2(Op::Atan2, x)
    }

    pub fn min(self, other: Var<'t>) -> Var<'t> {
        self.apply2(Op::Min, other)
    }

    pub fn max(self, other: Var<'t>) -> Var<'t> {
        self.apply2(Op::Max, other)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.apply2(Op::Add, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.apply2(Op::Sub, rhs)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.apply2(Op::Mul, rhs)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.apply2(Op::Div, rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.apply(Op::Neg)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value / rhs, 1.0 / rhs)
    }
}
