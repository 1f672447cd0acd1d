//! Scalar reverse-mode differentiation.
//!
//! Geometry that is evaluated once per splat (deformation, splat set-up, SH
//! colour) is written once against the [`Real`] trait. Running it with `f64`
//! gives the forward value; running it with [`Var`] records every scalar
//! operation on a [`GradTape`] so that a vector-Jacobian product can be pulled
//! back in a single reverse sweep.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type the differentiable geometry is generic over.
pub trait Real:
    Copy
    + fmt::Debug
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
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    /// `max(self, 0)` with a zero derivative on the clamped side.
    fn relu(self) -> Self {
        if self.value() > 0.0 {
            self
        } else {
            Self::zero()
        }
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [(u32, f64); 2],
    arity: u8,
}

/// Record of scalar operations for reverse accumulation.
///
/// A tape is single-writer: variables borrow it immutably and push nodes
/// through interior mutability. Reuse a tape across independent evaluations
/// with [`GradTape::clear`].
#[derive(Default)]
pub struct GradTape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for GradTape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GradTape")
            .field("len", &self.nodes.borrow().len())
            .finish()
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Registers an independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [(0, 0.0); 2],
            arity: 0,
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn vars<const N: usize>(&self, values: [f64; N]) -> [Var<'_>; N] {
        values.map(|v| self.var(v))
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        (nodes.len() - 1) as u32
    }

    /// Reverse sweep seeded with `(output, adjoint)` pairs. The returned
    /// [`Adjoints`] can be queried for any variable recorded on this tape.
    pub fn backward<'t>(&'t self, seeds: &[(Var<'t>, f64)]) -> Adjoints {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        for (v, g) in seeds {
            if let Some(i) = v.index() {
                adj[i] += g;
            }
        }
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for &(p, d) in &node.parents[..node.arity as usize] {
                adj[p as usize] += a * d;
            }
        }
        Adjoints { adj }
    }
}

/// Adjoint values produced by [`GradTape::backward`].
#[derive(Clone, Debug)]
pub struct Adjoints {
    adj: Vec<f64>,
}

impl Adjoints {
    pub fn of(&self, v: Var<'_>) -> f64 {
        v.index().map_or(0.0, |i| self.adj[i])
    }

    pub fn of_all<const N: usize>(&self, vs: &[Var<'_>; N]) -> [f64; N] {
        std::array::from_fn(|i| self.of(vs[i]))
    }
}

/// A scalar that is either a constant or a node on a [`GradTape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t GradTape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}", self.val)?;
        if let Some(i) = self.index() {
            write!(f, " @{i}")?;
        }
        write!(f, ")")
    }
}

impl<'t> Var<'t> {
    fn index(&self) -> Option<usize> {
        self.tape.map(|_| self.idx as usize)
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var {
                tape: None,
                idx: 0,
                val,
            },
            Some(t) => Var {
                tape: Some(t),
                idx: t.push(Node {
                    parents: [(self.idx, d), (0, 0.0)],
                    arity: 1,
                }),
                val,
            },
        }
    }

    fn binary(a: Self, b: Self, val: f64, da: f64, db: f64) -> Self {
        match (a.tape, b.tape) {
            (None, None) => Var {
                tape: None,
                idx: 0,
                val,
            },
            (Some(_), None) => a.unary(val, da),
            (None, Some(_)) => b.unary(val, db),
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push(Node {
                    parents: [(a.idx, da), (b.idx, db)],
                    arity: 2,
                }),
                val,
            },
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        Var::binary(self, rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

impl Real for Var<'_> {
    fn cst(v: f64) -> Self {
        Var {
            tape: None,
            idx: 0,
            val: v,
        }
    }

    fn value(self) -> f64 {
        self.val
    }

    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
}

/// Central finite difference of a scalar function along one coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Relative error used by every gradient check in the crate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}
