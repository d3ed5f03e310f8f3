//! Polyhedral substrate restricted to rectangular domains: affine
//! expressions, strided boxes, access relations, schedules and the static
//! control part (SCoP) that ties them together.

mod affine;
mod boxes;

pub use affine::{AffineExpr, Binding};
pub use boxes::{IntBox, Interval};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScopError {
    #[error("box is empty")]
    EmptyBox,
    #[error("rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("image is unbounded: variable `{0}` is not bound by the iteration set")]
    UnboundedImage(String),
    #[error("parameter `{0}` has no value")]
    UnboundParameter(String),
    #[error("variable `{0}` has no value")]
    UnboundVariable(String),
}

/// One loop of a canonical nest: `for var = lower .. upper step stride`
/// with an inclusive upper bound.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopDim {
    pub var: String,
    pub lower: AffineExpr,
    pub upper: AffineExpr,
    pub stride: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    /// Element type as written in the source (`float`, `double`).
    pub elem: String,
    pub extents: Vec<AffineExpr>,
}

impl ArrayInfo {
    pub fn rank(&self) -> usize {
        self.extents.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRelation {
    pub array: String,
    pub indices: Vec<AffineExpr>,
    pub mode: AccessMode,
}

impl AccessRelation {
    pub fn is_write(&self) -> bool {
        self.mode == AccessMode::Write
    }

    /// Both relations differ only in their constant offsets.
    pub fn same_shape(&self, other: &AccessRelation) -> bool {
        self.array == other.array
            && self.indices.len() == other.indices.len()
            && self
                .indices
                .iter()
                .zip(&other.indices)
                .all(|(a, b)| a.same_linear_part(b))
    }

    pub fn offsets(&self) -> Vec<i64> {
        self.indices.iter().map(|e| e.constant).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

/// Floating-point expression tree of a statement body. `Read` refers to an
/// access relation by its index in [`Scop::accesses`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValueExpr {
    Lit(f64),
    Read(usize),
    Scalar(String),
    Neg(Box<ValueExpr>),
    Bin(BinOp, Box<ValueExpr>, Box<ValueExpr>),
}

impl ValueExpr {
    pub fn reads(&self, out: &mut Vec<usize>) {
        match self {
            ValueExpr::Read(a) => out.push(*a),
            ValueExpr::Neg(x) => x.reads(out),
            ValueExpr::Bin(_, a, b) => {
                a.reads(out);
                b.reads(out);
            }
            ValueExpr::Lit(_) | ValueExpr::Scalar(_) => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BodyStmt {
    Assign { write: usize, value: ValueExpr },
    Let { name: String, value: ValueExpr },
}

/// Ordering constraint attached to a schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleConstraint {
    /// `expr mod modulus = 0`
    Mod { expr: AffineExpr, modulus: i64 },
    /// `expr ≥ 0`
    NonNeg(AffineExpr),
}

/// Map from iteration variables to a lexicographic time stamp, plus the
/// constraints that tie auxiliary variables (tile origins) to the iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub dims: Vec<AffineExpr>,
    pub constraints: Vec<ScheduleConstraint>,
}

impl Schedule {
    pub fn identity(vars: &[String]) -> Self {
        Schedule {
            dims: vars.iter().map(|v| AffineExpr::var(v)).collect(),
            constraints: Vec::new(),
        }
    }

    pub fn holds(&self, env: impl Fn(&str) -> Option<i64> + Copy, params: &Binding) -> Result<bool, ScopError> {
        for c in &self.constraints {
            let ok = match c {
                ScheduleConstraint::Mod { expr, modulus } => {
                    expr.eval_with(env, params)?.rem_euclid(*modulus) == 0
                }
                ScheduleConstraint::NonNeg(e) => e.eval_with(env, params)? >= 0,
            };
            if !ok {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn stamp(&self, env: impl Fn(&str) -> Option<i64> + Copy, params: &Binding) -> Result<Vec<i64>, ScopError> {
        self.dims.iter().map(|d| d.eval_with(env, params)).collect()
    }
}

/// Static control part: one canonical rectangular nest and its body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scop {
    pub name: String,
    pub params: Vec<String>,
    pub loops: Vec<LoopDim>,
    pub arrays: Vec<ArrayInfo>,
    pub accesses: Vec<AccessRelation>,
    pub body: Vec<BodyStmt>,
}

impl Scop {
    pub fn depth(&self) -> usize {
        self.loops.len()
    }

    pub fn loop_vars(&self) -> Vec<String> {
        self.loops.iter().map(|l| l.var.clone()).collect()
    }

    pub fn array(&self, name: &str) -> Option<&ArrayInfo> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn domain(&self) -> IntBox {
        IntBox::new(
            self.loops
                .iter()
                .map(|l| Interval::new(l.lower.clone(), l.upper.clone(), l.stride))
                .collect(),
        )
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::identity(&self.loop_vars())
    }

    pub fn reads(&self) -> impl Iterator<Item = (usize, &AccessRelation)> {
        self.accesses.iter().enumerate().filter(|(_, a)| !a.is_write())
    }

    pub fn writes(&self) -> impl Iterator<Item = (usize, &AccessRelation)> {
        self.accesses.iter().enumerate().filter(|(_, a)| a.is_write())
    }

    /// Concrete `(lower, upper)` of every loop under `b`.
    pub fn loop_bounds(&self, b: &Binding) -> Result<Vec<(i64, i64)>, ScopError> {
        self.loops
            .iter()
            .map(|l| Ok((l.lower.eval_params(b)?, l.upper.eval_params(b)?)))
            .collect()
    }

    pub fn array_extents(&self, name: &str, b: &Binding) -> Result<Vec<i64>, ScopError> {
        let a = self
            .array(name)
            .unwrap_or_else(|| panic!("unknown array {name}"));
        a.extents.iter().map(|e| e.eval_params(b)).collect()
    }
}
