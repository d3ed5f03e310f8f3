//! Tile-program IR shared by code emission, the cost model and the
//! interpreter. Serializes to JSON.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::planner::BufferKind;
use crate::scop::{AffineExpr, ArrayInfo, Binding, BinOp, ScopError};

/// Index expression: affine, or a min/max of index expressions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IExpr {
    Aff(AffineExpr),
    Min(Vec<IExpr>),
    Max(Vec<IExpr>),
}

impl IExpr {
    pub fn constant(c: i64) -> IExpr {
        IExpr::Aff(AffineExpr::constant(c))
    }

    pub fn eval(&self, env: &Env) -> Result<i64, ScopError> {
        match self {
            IExpr::Aff(a) => env.eval(a),
            IExpr::Min(xs) => xs.iter().map(|x| x.eval(env)).try_fold(i64::MAX, |m, v| Ok(m.min(v?))),
            IExpr::Max(xs) => xs.iter().map(|x| x.eval(env)).try_fold(i64::MIN, |m, v| Ok(m.max(v?))),
        }
    }

    pub fn as_affine(&self) -> Option<&AffineExpr> {
        match self {
            IExpr::Aff(a) => Some(a),
            _ => None,
        }
    }
}

impl From<AffineExpr> for IExpr {
    fn from(a: AffineExpr) -> IExpr {
        IExpr::Aff(a)
    }
}

impl fmt::Display for IExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nest = |f: &mut fmt::Formatter<'_>, name: &str, xs: &[IExpr]| -> fmt::Result {
            // Binary helpers nest to the right: min(a, min(b, c)).
            match xs {
                [] => write!(f, "0"),
                [x] => write!(f, "{x}"),
                [x, rest @ ..] => {
                    write!(f, "{name}({x}, ")?;
                    match rest.len() {
                        1 => write!(f, "{}", rest[0])?,
                        _ => write!(
                            f,
                            "{}",
                            if name == "min" { IExpr::Min(rest.to_vec()) } else { IExpr::Max(rest.to_vec()) }
                        )?,
                    }
                    write!(f, ")")
                }
            }
        };
        match self {
            IExpr::Aff(a) => write!(f, "{a}"),
            IExpr::Min(xs) => nest(f, "min", xs),
            IExpr::Max(xs) => nest(f, "max", xs),
        }
    }
}

/// `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cond {
    pub lhs: AffineExpr,
    pub rhs: AffineExpr,
}

impl Cond {
    pub fn holds(&self, env: &Env) -> Result<bool, ScopError> {
        Ok(env.eval(&self.lhs)? <= env.eval(&self.rhs)?)
    }
}

/// Variable values during interpretation plus the parameter binding.
#[derive(Clone, Debug)]
pub struct Env<'a> {
    vars: Vec<(String, i64)>,
    pub params: &'a Binding,
}

impl<'a> Env<'a> {
    pub fn new(params: &'a Binding) -> Self {
        Env { vars: Vec::new(), params }
    }

    pub fn push(&mut self, name: &str, v: i64) {
        self.vars.push((name.to_string(), v));
    }

    pub fn set_last(&mut self, v: i64) {
        self.vars.last_mut().expect("no variable to set").1 = v;
    }

    pub fn pop(&mut self) {
        self.vars.pop();
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.vars.iter().rev().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn eval(&self, a: &AffineExpr) -> Result<i64, ScopError> {
        a.eval_with(|v| self.get(v), self.params)
    }
}

/// Storage touched by a ship or an access.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Ddr(String),
    Buf(String),
}

impl Endpoint {
    pub fn name(&self) -> &str {
        match self {
            Endpoint::Ddr(n) | Endpoint::Buf(n) => n,
        }
    }

    pub fn is_ddr(&self) -> bool {
        matches!(self, Endpoint::Ddr(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ShipRole {
    Fill,
    Shift,
    Flush,
}

impl ShipRole {
    pub fn name(self) -> &'static str {
        match self {
            ShipRole::Fill => "FILL",
            ShipRole::Shift => "SHIFT",
            ShipRole::Flush => "FLUSH",
        }
    }
}

/// Write-enable window of one DDR dimension: coordinates `y` with
/// `lo ≤ y ≤ hi` and `y ≡ at (mod step)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskDim {
    pub lo: IExpr,
    pub hi: IExpr,
    pub at: AffineExpr,
    pub step: i64,
}

/// One structured copy. The copied region is `reps` repetitions of a
/// `di`-dimensional segment with extents `extents` (outermost first);
/// repetition `r` advances the dimension just above the segment on both
/// sides by `r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShipOp {
    pub role: ShipRole,
    pub src: Endpoint,
    pub src_offset: Vec<AffineExpr>,
    pub dst: Endpoint,
    pub dst_offset: Vec<AffineExpr>,
    pub di: usize,
    pub reps: i64,
    pub extents: Vec<i64>,
    /// Flushes only: DDR elements outside the window keep their value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<MaskDim>>,
    pub comment: String,
}

impl ShipOp {
    /// Elements of the region before any clipping.
    pub fn volume(&self) -> i64 {
        self.reps * self.extents.iter().product::<i64>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferDecl {
    pub name: String,
    pub array: String,
    pub kind: BufferKind,
    pub elem: String,
    pub extents: Vec<i64>,
    pub halo_left: i64,
    pub port_width: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Tile,
    Intra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopNode {
    pub var: String,
    pub kind: LoopKind,
    pub lower: IExpr,
    /// Inclusive.
    pub upper: IExpr,
    pub step: i64,
    pub pipeline: bool,
    /// Padded loops run past the domain; `real_upper` is the last index of
    /// the original domain.
    pub padded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_upper: Option<AffineExpr>,
    pub body: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VExpr {
    Lit(f64),
    Load {
        src: Endpoint,
        indices: Vec<AffineExpr>,
        /// When the guard fails the load yields NaN without touching memory.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        guard: Option<Cond>,
    },
    Scalar(String),
    Neg(Box<VExpr>),
    Bin(BinOp, Box<VExpr>, Box<VExpr>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stmt {
    Let {
        name: String,
        value: VExpr,
    },
    Store {
        dst: Endpoint,
        indices: Vec<AffineExpr>,
        value: VExpr,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        guard: Option<Cond>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Loop(LoopNode),
    Declare(Vec<BufferDecl>),
    Ship(ShipOp),
    Stmt(Stmt),
}

/// The transformed program: inter-tile loops, buffer declarations, ships,
/// intra-tile loops and the redirected body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileProgram {
    pub name: String,
    pub params: Vec<String>,
    pub arrays: Vec<ArrayInfo>,
    pub tile_sizes: Vec<i64>,
    /// Intra-tile loop order, outermost first.
    pub permutation: Vec<String>,
    pub port_width: i64,
    pub padded: bool,
    pub buffers: Vec<BufferDecl>,
    pub body: Vec<Node>,
}

impl TileProgram {
    pub fn buffer(&self, name: &str) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.name == name)
    }

    pub fn array(&self, name: &str) -> Option<&ArrayInfo> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Every node in pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node, usize)) {
        fn go<'a>(nodes: &'a [Node], depth: usize, f: &mut impl FnMut(&'a Node, usize)) {
            for n in nodes {
                f(n, depth);
                if let Node::Loop(l) = n {
                    go(&l.body, depth + 1, f);
                }
            }
        }
        go(&self.body, 0, f);
    }

    pub fn ships(&self) -> Vec<&ShipOp> {
        let mut out = Vec::new();
        self.walk(&mut |n, _| {
            if let Node::Ship(s) = n {
                out.push(s);
            }
        });
        out
    }
}

/// Row pitch of an array in DDR: the innermost extent rounded up to the
/// port width, so every row starts on a burst boundary.
pub fn ddr_pitch(innermost_extent: i64, w: i64) -> i64 {
    (innermost_extent + w - 1) / w * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_render_as_nested_calls() {
        let e = IExpr::Min(vec![
            IExpr::constant(31),
            IExpr::Aff(AffineExpr::param("N") - 2 - AffineExpr::var("ti")),
            IExpr::constant(7),
        ]);
        assert_eq!(e.to_string(), "min(31, min(-ti + N - 2, 7))");
        let b = Binding::new().with("N", 40);
        let mut env = Env::new(&b);
        env.push("ti", 33);
        assert_eq!(e.eval(&env).unwrap(), 5);
    }

    #[test]
    fn env_shadows_inner_bindings() {
        let b = Binding::new();
        let mut env = Env::new(&b);
        env.push("i", 1);
        env.push("i", 2);
        assert_eq!(env.get("i"), Some(2));
        env.pop();
        assert_eq!(env.get("i"), Some(1));
    }
}
