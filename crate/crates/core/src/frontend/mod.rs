//! The `.stencil` language: parsing, pretty-printing and lowering to a
//! [`Scop`].
//!
//! ```text
//! stencil heat
//! param N
//! array A float[N][N]
//! array B float[N][N]
//! loop i = 1 .. N-2 {
//!   loop j = 1 .. N-2 step 1 {
//!     let c = A[i, j];
//!     B[i, j] = 0.5 * c + 0.125 * (A[i-1, j] + A[i+1, j] + A[i, j-1] + A[i, j+1]);
//!   }
//! }
//! ```
//!
//! Upper bounds are inclusive. Comments start with `#` or `//`.

mod parser;
mod printer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scop::{
    AccessMode, AccessRelation, AffineExpr, ArrayInfo, BinOp, BodyStmt, LoopDim, Scop, ValueExpr,
};

pub use printer::pretty;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrontendError {
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("non-affine subscript at {line}:{col}: {msg}")]
    NonAffine { line: usize, col: usize, msg: String },
    #[error("not a canonical loop nest: {0}")]
    NonCanonicalNest(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDecl {
    pub name: String,
    pub elem: String,
    pub extents: Vec<AffineExpr>,
}

impl ArrayDecl {
    pub fn rank(&self) -> usize {
        self.extents.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopHeader {
    pub var: String,
    pub lower: AffineExpr,
    /// Inclusive.
    pub upper: AffineExpr,
    pub step: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayRef {
    pub array: String,
    pub indices: Vec<AffineExpr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Ref(ArrayRef),
    Scalar(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    Let { name: String, value: Expr },
    Assign { target: ArrayRef, value: Expr },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilProgram {
    pub source: String,
    pub name: Option<String>,
    pub params: Vec<String>,
    pub arrays: Vec<ArrayDecl>,
    /// Outermost first.
    pub loops: Vec<LoopHeader>,
    pub body: Vec<Statement>,
}

impl StencilProgram {
    pub fn depth(&self) -> usize {
        self.loops.len()
    }

    pub fn count_accesses(&self) -> (usize, usize) {
        let scop = extract_scop(self);
        let w = scop.writes().count();
        (scop.accesses.len() - w, w)
    }
}

/// Parse and validate a `.stencil` source.
pub fn parse(src: &str) -> Result<StencilProgram, FrontendError> {
    parser::parse(src)
}

/// Lower a validated program. Accesses are numbered in evaluation order:
/// the reads of a statement left to right, then its write.
pub fn extract_scop(p: &StencilProgram) -> Scop {
    let mut accesses = Vec::new();
    let mut body = Vec::new();
    for st in &p.body {
        match st {
            Statement::Let { name, value } => body.push(BodyStmt::Let {
                name: name.clone(),
                value: lower(value, &mut accesses),
            }),
            Statement::Assign { target, value } => {
                let value = lower(value, &mut accesses);
                accesses.push(AccessRelation {
                    array: target.array.clone(),
                    indices: target.indices.clone(),
                    mode: AccessMode::Write,
                });
                body.push(BodyStmt::Assign {
                    write: accesses.len() - 1,
                    value,
                });
            }
        }
    }
    Scop {
        name: p.name.clone().unwrap_or_else(|| "stencil".to_string()),
        params: p.params.clone(),
        loops: p
            .loops
            .iter()
            .map(|l| LoopDim {
                var: l.var.clone(),
                lower: l.lower.clone(),
                upper: l.upper.clone(),
                stride: l.step,
            })
            .collect(),
        arrays: p
            .arrays
            .iter()
            .map(|a| ArrayInfo {
                name: a.name.clone(),
                elem: a.elem.clone(),
                extents: a.extents.clone(),
            })
            .collect(),
        accesses,
        body,
    }
}

fn lower(e: &Expr, acc: &mut Vec<AccessRelation>) -> ValueExpr {
    match e {
        Expr::Num(v) => ValueExpr::Lit(*v),
        Expr::Scalar(s) => ValueExpr::Scalar(s.clone()),
        Expr::Ref(r) => {
            acc.push(AccessRelation {
                array: r.array.clone(),
                indices: r.indices.clone(),
                mode: AccessMode::Read,
            });
            ValueExpr::Read(acc.len() - 1)
        }
        Expr::Neg(x) => ValueExpr::Neg(Box::new(lower(x, acc))),
        Expr::Bin(op, a, b) => {
            let a = lower(a, acc);
            let b = lower(b, acc);
            ValueExpr::Bin(*op, Box::new(a), Box::new(b))
        }
    }
}

/// Parse and lower in one step.
pub fn load(src: &str) -> Result<Scop, FrontendError> {
    parse(src).map(|p| extract_scop(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scop::Binding;

    const RUNNING: &str = "\
param N
array A float[N][N][N]
array V float[N][N][N]
loop i = 1 .. N-2 {
  loop j = 1 .. N-2 {
    loop k = 1 .. N-2 {
      V[i, k, j] = V[i, k, j] + A[i, j, k] + A[i+1, j+1, k+1];
    }
  }
}
";

    #[test]
    fn running_example_shape() {
        let p = parse(RUNNING).unwrap();
        assert_eq!(p.depth(), 3);
        assert_eq!(p.count_accesses(), (3, 1));
        let s = extract_scop(&p);
        let b = Binding::new().with("N", 100);
        assert_eq!(s.domain().lexmin(&b).unwrap(), vec![1, 1, 1]);
        assert_eq!(s.domain().lexmax(&b).unwrap(), vec![98, 98, 98]);
        assert_eq!(s.schedule().dims.len(), 3);
        assert_eq!(s.schedule().dims[1], AffineExpr::var("j"));
    }

    #[test]
    fn one_dimensional_loop() {
        let p = parse(
            "param N\narray A float[N+1]\narray B float[N+1]\nloop i = 1 .. N-1 { A[i] = B[i-1] + B[i+1]; }",
        )
        .unwrap();
        assert_eq!(p.depth(), 1);
        assert_eq!(p.count_accesses(), (2, 1));
        assert_eq!(p.loops[0].step, 1);
    }

    #[test]
    fn in_place_update_has_matching_relations() {
        let s = load(
            "param N\narray E float[N][N]\narray H float[N][N]\n\
             loop i = 1 .. N-1 { loop j = 0 .. N-1 { E[i, j] = E[i, j] - 0.5 * (H[i, j] - H[i-1, j]); } }",
        )
        .unwrap();
        let es: Vec<_> = s.accesses.iter().filter(|a| a.array == "E").collect();
        assert_eq!(es.len(), 2);
        assert_eq!(es[0].indices, es[1].indices);
        assert_ne!(es[0].mode, es[1].mode);
    }

    #[test]
    fn product_of_indices_is_non_affine() {
        let e = parse("param N\narray A float[N]\nloop i = 0 .. N-1 { loop j = 0 .. N-1 { A[i*j] = 1.0; } }");
        assert!(matches!(e, Err(FrontendError::NonAffine { .. })), "{e:?}");
        let e = parse("param N\narray A float[N]\nloop i = 0 .. N-1 { A[i/2] = 1.0; }");
        assert!(matches!(e, Err(FrontendError::NonAffine { .. })));
    }

    #[test]
    fn rejects_non_canonical_nests() {
        let tri = "param N\narray A float[N][N]\nloop i = 0 .. N-1 { loop j = 0 .. i { A[i, j] = 1.0; } }";
        assert!(matches!(parse(tri), Err(FrontendError::NonCanonicalNest(m)) if m.contains("rectangular")));
        let imperfect = "param N\narray A float[N][N]\nloop i = 0 .. N-1 { A[i, 0] = 1.0; loop j = 0 .. N-1 { A[i, j] = 2.0; } }";
        assert!(matches!(parse(imperfect), Err(FrontendError::NonCanonicalNest(_))));
        let deep = "param N\narray A float[N][N][N][N]\nloop a = 0 .. 1 { loop b = 0 .. 1 { loop c = 0 .. 1 { loop d = 0 .. 1 { A[a, b, c, d] = 1.0; } } } }";
        assert!(matches!(parse(deep), Err(FrontendError::NonCanonicalNest(_))));
    }

    #[test]
    fn rejects_calls_and_unknown_names() {
        let call = parse("param N\narray A float[N]\nloop i = 0 .. N-1 { A[i] = sqrt(2.0); }");
        assert!(matches!(call, Err(FrontendError::Parse { ref msg, .. }) if msg.contains("side effects")));
        let scalar = parse("param N\narray A float[N]\nloop i = 0 .. N-1 { A[i] = t; let t = 1.0; }");
        assert!(matches!(scalar, Err(FrontendError::Parse { .. })));
    }

    #[test]
    fn error_positions_are_reported() {
        match parse("param N\narray A float[N]\nloop i = 0 .. N-1 {\n  A[i] = 1.0 +;\n}") {
            Err(FrontendError::Parse { line, col, .. }) => assert_eq!((line, col), (4, 15)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn let_scalars_lower_in_order() {
        let s = load("param N\narray A float[N]\narray B float[N]\nloop i = 1 .. N-2 { let t = A[i-1] + A[i+1]; B[i] = t * 0.5; }")
            .unwrap();
        assert_eq!(s.body.len(), 2);
        assert_eq!(s.accesses.len(), 3);
        assert!(s.accesses[2].is_write());
    }
}
