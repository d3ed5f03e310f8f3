use std::fmt::Write;

use crate::scop::BinOp;

use super::{ArrayRef, Expr, Statement, StencilProgram};

/// Canonical source text; `parse(pretty(p))` reproduces `p` up to `source`.
pub fn pretty(p: &StencilProgram) -> String {
    let mut out = String::new();
    if let Some(n) = &p.name {
        writeln!(out, "stencil {n}").unwrap();
    }
    if !p.params.is_empty() {
        writeln!(out, "param {}", p.params.join(", ")).unwrap();
    }
    for a in &p.arrays {
        write!(out, "array {} {}", a.name, a.elem).unwrap();
        for e in &a.extents {
            write!(out, "[{e}]").unwrap();
        }
        out.push('\n');
    }
    for (depth, l) in p.loops.iter().enumerate() {
        let pad = "  ".repeat(depth);
        write!(out, "{pad}loop {} = {} .. {}", l.var, l.lower, l.upper).unwrap();
        if l.step != 1 {
            write!(out, " step {}", l.step).unwrap();
        }
        out.push_str(" {\n");
    }
    let pad = "  ".repeat(p.loops.len());
    for st in &p.body {
        match st {
            Statement::Let { name, value } => writeln!(out, "{pad}let {name} = {};", expr(value)).unwrap(),
            Statement::Assign { target, value } => {
                writeln!(out, "{pad}{} = {};", aref(target), expr(value)).unwrap()
            }
        }
    }
    for depth in (0..p.loops.len()).rev() {
        writeln!(out, "{}}}", "  ".repeat(depth)).unwrap();
    }
    out
}

fn aref(r: &ArrayRef) -> String {
    let idx: Vec<String> = r.indices.iter().map(|e| e.to_string()).collect();
    format!("{}[{}]", r.array, idx.join(", "))
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
        _ => 4,
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        let s = format!("{v:?}");
        if v < 0.0 || s.starts_with('-') {
            format!("-{}", &s[1..])
        } else {
            s
        }
    } else {
        // Not expressible as a literal; render as a quotient.
        match (v.is_nan(), v > 0.0) {
            (true, _) => "(0.0 / 0.0)".into(),
            (false, true) => "(1.0 / 0.0)".into(),
            (false, false) => "(-1.0 / 0.0)".into(),
        }
    }
}

fn expr(e: &Expr) -> String {
    match e {
        Expr::Num(v) => num(*v),
        Expr::Ref(r) => aref(r),
        Expr::Scalar(s) => s.clone(),
        Expr::Neg(x) => {
            if prec(x) >= 3 {
                format!("-{}", expr(x))
            } else {
                format!("-({})", expr(x))
            }
        }
        Expr::Bin(op, a, b) => {
            let p = prec(e);
            let l = if prec(a) < p { format!("({})", expr(a)) } else { expr(a) };
            let r = if prec(b) <= p { format!("({})", expr(b)) } else { expr(b) };
            format!("{l} {} {r}", op.symbol())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse, ArrayDecl, LoopHeader, StencilProgram};
    use super::*;
    use crate::scop::AffineExpr;
    use proptest::prelude::*;

    fn strip(mut p: StencilProgram) -> StencilProgram {
        p.source.clear();
        p
    }

    #[test]
    fn fixpoint_on_handwritten_source() {
        let src = "param N, M\narray A float[N][M]\narray B float[N][M]\n\
                   loop i = 1 .. N-2 { loop j = 0 .. M - 1 step 2 {\n\
                   let t = -A[i-1, j] * (0.5 - A[i+1, j]);\n B[i, j] = t / (2.0 * -t) - (1.5e-3 - t); } }";
        let p = parse(src).unwrap();
        let text = pretty(&p);
        let q = parse(&text).unwrap();
        assert_eq!(strip(p), strip(q.clone()));
        assert_eq!(pretty(&q), text);
    }

    fn leaf() -> impl Strategy<Value = Expr> {
        prop_oneof![
            (0u32..1000).prop_map(|v| Expr::Num(v as f64 / 8.0)),
            (-2i64..=2, -2i64..=2, 0usize..2).prop_map(|(a, c, arr)| {
                let idx = AffineExpr::term("i", 1) + AffineExpr::term("j", a) + c;
                Expr::Ref(ArrayRef {
                    array: ["A", "B"][arr].to_string(),
                    indices: vec![AffineExpr::var("i") + c, idx],
                })
            }),
        ]
    }

    fn tree() -> impl Strategy<Value = Expr> {
        leaf().prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|x| Expr::Neg(Box::new(x))),
                (inner.clone(), inner, 0usize..4).prop_map(|(a, b, o)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div][o];
                    Expr::Bin(op, Box::new(a), Box::new(b))
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip(value in tree(), lo in 0i64..3, step in 1i64..3) {
            let n = AffineExpr::param("N");
            let p = StencilProgram {
                source: String::new(),
                name: Some("t".into()),
                params: vec!["N".into()],
                arrays: ["A", "B"].iter().map(|a| ArrayDecl {
                    name: a.to_string(),
                    elem: "float".into(),
                    extents: vec![n.clone(), n.clone() * 3],
                }).collect(),
                loops: vec![
                    LoopHeader { var: "i".into(), lower: AffineExpr::constant(lo), upper: n.clone() - 2, step: 1 },
                    LoopHeader { var: "j".into(), lower: AffineExpr::constant(2), upper: n.clone() - 2, step },
                ],
                body: vec![Statement::Assign {
                    target: ArrayRef { array: "B".into(), indices: vec![AffineExpr::var("i"), AffineExpr::var("j")] },
                    value,
                }],
            };
            let q = strip(parse(&pretty(&p)).unwrap());
            prop_assert_eq!(q, p);
        }
    }
}
