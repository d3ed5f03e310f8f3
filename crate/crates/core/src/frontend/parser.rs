use std::collections::HashSet;

use crate::scop::{AffineExpr, BinOp};

use super::{ArrayDecl, ArrayRef, Expr, FrontendError, LoopHeader, Statement, StencilProgram};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Sym(char),
    DotDot,
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, FrontendError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| FrontendError::Parse { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let adv = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            adv(1, &mut i, &mut col);
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| err(tl, tc, format!("bad number `{text}`")))?)
            } else {
                Tok::Int(text.parse().map_err(|_| err(tl, tc, format!("bad integer `{text}`")))?)
            };
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        if c == '.' && chars.get(i + 1) == Some(&'.') {
            adv(2, &mut i, &mut col);
            out.push(Token {
                tok: Tok::DotDot,
                line: tl,
                col: tc,
            });
            continue;
        }
        if "[](){},;=+-*/".contains(c) {
            adv(1, &mut i, &mut col);
            out.push(Token {
                tok: Tok::Sym(c),
                line: tl,
                col: tc,
            });
            continue;
        }
        return Err(err(tl, tc, format!("unexpected character `{c}`")));
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// Integer subscript tree before it is checked for affinity.
enum IntExpr {
    Num(i64),
    Name(String, usize, usize),
    Neg(Box<IntExpr>),
    Bin(char, Box<IntExpr>, Box<IntExpr>, usize, usize),
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    params: Vec<String>,
    arrays: Vec<ArrayDecl>,
    loop_vars: Vec<String>,
    scalars: HashSet<String>,
    src: &'a str,
}

pub(super) fn parse(src: &str) -> Result<StencilProgram, FrontendError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        params: Vec::new(),
        arrays: Vec::new(),
        loop_vars: Vec::new(),
        scalars: HashSet::new(),
        src,
    };
    p.program()
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn error(&self, msg: impl Into<String>) -> FrontendError {
        let (line, col) = self.here();
        FrontendError::Parse {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), FrontendError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        match self.next() {
            Tok::Ident(s) => Ok(s),
            _ => {
                self.pos -= 1;
                Err(self.error("expected identifier"))
            }
        }
    }

    fn declared(&self, name: &str) -> bool {
        self.params.iter().any(|p| p == name)
            || self.arrays.iter().any(|a| a.name == name)
            || self.loop_vars.iter().any(|v| v == name)
            || self.scalars.contains(name)
    }

    fn fresh(&self, name: &str) -> Result<(), FrontendError> {
        if self.declared(name) {
            Err(self.error(format!("`{name}` is already declared")))
        } else {
            Ok(())
        }
    }

    fn program(&mut self) -> Result<StencilProgram, FrontendError> {
        let mut name = None;
        let mut nest = None;
        loop {
            if *self.peek() == Tok::Eof {
                break;
            }
            if self.is_kw("stencil") {
                self.next();
                name = Some(self.ident()?);
            } else if self.is_kw("param") {
                self.next();
                loop {
                    let (l, c) = self.here();
                    let n = self.ident()?;
                    self.fresh(&n).map_err(|_| FrontendError::Parse {
                        line: l,
                        col: c,
                        msg: format!("`{n}` is already declared"),
                    })?;
                    self.params.push(n);
                    if !self.eat_sym(',') {
                        break;
                    }
                }
            } else if self.is_kw("array") {
                self.next();
                let n = self.ident()?;
                self.fresh(&n)?;
                let elem = self.ident()?;
                if elem != "float" && elem != "double" {
                    return Err(self.error(format!("unsupported element type `{elem}`")));
                }
                let mut extents = Vec::new();
                while self.eat_sym('[') {
                    extents.push(self.affine(true)?);
                    self.expect_sym(']')?;
                }
                if extents.is_empty() {
                    return Err(self.error("array needs at least one dimension"));
                }
                self.arrays.push(ArrayDecl {
                    name: n,
                    elem,
                    extents,
                });
            } else if self.is_kw("loop") {
                if nest.is_some() {
                    return Err(FrontendError::NonCanonicalNest(
                        "more than one loop nest; exactly one perfectly nested loop nest is required".into(),
                    ));
                }
                let mut headers = Vec::new();
                let body = self.loop_nest(&mut headers)?;
                nest = Some((headers, body));
            } else {
                let what = match self.peek() {
                    Tok::Ident(s) if self.peek_is_call() => format!("call to `{s}` is not allowed (side effects)"),
                    _ => "expected `stencil`, `param`, `array` or `loop`".to_string(),
                };
                return Err(self.error(what));
            }
        }
        let (loops, body) = nest.ok_or_else(|| FrontendError::NonCanonicalNest("no loop nest found".into()))?;
        if loops.is_empty() || loops.len() > 3 {
            return Err(FrontendError::NonCanonicalNest(format!(
                "nest depth {} is outside 1..=3",
                loops.len()
            )));
        }
        if !body.iter().any(|s| matches!(s, Statement::Assign { .. })) {
            return Err(FrontendError::NonCanonicalNest("loop body writes no array".into()));
        }
        Ok(StencilProgram {
            source: self.src.to_string(),
            name,
            params: self.params.clone(),
            arrays: self.arrays.clone(),
            loops,
            body,
        })
    }

    fn peek_is_call(&self) -> bool {
        matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Sym('(')))
    }

    fn loop_nest(&mut self, headers: &mut Vec<LoopHeader>) -> Result<Vec<Statement>, FrontendError> {
        self.next(); // `loop`
        let var = self.ident()?;
        self.fresh(&var)?;
        self.expect_sym('=')?;
        let lower = self.affine(true)?;
        if *self.peek() != Tok::DotDot {
            return Err(self.error("expected `..`"));
        }
        self.next();
        let upper = self.affine(true)?;
        let mut step = 1;
        if self.is_kw("step") {
            self.next();
            step = match self.next() {
                Tok::Int(s) if s >= 1 => s,
                _ => return Err(self.error("step must be a positive integer")),
            };
        }
        self.expect_sym('{')?;
        headers.push(LoopHeader {
            var: var.clone(),
            lower,
            upper,
            step,
        });
        self.loop_vars.push(var);
        let body = if self.is_kw("loop") {
            let inner = self.loop_nest(headers)?;
            if !self.eat_sym('}') {
                return Err(FrontendError::NonCanonicalNest(
                    "statements next to an inner loop; the nest must be perfectly nested".into(),
                ));
            }
            inner
        } else {
            let mut stmts = Vec::new();
            while !self.eat_sym('}') {
                if self.is_kw("loop") {
                    return Err(FrontendError::NonCanonicalNest(
                        "loop after statements; the nest must be perfectly nested".into(),
                    ));
                }
                if *self.peek() == Tok::Eof {
                    return Err(self.error("unterminated loop body"));
                }
                stmts.push(self.statement()?);
            }
            stmts
        };
        Ok(body)
    }

    fn statement(&mut self) -> Result<Statement, FrontendError> {
        if self.is_kw("let") {
            self.next();
            let name = self.ident()?;
            self.fresh(&name)?;
            self.expect_sym('=')?;
            let value = self.value()?;
            self.expect_sym(';')?;
            self.scalars.insert(name.clone());
            return Ok(Statement::Let { name, value });
        }
        let (l, c) = self.here();
        let name = self.ident()?;
        if *self.peek() == Tok::Sym('(') {
            return Err(FrontendError::Parse {
                line: l,
                col: c,
                msg: format!("call to `{name}` is not allowed (side effects)"),
            });
        }
        if !self.arrays.iter().any(|a| a.name == name) {
            return Err(FrontendError::Parse {
                line: l,
                col: c,
                msg: format!("assignment target `{name}` is not a declared array"),
            });
        }
        let target = self.array_ref(name)?;
        self.expect_sym('=')?;
        let value = self.value()?;
        self.expect_sym(';')?;
        Ok(Statement::Assign { target, value })
    }

    fn array_ref(&mut self, array: String) -> Result<ArrayRef, FrontendError> {
        self.expect_sym('[')?;
        let mut indices = vec![self.affine(false)?];
        while self.eat_sym(',') {
            indices.push(self.affine(false)?);
        }
        self.expect_sym(']')?;
        let rank = self.arrays.iter().find(|a| a.name == array).unwrap().rank();
        if indices.len() != rank {
            return Err(self.error(format!(
                "`{array}` has rank {rank} but is subscripted with {} indices",
                indices.len()
            )));
        }
        Ok(ArrayRef { array, indices })
    }

    fn value(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.value_term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.value_term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn value_term(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.value_unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.value_unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn value_unary(&mut self) -> Result<Expr, FrontendError> {
        if self.eat_sym('-') {
            return Ok(Expr::Neg(Box::new(self.value_unary()?)));
        }
        let (l, c) = self.here();
        match self.next() {
            Tok::Int(v) => Ok(Expr::Num(v as f64)),
            Tok::Float(v) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let e = self.value()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Sym('(') {
                    return Err(FrontendError::Parse {
                        line: l,
                        col: c,
                        msg: format!("call to `{name}` is not allowed (side effects)"),
                    });
                }
                if self.arrays.iter().any(|a| a.name == name) {
                    Ok(Expr::Ref(self.array_ref(name)?))
                } else if self.scalars.contains(&name) {
                    Ok(Expr::Scalar(name))
                } else {
                    Err(FrontendError::Parse {
                        line: l,
                        col: c,
                        msg: format!("`{name}` is not an array or an assigned scalar"),
                    })
                }
            }
            _ => Err(FrontendError::Parse {
                line: l,
                col: c,
                msg: "expected a value".into(),
            }),
        }
    }

    /// Parse an integer expression and require it to be affine. Loop bounds
    /// and extents (`params_only`) may not mention loop indices.
    fn affine(&mut self, params_only: bool) -> Result<AffineExpr, FrontendError> {
        let tree = self.int_sum()?;
        let e = self.to_affine(&tree)?;
        if params_only && !e.is_parametric() {
            return Err(FrontendError::NonCanonicalNest(format!(
                "bound `{e}` depends on a loop index; the iteration domain must be rectangular"
            )));
        }
        Ok(e)
    }

    fn int_sum(&mut self) -> Result<IntExpr, FrontendError> {
        let mut lhs = self.int_product()?;
        loop {
            let (l, c) = self.here();
            let op = match self.peek() {
                Tok::Sym('+') => '+',
                Tok::Sym('-') => '-',
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.int_product()?;
            lhs = IntExpr::Bin(op, Box::new(lhs), Box::new(rhs), l, c);
        }
    }

    fn int_product(&mut self) -> Result<IntExpr, FrontendError> {
        let mut lhs = self.int_unary()?;
        loop {
            let (l, c) = self.here();
            let op = match self.peek() {
                Tok::Sym('*') => '*',
                Tok::Sym('/') => '/',
                Tok::Sym('%') => '%',
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.int_unary()?;
            lhs = IntExpr::Bin(op, Box::new(lhs), Box::new(rhs), l, c);
        }
    }

    fn int_unary(&mut self) -> Result<IntExpr, FrontendError> {
        if self.eat_sym('-') {
            return Ok(IntExpr::Neg(Box::new(self.int_unary()?)));
        }
        let (l, c) = self.here();
        match self.next() {
            Tok::Int(v) => Ok(IntExpr::Num(v)),
            Tok::Ident(n) => Ok(IntExpr::Name(n, l, c)),
            Tok::Sym('(') => {
                let e = self.int_sum()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Float(_) => Err(FrontendError::NonAffine {
                line: l,
                col: c,
                msg: "floating-point literal in an index expression".into(),
            }),
            _ => Err(FrontendError::Parse {
                line: l,
                col: c,
                msg: "expected an index expression".into(),
            }),
        }
    }

    fn to_affine(&self, e: &IntExpr) -> Result<AffineExpr, FrontendError> {
        Ok(match e {
            IntExpr::Num(v) => AffineExpr::constant(*v),
            IntExpr::Name(n, l, c) => {
                if self.loop_vars.contains(n) {
                    AffineExpr::var(n)
                } else if self.params.contains(n) {
                    AffineExpr::param(n)
                } else {
                    return Err(FrontendError::Parse {
                        line: *l,
                        col: *c,
                        msg: format!("`{n}` is neither a loop index nor a parameter"),
                    });
                }
            }
            IntExpr::Neg(x) => -self.to_affine(x)?,
            IntExpr::Bin(op, a, b, l, c) => {
                let (x, y) = (self.to_affine(a)?, self.to_affine(b)?);
                match op {
                    '+' => x + y,
                    '-' => x - y,
                    '*' if x.is_constant() => y * x.constant,
                    '*' if y.is_constant() => x * y.constant,
                    '*' => {
                        return Err(FrontendError::NonAffine {
                            line: *l,
                            col: *c,
                            msg: format!("product `({x})*({y})` of two non-constant terms"),
                        })
                    }
                    _ => {
                        return Err(FrontendError::NonAffine {
                            line: *l,
                            col: *c,
                            msg: format!("`{op}` is not allowed in an affine index"),
                        })
                    }
                }
            }
        })
    }
}
