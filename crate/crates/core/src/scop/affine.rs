//! Integer-linear expressions over loop indices and size parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::ScopError;

/// Concrete values for the size parameters of a program.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding(BTreeMap<String, i64>);

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: i64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: i64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.0.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &i64)> {
        self.0.iter()
    }
}

impl FromIterator<(String, i64)> for Binding {
    fn from_iter<T: IntoIterator<Item = (String, i64)>>(iter: T) -> Self {
        Binding(iter.into_iter().collect())
    }
}

/// `Σ coeffs[v]·v + Σ param_coeffs[p]·p + constant`.
///
/// Zero coefficients are never stored, so structural equality is
/// coefficient equality.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AffineExpr {
    pub coeffs: BTreeMap<String, i64>,
    pub param_coeffs: BTreeMap<String, i64>,
    pub constant: i64,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr {
            constant: c,
            ..Default::default()
        }
    }

    pub fn var(name: &str) -> Self {
        Self::term(name, 1)
    }

    pub fn term(name: &str, coeff: i64) -> Self {
        let mut e = AffineExpr::default();
        e.add_var(name, coeff);
        e
    }

    pub fn param(name: &str) -> Self {
        let mut e = AffineExpr::default();
        e.add_param(name, 1);
        e
    }

    pub fn add_var(&mut self, name: &str, coeff: i64) {
        bump(&mut self.coeffs, name, coeff);
    }

    pub fn add_param(&mut self, name: &str, coeff: i64) {
        bump(&mut self.param_coeffs, name, coeff);
    }

    pub fn coeff(&self, var: &str) -> i64 {
        self.coeffs.get(var).copied().unwrap_or(0)
    }

    pub fn param_coeff(&self, p: &str) -> i64 {
        self.param_coeffs.get(p).copied().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty() && self.param_coeffs.is_empty()
    }

    /// True when no loop index appears (parameters are allowed).
    pub fn is_parametric(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &i64)> {
        self.coeffs.iter()
    }

    /// The expression with the constant term dropped.
    pub fn linear_part(&self) -> AffineExpr {
        AffineExpr {
            constant: 0,
            ..self.clone()
        }
    }

    /// Same variable and parameter coefficients.
    pub fn same_linear_part(&self, other: &AffineExpr) -> bool {
        self.coeffs == other.coeffs && self.param_coeffs == other.param_coeffs
    }

    /// Substitute every parameter by its bound value.
    pub fn bind_params(&self, binding: &Binding) -> Result<AffineExpr, ScopError> {
        let mut out = AffineExpr {
            coeffs: self.coeffs.clone(),
            param_coeffs: BTreeMap::new(),
            constant: self.constant,
        };
        for (p, c) in &self.param_coeffs {
            let v = binding
                .get(p)
                .ok_or_else(|| ScopError::UnboundParameter(p.clone()))?;
            out.constant += c * v;
        }
        Ok(out)
    }

    /// Evaluate with all variables and parameters supplied by `lookup`.
    pub fn eval_with(&self, mut var: impl FnMut(&str) -> Option<i64>, params: &Binding) -> Result<i64, ScopError> {
        let mut acc = self.constant;
        for (v, c) in &self.coeffs {
            let x = var(v).ok_or_else(|| ScopError::UnboundVariable(v.clone()))?;
            acc += c * x;
        }
        for (p, c) in &self.param_coeffs {
            let x = params
                .get(p)
                .ok_or_else(|| ScopError::UnboundParameter(p.clone()))?;
            acc += c * x;
        }
        Ok(acc)
    }

    /// Evaluate an expression that contains only parameters.
    pub fn eval_params(&self, params: &Binding) -> Result<i64, ScopError> {
        self.eval_with(|_| None, params)
    }

    /// Replace variable `name` by `with`.
    pub fn substitute(&self, name: &str, with: &AffineExpr) -> AffineExpr {
        let c = self.coeff(name);
        if c == 0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.coeffs.remove(name);
        out + with.clone() * c
    }

    /// Rename variables through `f`; coefficients of colliding names add up.
    pub fn rename_vars(&self, f: impl Fn(&str) -> String) -> AffineExpr {
        let mut out = AffineExpr {
            coeffs: BTreeMap::new(),
            param_coeffs: self.param_coeffs.clone(),
            constant: self.constant,
        };
        for (v, c) in &self.coeffs {
            out.add_var(&f(v), *c);
        }
        out
    }
}

fn bump(map: &mut BTreeMap<String, i64>, name: &str, by: i64) {
    if by == 0 {
        return;
    }
    let entry = map.entry(name.to_string()).or_insert(0);
    *entry += by;
    if *entry == 0 {
        map.remove(name);
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        for (v, c) in rhs.coeffs {
            self.add_var(&v, c);
        }
        for (p, c) in rhs.param_coeffs {
            self.add_param(&p, c);
        }
        self.constant += rhs.constant;
        self
    }
}

impl Add<i64> for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: i64) -> AffineExpr {
        self.constant += rhs;
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

impl Sub<i64> for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: i64) -> AffineExpr {
        self + (-rhs)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self * -1
    }
}

impl Mul<i64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(self, k: i64) -> AffineExpr {
        if k == 0 {
            return AffineExpr::constant(0);
        }
        AffineExpr {
            coeffs: self.coeffs.into_iter().map(|(v, c)| (v, c * k)).collect(),
            param_coeffs: self.param_coeffs.into_iter().map(|(p, c)| (p, c * k)).collect(),
            constant: self.constant * k,
        }
    }
}

impl fmt::Display for AffineExpr {
    /// C-compatible rendering, e.g. `ti + i - 1`, `2*j`, `N - 2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        let terms = self
            .coeffs
            .iter()
            .chain(self.param_coeffs.iter())
            .map(|(n, c)| (Some(n.as_str()), *c))
            .chain(std::iter::once((None, self.constant)));
        for (name, c) in terms {
            if name.is_some() && c == 0 {
                continue;
            }
            if name.is_none() && (c == 0 && !first) {
                continue;
            }
            let mag = c.abs();
            if first {
                if c < 0 {
                    write!(f, "-")?;
                }
            } else if c < 0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            match name {
                Some(n) if mag == 1 => write!(f, "{n}")?,
                Some(n) => write!(f, "{mag}*{n}")?,
                None => write!(f, "{mag}")?,
            }
            first = false;
        }
        Ok(())
    }
}
