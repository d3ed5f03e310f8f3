//! Rectangular strided integer sets and the handful of set operations the
//! buffer planner needs: corners, images under affine maps, intersection
//! and bounding-box union.

use serde::{Deserialize, Serialize};

use super::affine::{AffineExpr, Binding};
use super::ScopError;

/// One dimension: `{ x : lower ≤ x ≤ upper ∧ (x − lower) mod stride = 0 }`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: AffineExpr,
    pub upper: AffineExpr,
    pub stride: i64,
}

impl Interval {
    pub fn new(lower: AffineExpr, upper: AffineExpr, stride: i64) -> Self {
        assert!(stride >= 1, "stride must be positive");
        Interval {
            lower,
            upper,
            stride,
        }
    }

    pub fn range(lo: i64, hi: i64) -> Self {
        Self::strided(lo, hi, 1)
    }

    pub fn strided(lo: i64, hi: i64, stride: i64) -> Self {
        Self::new(AffineExpr::constant(lo), AffineExpr::constant(hi), stride)
    }

    fn concrete(&self, b: &Binding) -> Result<Span, ScopError> {
        Ok(Span::new(
            self.lower.eval_params(b)?,
            self.upper.eval_params(b)?,
            self.stride,
        ))
    }
}

/// A product of strided intervals. Bounds are affine in the parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntBox {
    pub dims: Vec<Interval>,
}

/// Bound-evaluated interval; `hi` is always the last member when non-empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Span {
    pub lo: i64,
    pub hi: i64,
    pub stride: i64,
}

impl Span {
    pub fn new(lo: i64, hi: i64, stride: i64) -> Span {
        if hi < lo {
            return Span::empty_at(lo);
        }
        let hi = lo + (hi - lo) / stride * stride;
        Span { lo, hi, stride }
    }

    fn empty_at(lo: i64) -> Span {
        Span {
            lo,
            hi: lo - 1,
            stride: 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    fn count(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            (self.hi - self.lo) / self.stride + 1
        }
    }

    fn to_interval(self) -> Interval {
        Interval::strided(self.lo, self.hi, self.stride)
    }

    fn intersect(self, o: Span) -> Span {
        if self.is_empty() || o.is_empty() {
            return Span::empty_at(self.lo.max(o.lo));
        }
        let lo = self.lo.max(o.lo);
        let hi = self.hi.min(o.hi);
        // x ≡ self.lo (mod self.stride) ∧ x ≡ o.lo (mod o.stride)
        let Some((r, m)) = crt(self.lo, self.stride, o.lo, o.stride) else {
            return Span::empty_at(lo);
        };
        let first = lo + (r - lo).rem_euclid(m);
        Span::new(first, hi, m)
    }

    fn hull(self, o: Span) -> Span {
        if self.is_empty() {
            return o;
        }
        if o.is_empty() {
            return self;
        }
        let mut g = gcd(self.stride, o.stride);
        g = gcd(g, (self.lo - o.lo).abs());
        Span::new(self.lo.min(o.lo), self.hi.max(o.hi), g.max(1))
    }
}

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn ext_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

/// Solve x ≡ a (mod m) ∧ x ≡ b (mod n); returns (residue, lcm).
fn crt(a: i64, m: i64, b: i64, n: i64) -> Option<(i64, i64)> {
    let (g, p, _) = ext_gcd(m as i128, n as i128);
    let diff = (b - a) as i128;
    if diff % g != 0 {
        return None;
    }
    let lcm = m as i128 / g * n as i128;
    let t = (diff / g * p).rem_euclid(n as i128 / g);
    let x = (a as i128 + m as i128 * t).rem_euclid(lcm);
    Some((x as i64, lcm as i64))
}

impl IntBox {
    pub fn new(dims: Vec<Interval>) -> Self {
        IntBox { dims }
    }

    /// Concrete box `[lo_0..hi_0] × …` with unit strides.
    pub fn from_ranges(ranges: &[(i64, i64)]) -> Self {
        IntBox::new(ranges.iter().map(|&(l, h)| Interval::range(l, h)).collect())
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub(crate) fn spans(&self, b: &Binding) -> Result<Vec<Span>, ScopError> {
        self.dims.iter().map(|d| d.concrete(b)).collect()
    }

    fn from_spans(spans: Vec<Span>) -> IntBox {
        IntBox::new(spans.into_iter().map(Span::to_interval).collect())
    }

    pub fn is_empty(&self, b: &Binding) -> Result<bool, ScopError> {
        Ok(self.spans(b)?.iter().any(Span::is_empty))
    }

    pub fn contains(&self, point: &[i64], b: &Binding) -> Result<bool, ScopError> {
        let spans = self.spans(b)?;
        Ok(point.len() == spans.len()
            && spans.iter().zip(point).all(|(s, &x)| {
                !s.is_empty() && s.lo <= x && x <= s.hi && (x - s.lo) % s.stride == 0
            }))
    }

    /// Number of member points.
    pub fn cardinality(&self, b: &Binding) -> Result<i64, ScopError> {
        Ok(self.spans(b)?.iter().map(Span::count).product())
    }

    /// Bounding-box sizes `upper − lower + 1` per dimension (gaps included).
    pub fn extents(&self, b: &Binding) -> Result<Vec<i64>, ScopError> {
        Ok(self
            .spans(b)?
            .iter()
            .map(|s| if s.is_empty() { 0 } else { s.hi - s.lo + 1 })
            .collect())
    }

    /// Per-dimension minimum corner.
    pub fn lexmin(&self, b: &Binding) -> Result<Vec<i64>, ScopError> {
        let spans = self.spans(b)?;
        if spans.iter().any(Span::is_empty) {
            return Err(ScopError::EmptyBox);
        }
        Ok(spans.iter().map(|s| s.lo).collect())
    }

    /// Per-dimension maximum corner (last member, stride respected).
    pub fn lexmax(&self, b: &Binding) -> Result<Vec<i64>, ScopError> {
        let spans = self.spans(b)?;
        if spans.iter().any(Span::is_empty) {
            return Err(ScopError::EmptyBox);
        }
        Ok(spans.iter().map(|s| s.hi).collect())
    }

    /// Smallest box containing `{ f(x) : x ∈ self }` where `f` maps the
    /// variables `vars` (one per dimension of `self`) through `indices`.
    pub fn image(&self, vars: &[&str], indices: &[AffineExpr], b: &Binding) -> Result<IntBox, ScopError> {
        if vars.len() != self.rank() {
            return Err(ScopError::RankMismatch(vars.len(), self.rank()));
        }
        let spans = self.spans(b)?;
        if spans.iter().any(Span::is_empty) {
            return Err(ScopError::EmptyBox);
        }
        let mut out = Vec::with_capacity(indices.len());
        for e in indices {
            let e = e.bind_params(b)?;
            let (mut lo, mut hi, mut g) = (e.constant, e.constant, 0i64);
            for (v, &c) in e.vars() {
                let k = vars
                    .iter()
                    .position(|n| n == v)
                    .ok_or_else(|| ScopError::UnboundedImage(v.clone()))?;
                let s = spans[k];
                let (a, z) = (c * s.lo, c * s.hi);
                lo += a.min(z);
                hi += a.max(z);
                if s.hi > s.lo {
                    g = gcd(g, c * s.stride);
                }
            }
            out.push(Span::new(lo, hi, g.max(1)));
        }
        Ok(IntBox::from_spans(out))
    }

    /// Exact intersection. Strided dimensions are intersected through the
    /// Chinese remainder theorem.
    pub fn intersect(&self, other: &IntBox, b: &Binding) -> Result<IntBox, ScopError> {
        if self.rank() != other.rank() {
            return Err(ScopError::RankMismatch(self.rank(), other.rank()));
        }
        let spans = self
            .spans(b)?
            .into_iter()
            .zip(other.spans(b)?)
            .map(|(x, y)| x.intersect(y))
            .collect();
        Ok(IntBox::from_spans(spans))
    }

    /// Smallest box covering both operands; gaps between them are included.
    pub fn union_bbox(&self, other: &IntBox, b: &Binding) -> Result<IntBox, ScopError> {
        if self.rank() != other.rank() {
            return Err(ScopError::RankMismatch(self.rank(), other.rank()));
        }
        if self.is_empty(b)? {
            return Ok(IntBox::from_spans(other.spans(b)?));
        }
        if other.is_empty(b)? {
            return Ok(IntBox::from_spans(self.spans(b)?));
        }
        let spans = self
            .spans(b)?
            .into_iter()
            .zip(other.spans(b)?)
            .map(|(x, y)| x.hull(y))
            .collect();
        Ok(IntBox::from_spans(spans))
    }

    /// All member points in lexicographic order.
    pub fn points(&self, b: &Binding) -> Result<Vec<Vec<i64>>, ScopError> {
        let spans = self.spans(b)?;
        let mut out = vec![vec![]];
        for s in spans {
            let mut next = Vec::new();
            for p in &out {
                let mut x = s.lo;
                while x <= s.hi {
                    let mut q = p.clone();
                    q.push(x);
                    next.push(q);
                    x += s.stride;
                }
            }
            out = next;
        }
        Ok(out)
    }
}
