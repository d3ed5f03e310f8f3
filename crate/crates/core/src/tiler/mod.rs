//! Rectangular tiling `T(SZ, p, δ)`: inter-tile loops in source order
//! around intra-tile loops permuted by `p`, tile-origin shifts, and padding
//! of the innermost intra-tile loop to a constant trip count.

mod deps;

pub use deps::{all_permutations, dependences, legal_permutations, Dependence};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scop::{AffineExpr, Binding, Schedule, ScheduleConstraint, Scop, ScopError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TileError {
    #[error("bad tile sizes: {0}")]
    BadSizes(String),
    #[error("bad permutation: {0}")]
    BadPermutation(String),
    #[error("loop `{var}` has stride {stride}, which does not divide its tile size {size}")]
    StrideMismatch { var: String, stride: i64, size: i64 },
    #[error("tile index name `{0}` clashes with an existing name")]
    NameClash(String),
    #[error("{0}")]
    Precondition(&'static str),
    #[error("no legal tiling: dependence on `{array}` with distance {distance:?} is reversed by rectangular tiles")]
    NoLegalTiling { array: String, distance: Vec<i64> },
    #[error("non-constant dependence on `{array}`: {detail}")]
    NonConstantDependence { array: String, detail: String },
    #[error(transparent)]
    Scop(#[from] ScopError),
}

/// Inner shift `δ^i` of one loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerShift {
    Zero,
    /// `δ^i = −ti`: the intra-tile index counts from 0 within its tile.
    NegTile,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingSpec {
    pub sizes: Vec<i64>,
    /// `perm[0]` is the loop position of the outermost intra-tile loop.
    pub perm: Vec<usize>,
    /// `δ^o` per loop (in source loop order).
    pub delta_outer: Vec<AffineExpr>,
    pub delta_inner: Vec<InnerShift>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiledScop {
    pub base: Scop,
    pub spec: TilingSpec,
    /// Innermost intra-tile loop always runs its full tile size.
    pub padded: bool,
}

/// One point of the tiled iteration space in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduledPoint {
    pub tile: Vec<i64>,
    /// Original iteration coordinates, in source loop order.
    pub iter: Vec<i64>,
    /// Added by padding; not part of the original domain.
    pub padded: bool,
}

pub fn tile_var(var: &str) -> String {
    format!("t{var}")
}

/// Normal-form tiling `(SZ, p, δ = 0)`.
pub fn tile(s: &Scop, sizes: &[i64], perm: &[usize]) -> Result<TiledScop, TileError> {
    let d = s.depth();
    if sizes.len() != d {
        return Err(TileError::BadSizes(format!("{} sizes for depth {d}", sizes.len())));
    }
    if let Some(z) = sizes.iter().find(|&&z| z < 1) {
        return Err(TileError::BadSizes(format!("tile size {z} is not positive")));
    }
    let mut seen = vec![false; d];
    for &q in perm {
        if q >= d || seen[q] {
            return Err(TileError::BadPermutation(format!("{perm:?} is not a permutation of 0..{d}")));
        }
        seen[q] = true;
    }
    if perm.len() != d {
        return Err(TileError::BadPermutation(format!("{perm:?} is not a permutation of 0..{d}")));
    }
    for (l, &z) in s.loops.iter().zip(sizes) {
        if z % l.stride != 0 {
            return Err(TileError::StrideMismatch {
                var: l.var.clone(),
                stride: l.stride,
                size: z,
            });
        }
        let t = tile_var(&l.var);
        if s.loops.iter().any(|m| m.var == t) || s.params.contains(&t) {
            return Err(TileError::NameClash(t));
        }
    }
    Ok(TiledScop {
        base: s.clone(),
        spec: TilingSpec {
            sizes: sizes.to_vec(),
            perm: perm.to_vec(),
            delta_outer: vec![AffineExpr::constant(0); d],
            delta_inner: vec![InnerShift::Zero; d],
        },
        padded: false,
    })
}

impl TiledScop {
    pub fn depth(&self) -> usize {
        self.base.depth()
    }

    pub fn is_outer_shifted(&self) -> bool {
        self.base
            .loops
            .iter()
            .zip(&self.spec.delta_outer)
            .all(|(l, d)| *d == -l.lower.clone())
    }

    pub fn is_inner_shifted(&self) -> bool {
        self.spec.delta_inner.iter().all(|d| *d == InnerShift::NegTile)
    }

    /// `δ^o = −lb`: tiles start at the loop's lower bound, the first tile is full.
    pub fn shift_outer(&self) -> TiledScop {
        let mut t = self.clone();
        t.spec.delta_outer = self.base.loops.iter().map(|l| -l.lower.clone()).collect();
        t
    }

    /// `δ^i = −ti`: intra-tile loops count from 0; requires the outer shift.
    pub fn shift_inner(&self) -> Result<TiledScop, TileError> {
        if !self.is_outer_shifted() {
            return Err(TileError::Precondition("shift_inner needs shift_outer first"));
        }
        let mut t = self.clone();
        t.spec.delta_inner = vec![InnerShift::NegTile; self.depth()];
        Ok(t)
    }

    /// Run the innermost intra-tile loop for its full tile size.
    pub fn pad_innermost(&self) -> Result<TiledScop, TileError> {
        if !self.is_outer_shifted() || !self.is_inner_shifted() {
            return Err(TileError::Precondition("pad_innermost needs both shifts first"));
        }
        let mut t = self.clone();
        t.padded = true;
        Ok(t)
    }

    /// Tile, apply both shifts and optionally pad.
    pub fn normalized(s: &Scop, sizes: &[i64], perm: &[usize], pad: bool) -> Result<TiledScop, TileError> {
        let t = tile(s, sizes, perm)?.shift_outer().shift_inner()?;
        if pad {
            t.pad_innermost()
        } else {
            Ok(t)
        }
    }

    /// Position of the innermost intra-tile loop.
    pub fn innermost(&self) -> usize {
        *self.spec.perm.last().unwrap()
    }

    pub fn tile_vars(&self) -> Vec<String> {
        self.base.loops.iter().map(|l| tile_var(&l.var)).collect()
    }

    /// Original index expressed through the variables of the tiled nest:
    /// `t_x + x` after the inner shift, `x` otherwise.
    pub fn original_index(&self, x: usize) -> AffineExpr {
        let v = &self.base.loops[x].var;
        match self.spec.delta_inner[x] {
            InnerShift::NegTile => AffineExpr::var(v) + AffineExpr::var(&tile_var(v)),
            InnerShift::Zero => AffineExpr::var(v),
        }
    }

    /// Tiled schedule over original indices `x` and tile origins `t_x`:
    /// `O[t_1, .., t_d, p(x_1) + δ^i, .., p(x_d) + δ^i]` with the ordering
    /// predicate `(t_x + δ^o_x) mod SZ_x = 0 ∧ t_x ≤ x < t_x + SZ_x` and the
    /// loop strides as constraints.
    pub fn schedule(&self) -> Schedule {
        let loops = &self.base.loops;
        let mut dims: Vec<AffineExpr> = loops.iter().map(|l| AffineExpr::var(&tile_var(&l.var))).collect();
        for &q in &self.spec.perm {
            let v = AffineExpr::var(&loops[q].var);
            dims.push(match self.spec.delta_inner[q] {
                InnerShift::NegTile => v - AffineExpr::var(&tile_var(&loops[q].var)),
                InnerShift::Zero => v,
            });
        }
        let mut constraints = Vec::new();
        for (x, l) in loops.iter().enumerate() {
            let t = AffineExpr::var(&tile_var(&l.var));
            let v = AffineExpr::var(&l.var);
            let z = self.spec.sizes[x];
            constraints.push(ScheduleConstraint::Mod {
                expr: t.clone() + self.spec.delta_outer[x].clone(),
                modulus: z,
            });
            constraints.push(ScheduleConstraint::NonNeg(v.clone() - t.clone()));
            constraints.push(ScheduleConstraint::NonNeg(t + (z - 1) - v.clone()));
            if l.stride > 1 {
                constraints.push(ScheduleConstraint::Mod {
                    expr: v - l.lower.clone(),
                    modulus: l.stride,
                });
            }
        }
        Schedule { dims, constraints }
    }

    /// First tile origin and last tile origin of loop `x` (step `SZ_x`);
    /// `None` for an empty loop.
    pub fn tile_range(&self, x: usize, b: &Binding) -> Result<Option<(i64, i64)>, TileError> {
        let l = &self.base.loops[x];
        let (lo, hi) = (l.lower.eval_params(b)?, l.upper.eval_params(b)?);
        if lo > hi {
            return Ok(None);
        }
        let z = self.spec.sizes[x];
        let shift = self.spec.delta_outer[x].eval_params(b)?;
        // Smallest t ≡ −shift (mod z) with t + z − 1 ≥ lo.
        let first = lo - (z - 1);
        let first = first + (-shift - first).rem_euclid(z);
        let last = hi - (hi + shift).rem_euclid(z);
        Ok(Some((first, last)))
    }

    /// Original indices of loop `x` that run inside the tile starting at `t`.
    pub fn intra_values(&self, x: usize, t: i64, b: &Binding) -> Result<Vec<(i64, bool)>, TileError> {
        let l = &self.base.loops[x];
        let (lo, hi, s) = (l.lower.eval_params(b)?, l.upper.eval_params(b)?, l.stride);
        let z = self.spec.sizes[x];
        if self.padded && x == self.innermost() {
            let start = t + (lo - t).rem_euclid(s);
            return Ok((start..t + z)
                .step_by(s as usize)
                .map(|v| (v, v < lo || v > hi))
                .collect());
        }
        let from = lo.max(t);
        let from = from + (lo - from).rem_euclid(s);
        Ok((from..=hi.min(t + z - 1)).step_by(s as usize).map(|v| (v, false)).collect())
    }

    /// Tile origins in execution order.
    pub fn tiles(&self, b: &Binding) -> Result<Vec<Vec<i64>>, TileError> {
        let mut axes = Vec::new();
        for x in 0..self.depth() {
            match self.tile_range(x, b)? {
                None => return Ok(Vec::new()),
                Some((a, e)) => axes.push((a..=e).step_by(self.spec.sizes[x] as usize).collect::<Vec<_>>()),
            }
        }
        Ok(cartesian(&axes))
    }

    /// Every scheduled point, in the execution order of the tiled nest.
    pub fn points(&self, b: &Binding) -> Result<Vec<ScheduledPoint>, TileError> {
        let d = self.depth();
        let mut out = Vec::new();
        for tile in self.tiles(b)? {
            let mut axes = Vec::new();
            for &q in &self.spec.perm {
                axes.push(self.intra_values(q, tile[q], b)?);
            }
            for combo in cartesian(&axes) {
                let mut iter = vec![0; d];
                let mut padded = false;
                for (k, &q) in self.spec.perm.iter().enumerate() {
                    iter[q] = combo[k].0;
                    padded |= combo[k].1;
                }
                out.push(ScheduledPoint {
                    tile: tile.clone(),
                    iter,
                    padded,
                });
            }
        }
        Ok(out)
    }

    /// Time stamp of a point under [`TiledScop::schedule`].
    pub fn stamp(&self, p: &ScheduledPoint, b: &Binding) -> Result<Vec<i64>, TileError> {
        let sched = self.schedule();
        Ok(sched.stamp(|v| self.lookup(p, v), b)?)
    }

    /// Value of an original or tile index at a scheduled point.
    pub fn lookup(&self, p: &ScheduledPoint, v: &str) -> Option<i64> {
        let loops = &self.base.loops;
        if let Some(x) = loops.iter().position(|l| l.var == v) {
            return Some(p.iter[x]);
        }
        loops.iter().position(|l| tile_var(&l.var) == v).map(|x| p.tile[x])
    }
}

fn cartesian<T: Clone>(axes: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(v.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    const FIG2: &str = "param N\narray A float[N+1]\narray B float[N+1]\nloop i = 1 .. N-1 { A[i] = B[i-1] + B[i+1]; }";

    fn per_tile(t: &TiledScop, b: &Binding) -> Vec<usize> {
        let pts = t.points(b).unwrap();
        let mut counts: Vec<(i64, usize)> = Vec::new();
        for p in pts {
            match counts.last_mut() {
                Some((o, c)) if *o == p.tile[0] => *c += 1,
                _ => counts.push((p.tile[0], 1)),
            }
        }
        counts.into_iter().map(|(_, c)| c).collect()
    }

    #[test]
    fn one_dimensional_tilings() {
        let s = load(FIG2).unwrap();
        let b = Binding::new().with("N", 100);
        let t3 = tile(&s, &[32], &[0]).unwrap();
        assert_eq!(per_tile(&t3, &b), vec![31, 32, 32, 4]);
        assert_eq!(t3.tile_range(0, &b).unwrap(), Some((0, 96)));
        let t4 = t3.shift_outer();
        assert_eq!(per_tile(&t4, &b), vec![32, 32, 32, 3]);
        assert_eq!(t4.tile_range(0, &b).unwrap(), Some((1, 97)));
        let t5 = t4.shift_inner().unwrap();
        assert_eq!(per_tile(&t5, &b), vec![32, 32, 32, 3]);
        assert_eq!(t5.original_index(0).to_string(), "i + ti");
        let t6 = t5.pad_innermost().unwrap();
        assert_eq!(per_tile(&t6, &b), vec![32, 32, 32, 32]);
        let last: Vec<_> = t6.points(&b).unwrap().into_iter().filter(|p| p.tile[0] == 97).collect();
        assert_eq!(last.first().unwrap().iter[0], 97);
        assert_eq!(last.last().unwrap().iter[0], 128);
        assert_eq!(last.iter().filter(|p| !p.padded).count(), 3);
    }

    #[test]
    fn preconditions_are_enforced() {
        let s = load(FIG2).unwrap();
        let t = tile(&s, &[32], &[0]).unwrap();
        assert!(t.shift_inner().is_err());
        assert!(t.shift_outer().pad_innermost().is_err());
        assert!(matches!(tile(&s, &[0], &[0]), Err(TileError::BadSizes(_))));
        assert!(matches!(tile(&s, &[4], &[1]), Err(TileError::BadPermutation(_))));
    }

    #[test]
    fn zero_lower_bound_shift_is_noop() {
        let s = load("param N\narray A float[N]\nloop i = 0 .. N-1 { A[i] = 1.0; }").unwrap();
        let t = tile(&s, &[8], &[0]).unwrap();
        assert_eq!(t.shift_outer().spec.delta_outer, t.spec.delta_outer);
    }

    #[test]
    fn unit_tiles_split_every_iteration() {
        let s = load(FIG2).unwrap();
        let b = Binding::new().with("N", 9);
        let t = tile(&s, &[1], &[0]).unwrap();
        let pts = t.points(&b).unwrap();
        assert_eq!(pts.len(), 8);
        assert!(pts.iter().all(|p| p.tile == p.iter));
    }

    #[test]
    fn strided_padding_keeps_stride() {
        let s = load("param N\narray A float[N]\nloop i = 0 .. N-1 step 2 { A[i] = 1.0; }").unwrap();
        let b = Binding::new().with("N", 10);
        let t = TiledScop::normalized(&s, &[4], &[0], true).unwrap();
        let pts = t.points(&b).unwrap();
        // Brute force: tile starts lb + 4k, each padded to 4 indices with stride 2.
        let mut expect = Vec::new();
        for start in (0..10).step_by(4) {
            for pi in start..start + 4 {
                if (pi - start) % 2 == 0 {
                    expect.push((pi, pi > 9));
                }
            }
        }
        let got: Vec<_> = pts.iter().map(|p| (p.iter[0], p.padded)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn running_example_tiles_start_at_one() {
        let s = load(
            "param N\narray A float[N][N][N]\narray V float[N][N][N]\n\
             loop i = 1 .. N-2 { loop j = 1 .. N-2 { loop k = 1 .. N-2 {\n\
             V[i, k, j] = V[i, k, j] + A[i, j, k] + A[i+1, j+1, k+1]; } } }",
        )
        .unwrap();
        let b = Binding::new().with("N", 67);
        let t = tile(&s, &[32, 32, 32], &[0, 2, 1]).unwrap().shift_outer();
        let tiles = t.tiles(&b).unwrap();
        let starts: BTreeSet<i64> = tiles.iter().map(|t| t[0]).collect();
        assert_eq!(starts.into_iter().collect::<Vec<_>>(), vec![1, 33, 65]);
        let sched = t.schedule();
        assert_eq!(sched.dims[4], AffineExpr::var("k"));
        // Brute-force tiling: every domain point in exactly one tile, origin (x-1)/32*32+1.
        let pts = t.points(&b).unwrap();
        assert_eq!(pts.len(), 65 * 65 * 65);
        for p in pts.iter().step_by(97) {
            for x in 0..3 {
                assert_eq!(p.tile[x], (p.iter[x] - 1) / 32 * 32 + 1);
            }
        }
    }

    /// Independent oracle: all (tile, point) pairs that satisfy the
    /// schedule's constraints, with padded points admitted per the padding
    /// rule, sorted by time stamp.
    fn oracle(t: &TiledScop, b: &Binding) -> Vec<(Vec<i64>, Vec<i64>)> {
        let s = &t.base;
        let d = s.depth();
        let sched = t.schedule();
        let bounds = s.loop_bounds(b).unwrap();
        let inner = t.innermost();
        let mut ranges = Vec::new();
        for x in 0..d {
            let (lo, hi) = bounds[x];
            let z = t.spec.sizes[x];
            ranges.push(((lo - z)..=(hi + z)).collect::<Vec<_>>());
        }
        let mut all = Vec::new();
        let env_axes: Vec<Vec<i64>> = ranges.iter().chain(ranges.iter()).cloned().collect();
        for combo in cartesian(&env_axes) {
            let (tl, it) = combo.split_at(d);
            let lookup = |v: &str| -> Option<i64> {
                let x = s.loops.iter().position(|l| l.var == v);
                if let Some(x) = x {
                    return Some(it[x]);
                }
                s.loops.iter().position(|l| tile_var(&l.var) == v).map(|x| tl[x])
            };
            if !sched.holds(lookup, b).unwrap() {
                continue;
            }
            let mut ok = true;
            for x in 0..d {
                let (lo, hi) = bounds[x];
                let inside = it[x] >= lo && it[x] <= hi;
                let pad_ok = t.padded && x == inner && it[x] >= lo && tl[x] <= hi;
                if !(inside || pad_ok) {
                    ok = false;
                }
            }
            if ok {
                all.push((sched.stamp(lookup, b).unwrap(), tl.to_vec(), it.to_vec()));
            }
        }
        all.sort();
        all.into_iter().map(|(_, t, i)| (t, i)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn enumeration_matches_schedule_oracle(
            n in 3i64..12, lo0 in 0i64..3, lo1 in 0i64..3, z0 in 1i64..5, z1 in 1i64..5,
            swap in any::<bool>(), shift in 0usize..3, pad in any::<bool>(), stride in 1i64..3,
        ) {
            let z1 = if z1 % stride == 0 { z1 } else { z1 * stride };
            let src = format!(
                "param N\narray A float[N+4][N+4]\nloop i = {lo0} .. N-1 {{ loop j = {lo1} .. N step {stride} {{ A[i, j] = 1.0; }} }}"
            );
            let s = load(&src).unwrap();
            let b = Binding::new().with("N", n);
            let perm = if swap { vec![1, 0] } else { vec![0, 1] };
            let mut t = tile(&s, &[z0, z1], &perm).unwrap();
            if shift >= 1 { t = t.shift_outer(); }
            if shift >= 2 { t = t.shift_inner().unwrap(); }
            if pad && shift == 2 { t = t.pad_innermost().unwrap(); }
            let pts = t.points(&b).unwrap();
            let got: Vec<_> = pts.iter().map(|p| (p.tile.clone(), p.iter.clone())).collect();
            prop_assert_eq!(&got, &oracle(&t, &b));
            // Schedule stamps strictly increase along the enumeration.
            let stamps: Vec<_> = pts.iter().map(|p| t.stamp(p, &b).unwrap()).collect();
            prop_assert!(stamps.windows(2).all(|w| w[0] < w[1]));
            // Original points appear exactly once.
            let orig: Vec<_> = pts.iter().filter(|p| !p.padded).map(|p| p.iter.clone()).collect();
            let set: BTreeSet<_> = orig.iter().cloned().collect();
            prop_assert_eq!(set.len(), orig.len());
            prop_assert_eq!(set, s.domain().points(&b).unwrap().into_iter().collect::<BTreeSet<_>>());
            if t.padded {
                let inner = t.innermost();
                for tl in t.tiles(&b).unwrap() {
                    let v = t.intra_values(inner, tl[inner], &b).unwrap();
                    prop_assert_eq!(v.len() as i64, t.spec.sizes[inner] / s.loops[inner].stride);
                }
            }
        }
    }
}
