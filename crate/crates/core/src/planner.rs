//! Cache-buffer planning: working sets, buffer kinds, fusion of accesses,
//! permutation selection and halo sizing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scop::{AccessRelation, AffineExpr, Binding, IntBox, Interval, Scop, ScopError};
use crate::tiler::{self, tile_var, TileError, TiledScop};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Scop(#[from] ScopError),
    #[error("port width {0} is not one of 1, 2, 4, 8, 16")]
    BadPortWidth(i64),
    #[error("permutation {0:?} is not legal for this nest")]
    IllegalPermutation(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BufferKind {
    Line,
    Chunk,
    Full,
    Nc,
}

impl BufferKind {
    pub fn name(self) -> &'static str {
        match self {
            BufferKind::Full => "FULL",
            BufferKind::Chunk => "CHUNK",
            BufferKind::Line => "LINE",
            BufferKind::Nc => "NC",
        }
    }
}

/// Buffer assignment for one group of accesses to one array.
///
/// Buffer coordinates relate to array coordinates through the anchor:
/// `array index = anchor + buffer index` (minus `halo_left` on the
/// innermost dimension). For LINE buffers only the innermost array
/// dimension is kept.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferPlan {
    pub array: String,
    /// Indices into `Scop::accesses`.
    pub accesses: Vec<usize>,
    pub kind: BufferKind,
    /// Bounding-box extents before halo (empty for NC).
    pub extents: Vec<i64>,
    /// Per array dimension: offset of the buffer origin from the tile- and
    /// fixed-loop-dependent part of the subscripts.
    pub origin: Vec<i64>,
    /// Loop positions held fixed during the buffer's lifetime.
    pub fixed: Vec<usize>,
    pub halo_left: i64,
    pub padded_innermost_extent: i64,
    /// Port width the halo was computed for (1 after a fallback).
    pub port_width: i64,
    pub reads: bool,
    pub writes: bool,
    pub notes: Vec<String>,
}

impl BufferPlan {
    pub fn cost(&self) -> i64 {
        if self.kind == BufferKind::Nc {
            0
        } else {
            self.extents.iter().product()
        }
    }

    /// Declared extents: the innermost extent grows by the halo and is
    /// rounded up to the port width.
    pub fn declared_extents(&self) -> Vec<i64> {
        let mut e = self.extents.clone();
        if let Some(last) = e.last_mut() {
            *last = self.padded_innermost_extent;
        }
        e
    }

    /// Array coordinate of the buffer origin, per array dimension, in terms
    /// of tile indices, fixed intra-tile indices and parameters.
    pub fn anchor(&self, s: &Scop, t: &TiledScop) -> Vec<AffineExpr> {
        let first = &s.accesses[self.accesses[0]];
        let loops = &s.loops;
        first
            .indices
            .iter()
            .zip(&self.origin)
            .map(|(e, &o)| {
                let mut a = AffineExpr::constant(o);
                for (p, c) in &e.param_coeffs {
                    a.add_param(p, *c);
                }
                for (x, l) in loops.iter().enumerate() {
                    let c = e.coeff(&l.var);
                    if c != 0 {
                        a.add_var(&tile_var(&l.var), c);
                        if self.fixed.contains(&x) && t.is_inner_shifted() {
                            a.add_var(&l.var, c);
                        }
                    }
                }
                a
            })
            .collect()
    }

    /// Buffer-relative offset of each dimension kept by the buffer, for
    /// access `a` of this group (without halo).
    pub fn buffer_index(&self, s: &Scop, a: &AccessRelation) -> Vec<AffineExpr> {
        let mut out = Vec::new();
        let r = a.indices.len();
        for (dim, e) in a.indices.iter().enumerate() {
            if self.kind == BufferKind::Line && dim + 1 != r {
                continue;
            }
            let mut x = AffineExpr::constant(e.constant - self.origin[dim]);
            for (k, l) in s.loops.iter().enumerate() {
                if !self.fixed.contains(&k) {
                    x.add_var(&l.var, e.coeff(&l.var));
                }
            }
            out.push(x);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationChoice {
    pub perm: Vec<usize>,
    pub plans: Vec<BufferPlan>,
    pub total_cost: i64,
}

impl PermutationChoice {
    fn key(&self) -> (i64, usize, usize, usize, Vec<usize>) {
        let count = |k| self.plans.iter().filter(|p| p.kind == k).count();
        (
            self.total_cost,
            count(BufferKind::Nc),
            count(BufferKind::Full),
            count(BufferKind::Chunk),
            self.perm.clone(),
        )
    }
}

/// Linear coefficients of `a`: one row per array dimension, one column per loop.
fn matrix(s: &Scop, a: &AccessRelation) -> Vec<Vec<i64>> {
    a.indices
        .iter()
        .map(|e| s.loops.iter().map(|l| e.coeff(&l.var)).collect())
        .collect()
}

/// Tile-relative working set of one access: the bounding box of its
/// subscripts (tile origins, fixed loops and parameters dropped) over the
/// intra-tile box of a full tile. `fixed` lists loop positions held at 0.
pub fn working_set_fixed(s: &Scop, a: &AccessRelation, sizes: &[i64], fixed: &[usize]) -> Result<IntBox, ScopError> {
    let free: Vec<usize> = (0..s.depth()).filter(|x| !fixed.contains(x)).collect();
    let vars: Vec<&str> = free.iter().map(|&x| s.loops[x].var.as_str()).collect();
    let tile_box = IntBox::new(
        free.iter()
            .map(|&x| {
                let st = s.loops[x].stride;
                Interval::strided(0, sizes[x] - 1, st)
            })
            .collect(),
    );
    let idx: Vec<AffineExpr> = a
        .indices
        .iter()
        .map(|e| {
            let mut r = AffineExpr::constant(e.constant);
            for &x in &free {
                r.add_var(&s.loops[x].var, e.coeff(&s.loops[x].var));
            }
            r
        })
        .collect();
    tile_box.image(&vars, &idx, &Binding::new())
}

/// Working set with the first `fix_level` intra-tile loops (in permutation
/// order) fixed: 0 is the whole tile, 1 a sub-tile of the outermost
/// intra-tile loop.
pub fn working_set(a: &AccessRelation, t: &TiledScop, fix_level: usize) -> Result<IntBox, ScopError> {
    let fixed = &t.spec.perm[..fix_level.min(t.depth())];
    working_set_fixed(&t.base, a, &t.spec.sizes, fixed)
}

fn group_box(s: &Scop, group: &[usize], sizes: &[i64], fixed: &[usize]) -> Result<IntBox, ScopError> {
    let b = Binding::new();
    let mut acc = working_set_fixed(s, &s.accesses[group[0]], sizes, fixed)?;
    for &g in &group[1..] {
        acc = acc.union_bbox(&working_set_fixed(s, &s.accesses[g], sizes, fixed)?, &b)?;
    }
    Ok(acc)
}

fn box_lo_ext(bx: &IntBox) -> Result<(Vec<i64>, Vec<i64>), ScopError> {
    let b = Binding::new();
    Ok((bx.lexmin(&b)?, bx.extents(&b)?))
}

/// Kind, extents, origin and fixed loops for a group that shares one
/// linear part.
pub fn classify(s: &Scop, group: &[usize], t: &TiledScop) -> Result<BufferPlan, ScopError> {
    let sizes = &t.spec.sizes;
    let perm = &t.spec.perm;
    let d = s.depth();
    let first = &s.accesses[group[0]];
    let l = matrix(s, first);
    let r = l.len();
    let q0 = perm[0];
    let qi = perm[d - 1];
    let burst_inner = l[r - 1][qi] > 0;
    let reads = group.iter().any(|&g| !s.accesses[g].is_write());
    let writes = group.iter().any(|&g| s.accesses[g].is_write());
    let mk = |kind, extents: Vec<i64>, origin: Vec<i64>, fixed: Vec<usize>| BufferPlan {
        array: first.array.clone(),
        accesses: group.to_vec(),
        kind,
        padded_innermost_extent: *extents.last().unwrap(),
        extents,
        origin,
        fixed,
        halo_left: 0,
        port_width: 1,
        reads,
        writes,
        notes: Vec::new(),
    };

    if d == 1 {
        let (lo, ext) = box_lo_ext(&group_box(s, group, sizes, &[])?)?;
        if burst_inner && r == 1 {
            return Ok(mk(BufferKind::Line, ext, lo, vec![]));
        }
        return Ok(mk(BufferKind::Full, ext, lo, vec![]));
    }

    let (clo, cext) = box_lo_ext(&group_box(s, group, sizes, &[q0])?)?;
    if burst_inner && cext[..r - 1].iter().all(|&e| e == 1) {
        let line = vec![cext[r - 1]];
        return Ok(mk(BufferKind::Line, line, clo, vec![q0]));
    }
    let dim0_only_q0 = (0..d).all(|x| (x == q0) == (l[0][x] != 0));
    let q0_only_dim0 = (1..r).all(|k| l[k][q0] == 0);
    if r >= 2 && burst_inner && l[0][q0] == 1 && dim0_only_q0 && q0_only_dim0 && s.loops[q0].stride == 1 {
        return Ok(mk(BufferKind::Chunk, cext, clo, vec![q0]));
    }
    let (lo, ext) = box_lo_ext(&group_box(s, group, sizes, &[])?)?;
    Ok(mk(BufferKind::Full, ext, lo, vec![]))
}

fn nc_plan(s: &Scop, group: &[usize], why: String) -> BufferPlan {
    BufferPlan {
        array: s.accesses[group[0]].array.clone(),
        accesses: group.to_vec(),
        kind: BufferKind::Nc,
        extents: vec![],
        origin: vec![],
        fixed: vec![],
        halo_left: 0,
        padded_innermost_extent: 0,
        port_width: 1,
        reads: group.iter().any(|&g| !s.accesses[g].is_write()),
        writes: group.iter().any(|&g| s.accesses[g].is_write()),
        notes: vec![why],
    }
}

/// Each subscript is one loop index times a nonzero coefficient (or a
/// constant), and no loop drives two dimensions. Such writes touch a box
/// and hit every element at most once.
fn separable_injective(s: &Scop, a: &AccessRelation) -> bool {
    let l = matrix(s, a);
    let mut used = vec![false; s.depth()];
    for row in &l {
        let nz: Vec<usize> = (0..row.len()).filter(|&x| row[x] != 0).collect();
        if nz.len() > 1 {
            return false;
        }
        if let Some(&x) = nz.first() {
            if used[x] {
                return false;
            }
            used[x] = true;
        }
    }
    used.iter().all(|&u| u)
}

/// Accesses to a written array share one buffer, or none at all.
fn plan_written(s: &Scop, group: &[usize], t: &TiledScop) -> Result<BufferPlan, ScopError> {
    let b = Binding::new();
    let acc = |g: usize| &s.accesses[g];
    if let Some(&g) = group.iter().find(|&&g| !acc(g).same_shape(acc(group[0]))) {
        return Ok(nc_plan(s, group, format!("access {g} differs from access {} in more than a constant", group[0])));
    }
    let writes: Vec<usize> = group.iter().copied().filter(|&g| acc(g).is_write()).collect();
    if writes.iter().any(|&w| acc(w).indices != acc(writes[0]).indices) {
        return Ok(nc_plan(s, group, "writes with different subscripts".into()));
    }
    if !separable_injective(s, acc(writes[0])) {
        return Ok(nc_plan(s, group, "write subscript does not map the tile onto a box one-to-one".into()));
    }
    let sets: Vec<IntBox> = group
        .iter()
        .map(|&g| working_set_fixed(s, acc(g), &t.spec.sizes, &[]))
        .collect::<Result<_, _>>()?;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if sets[i].intersect(&sets[j], &b)?.is_empty(&b)? {
                return Ok(nc_plan(
                    s,
                    group,
                    format!("dependent accesses {} and {} have disjoint working sets", group[i], group[j]),
                ));
            }
        }
    }
    classify(s, group, t)
}

/// Buffers hold whole bounding boxes (unused slots included), so two
/// read-only groups are fusion candidates when their boxes overlap, even
/// if strided working sets interleave without sharing an element.
fn boxes_overlap(s: &Scop, a: &[usize], b: &[usize], sizes: &[i64]) -> Result<bool, ScopError> {
    let bd = Binding::new();
    let x = group_box(s, a, sizes, &[])?;
    let y = group_box(s, b, sizes, &[])?;
    let (xl, xh, yl, yh) = (x.lexmin(&bd)?, x.lexmax(&bd)?, y.lexmin(&bd)?, y.lexmax(&bd)?);
    Ok((0..xl.len()).all(|k| xl[k] <= yh[k] && yl[k] <= xh[k]))
}

/// Greedy pairwise fusion of read-only accesses to one array.
fn plan_read_only(s: &Scop, accesses: &[usize], t: &TiledScop) -> Result<Vec<BufferPlan>, ScopError> {
    // Subscript classes first: fusion only within one linear part.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &a in accesses {
        match groups
            .iter_mut()
            .find(|g| s.accesses[g[0]].indices == s.accesses[a].indices)
        {
            Some(g) => g.push(a),
            None => groups.push(vec![a]),
        }
    }
    let mut plans: Vec<BufferPlan> = groups
        .iter()
        .map(|g| classify(s, g, t))
        .collect::<Result<_, _>>()?;
    'outer: loop {
        for i in 0..plans.len() {
            for j in i + 1..plans.len() {
                let (a, b) = (&plans[i], &plans[j]);
                if !s.accesses[a.accesses[0]].same_shape(&s.accesses[b.accesses[0]]) {
                    continue;
                }
                if !boxes_overlap(s, &a.accesses, &b.accesses, &t.spec.sizes)? {
                    continue;
                }
                let mut members = a.accesses.clone();
                members.extend(&b.accesses);
                members.sort();
                let fused = classify(s, &members, t)?;
                let smaller = fused.cost() <= a.cost() + b.cost();
                let equal = a.extents == b.extents;
                if fused.kind != BufferKind::Nc && (smaller || equal) {
                    plans[i] = fused;
                    plans.remove(j);
                    continue 'outer;
                }
            }
        }
        break;
    }
    Ok(plans)
}

/// Buffer plans for one tiling.
pub fn plan_tiling(t: &TiledScop) -> Result<PermutationChoice, PlanError> {
    let s = &t.base;
    let mut plans = Vec::new();
    for arr in &s.arrays {
        let accesses: Vec<usize> = (0..s.accesses.len()).filter(|&g| s.accesses[g].array == arr.name).collect();
        if accesses.is_empty() {
            continue;
        }
        if accesses.iter().any(|&g| s.accesses[g].is_write()) {
            plans.push(plan_written(s, &accesses, t)?);
        } else {
            plans.extend(plan_read_only(s, &accesses, t)?);
        }
    }
    let total_cost = plans.iter().map(|p| p.cost()).sum();
    Ok(PermutationChoice {
        perm: t.spec.perm.clone(),
        plans,
        total_cost,
    })
}

/// Plan every legal permutation and pick the cheapest: lowest total cost,
/// then fewer NC, FULL and CHUNK buffers, then the lexicographically
/// smallest permutation. Returns all candidates and the chosen index.
pub fn select_permutation(s: &Scop, sizes: &[i64]) -> Result<(Vec<PermutationChoice>, usize), PlanError> {
    let perms = tiler::legal_permutations(s, sizes)?;
    let mut cands = Vec::new();
    for p in perms {
        let t = TiledScop::normalized(s, sizes, &p, true)?;
        cands.push(plan_tiling(&t)?);
    }
    let best = (0..cands.len()).min_by_key(|&i| cands[i].key()).expect("at least one permutation");
    Ok((cands, best))
}

pub fn check_port_width(w: i64) -> Result<(), PlanError> {
    if [1, 2, 4, 8, 16].contains(&w) {
        Ok(())
    } else {
        Err(PlanError::BadPortWidth(w))
    }
}

fn round_up(x: i64, w: i64) -> i64 {
    (x + w - 1) / w * w
}

/// Size the left halo and the padded innermost extent so that every DDR
/// burst of this buffer starts and ends on a multiple of `w` elements,
/// given that DDR rows are padded to a multiple of `w`.
///
/// The anchor's innermost coordinate must have the same residue modulo `w`
/// in every tile; otherwise the plan falls back to `w = 1` with a note.
pub fn add_halo(plan: &BufferPlan, w: i64, t: &TiledScop, b: &Binding) -> Result<BufferPlan, PlanError> {
    check_port_width(w)?;
    let mut p = plan.clone();
    if p.kind == BufferKind::Nc {
        return Ok(p);
    }
    let s = &t.base;
    let e_last = *p.extents.last().unwrap();
    p.port_width = 1;
    p.halo_left = 0;
    p.padded_innermost_extent = e_last;
    if w == 1 {
        return Ok(p);
    }
    let anchor = p.anchor(s, t);
    let last = anchor.last().unwrap();
    let mut residue = last.constant;
    let mut why = None;
    for (x, l) in s.loops.iter().enumerate() {
        let c = last.coeff(&tile_var(&l.var));
        if c == 0 {
            continue;
        }
        // t_x = lb_x + m·SZ_x; a fixed intra index moves in steps of its stride.
        if (c * t.spec.sizes[x]) % w != 0 {
            why = Some(format!("tile loop `{}` moves the anchor by {} per tile", tile_var(&l.var), c * t.spec.sizes[x]));
            break;
        }
        if p.fixed.contains(&x) && (c * l.stride) % w != 0 {
            why = Some(format!("loop `{}` moves the anchor by {} per step", l.var, c * l.stride));
            break;
        }
        match l.lower.eval_params(b) {
            Ok(lb) => residue += c * lb,
            Err(_) => {
                why = Some(format!("lower bound of `{}` has no value", l.var));
                break;
            }
        }
    }
    if why.is_none() {
        for (pn, c) in &last.param_coeffs {
            match b.get(pn) {
                Some(v) => residue += c * v,
                None => {
                    why = Some(format!("parameter `{pn}` has no value"));
                    break;
                }
            }
        }
    }
    match why {
        Some(reason) => p.notes.push(format!("burst alignment to {w} not possible ({reason}); using width 1")),
        None => {
            p.port_width = w;
            p.halo_left = residue.rem_euclid(w);
            p.padded_innermost_extent = round_up(e_last + p.halo_left, w);
        }
    }
    Ok(p)
}

/// Machine-readable summary of planning for every legal permutation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanReport {
    pub stencil: String,
    pub loops: Vec<String>,
    pub tile_sizes: Vec<i64>,
    pub port_width: i64,
    pub candidates: Vec<CandidateReport>,
    pub chosen: Vec<String>,
    pub chosen_total_cost: i64,
    pub buffers: Vec<HaloReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateReport {
    pub permutation: Vec<String>,
    pub groups: Vec<GroupReport>,
    pub total_cost: i64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupReport {
    pub array: String,
    pub accesses: Vec<String>,
    pub kind: BufferKind,
    pub extents: Vec<i64>,
    pub cost: i64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HaloReport {
    pub buffer: String,
    pub kind: BufferKind,
    pub extents: Vec<i64>,
    pub halo_left: i64,
    pub declared_extents: Vec<i64>,
    pub port_width: i64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

/// Buffer names: `A_buf` for the first buffer of `A`, then `A_buf2`, ...
pub fn buffer_names(plans: &[BufferPlan]) -> Vec<Option<String>> {
    let mut out = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for p in plans {
        if p.kind == BufferKind::Nc {
            out.push(None);
            continue;
        }
        let k = seen.iter().filter(|&&a| a == p.array).count();
        seen.push(&p.array);
        out.push(Some(if k == 0 {
            format!("{}_buf", p.array)
        } else {
            format!("{}_buf{}", p.array, k + 1)
        }));
    }
    out
}

pub fn access_text(a: &AccessRelation) -> String {
    let idx: Vec<String> = a.indices.iter().map(|e| e.to_string()).collect();
    format!("{}[{}]", a.array, idx.join(", "))
}

pub fn perm_names(s: &Scop, perm: &[usize]) -> Vec<String> {
    perm.iter().map(|&x| s.loops[x].var.clone()).collect()
}

impl PlanReport {
    pub fn new(
        s: &Scop,
        sizes: &[i64],
        w: i64,
        cands: &[PermutationChoice],
        chosen: usize,
        halos: &[BufferPlan],
    ) -> PlanReport {
        PlanReport {
            stencil: s.name.clone(),
            loops: s.loop_vars(),
            tile_sizes: sizes.to_vec(),
            port_width: w,
            candidates: cands
                .iter()
                .map(|c| CandidateReport {
                    permutation: perm_names(s, &c.perm),
                    groups: c
                        .plans
                        .iter()
                        .map(|p| GroupReport {
                            array: p.array.clone(),
                            accesses: p.accesses.iter().map(|&g| access_text(&s.accesses[g])).collect(),
                            kind: p.kind,
                            extents: p.extents.clone(),
                            cost: p.cost(),
                            notes: p.notes.clone(),
                        })
                        .collect(),
                    total_cost: c.total_cost,
                })
                .collect(),
            chosen: perm_names(s, &cands[chosen].perm),
            chosen_total_cost: cands[chosen].total_cost,
            buffers: halos
                .iter()
                .zip(buffer_names(halos))
                .filter_map(|(p, n)| n.map(|n| (p, n)))
                .map(|(p, name)| HaloReport {
                    buffer: name,
                    kind: p.kind,
                    extents: p.extents.clone(),
                    halo_left: p.halo_left,
                    declared_extents: p.declared_extents(),
                    port_width: p.port_width,
                    notes: p.notes.clone(),
                })
                .collect(),
        }
    }
}
