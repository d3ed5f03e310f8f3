//! Access redirection into buffers, ship placement around the intra-tile
//! nest, ship expansion into burst loops, and guards for padded writes.

use crate::ir::{
    BufferDecl, Cond, Endpoint, IExpr, LoopKind, LoopNode, MaskDim, Node, ShipOp, ShipRole, Stmt, TileProgram, VExpr,
};
use crate::planner::{buffer_names, BufferKind, BufferPlan};
use crate::scop::{AffineExpr, BodyStmt, Scop, ValueExpr};
use crate::tiler::{tile_var, TiledScop};

/// Test hook switch, on in normal compilation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShipgenOptions {
    /// Keep padded iterations away from DDR: guards on uncached accesses
    /// and flush masks trimmed to the domain. Off, padded results leak.
    pub guards: bool,
}

impl Default for ShipgenOptions {
    fn default() -> Self {
        ShipgenOptions { guards: true }
    }
}

/// Where each access of the SCoP goes after redirection, by access index.
///
/// Uncached accesses address DDR with every loop index `x` replaced by
/// `x + tx`; cached ones address their buffer relative to its anchor, with
/// the left halo added on the innermost dimension.
pub fn redirect(t: &TiledScop, plans: &[BufferPlan]) -> Vec<(Endpoint, Vec<AffineExpr>)> {
    let s = &t.base;
    let names = buffer_names(plans);
    let mut out = vec![None; s.accesses.len()];
    for (p, name) in plans.iter().zip(&names) {
        for &g in &p.accesses {
            let a = &s.accesses[g];
            out[g] = Some(match name {
                None => (Endpoint::Ddr(a.array.clone()), ddr_indices(t, &a.indices)),
                Some(n) => {
                    let mut idx = p.buffer_index(s, a);
                    if let Some(last) = idx.last_mut() {
                        *last = last.clone() + p.halo_left;
                    }
                    (Endpoint::Buf(n.clone()), idx)
                }
            });
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(g, r)| r.unwrap_or_else(|| panic!("access {g} is in no plan")))
        .collect()
}

fn ddr_indices(t: &TiledScop, idx: &[AffineExpr]) -> Vec<AffineExpr> {
    idx.iter()
        .map(|e| {
            let mut e = e.clone();
            for (x, l) in t.base.loops.iter().enumerate() {
                e = e.substitute(&l.var, &t.original_index(x));
            }
            e
        })
        .collect()
}

fn value(v: &ValueExpr, targets: &[(Endpoint, Vec<AffineExpr>)]) -> VExpr {
    match v {
        ValueExpr::Lit(x) => VExpr::Lit(*x),
        ValueExpr::Read(g) => VExpr::Load {
            src: targets[*g].0.clone(),
            indices: targets[*g].1.clone(),
            guard: None,
        },
        ValueExpr::Scalar(n) => VExpr::Scalar(n.clone()),
        ValueExpr::Neg(x) => VExpr::Neg(Box::new(value(x, targets))),
        ValueExpr::Bin(op, a, b) => VExpr::Bin(*op, Box::new(value(a, targets)), Box::new(value(b, targets))),
    }
}

fn unit(r: usize, k: usize, by: AffineExpr) -> Vec<AffineExpr> {
    (0..r)
        .map(|j| if j == k { by.clone() } else { AffineExpr::constant(0) })
        .collect()
}

fn add(a: &[AffineExpr], b: &[AffineExpr]) -> Vec<AffineExpr> {
    a.iter().zip(b).map(|(x, y)| x.clone() + y.clone()).collect()
}

/// Write-enable window of a write access over one tile intersected with
/// the domain (just the tile when `trim` is off). Loops in `fixed`
/// contribute their current value.
fn write_mask(t: &TiledScop, plan: &BufferPlan, w: &[AffineExpr], trim: bool) -> Vec<MaskDim> {
    let s = &t.base;
    w.iter()
        .map(|e| {
            let mut rest = AffineExpr::constant(e.constant);
            for (p, c) in &e.param_coeffs {
                rest.add_param(p, *c);
            }
            let driver = s.loops.iter().position(|l| e.coeff(&l.var) != 0);
            let Some(x) = driver else {
                return MaskDim { lo: rest.clone().into(), hi: rest.clone().into(), at: rest, step: 1 };
            };
            let l = &s.loops[x];
            let a = e.coeff(&l.var);
            let tv = AffineExpr::var(&tile_var(&l.var));
            if plan.fixed.contains(&x) {
                let at = rest + (tv + AffineExpr::var(&l.var)) * a;
                return MaskDim { lo: at.clone().into(), hi: at.clone().into(), at, step: 1 };
            }
            let at = rest.clone() + tv.clone() * a;
            let far = rest.clone() + (tv + (t.spec.sizes[x] - 1)) * a;
            let end = rest + l.upper.clone() * a;
            let bound = |v: Vec<IExpr>| if a > 0 { IExpr::Min(v) } else { IExpr::Max(v) };
            let other = if trim { bound(vec![far.into(), end.into()]) } else { far.into() };
            let (lo, hi) = if a > 0 { (at.clone().into(), other) } else { (other, at.clone().into()) };
            MaskDim { lo, hi, at, step: a.abs() * l.stride }
        })
        .collect()
}

/// Ships of one plan, by placement.
#[derive(Default)]
struct Placed {
    before_nest: Vec<ShipOp>,
    q0_top: Vec<ShipOp>,
    q1_top: Vec<ShipOp>,
    q0_end: Vec<ShipOp>,
    after_nest: Vec<ShipOp>,
}

/// The chunk's outermost intra-tile loop drives only the second buffer
/// dimension with unit coefficient, so the incoming slot can be filled
/// row by row just ahead of use.
fn progressive(s: &Scop, t: &TiledScop, plan: &BufferPlan) -> bool {
    let d = s.depth();
    let r = plan.extents.len();
    if d < 3 || r < 3 {
        return false;
    }
    let q1 = t.spec.perm[1];
    let a = &s.accesses[plan.accesses[0]];
    let v = &s.loops[q1].var;
    let row_only_q1 = s.loops.iter().all(|l| (l.var == *v) == (a.indices[1].coeff(&l.var) != 0));
    a.indices[1].coeff(v) == 1
        && row_only_q1
        && (0..r).all(|k| k == 1 || a.indices[k].coeff(v) == 0)
        && s.loops[q1].stride == 1
}

fn place(t: &TiledScop, plan: &BufferPlan, name: &str, trim: bool) -> Placed {
    let s = &t.base;
    let mut out = Placed::default();
    let r = s.array(&plan.array).unwrap().rank();
    let declared = plan.declared_extents();
    let buf = Endpoint::Buf(name.to_string());
    let ddr = Endpoint::Ddr(plan.array.clone());
    let mut anchor = plan.anchor(s, t);
    if let Some(last) = anchor.last_mut() {
        *last = last.clone() - plan.halo_left;
    }
    let zeros = |n: usize| vec![AffineExpr::constant(0); n];
    let write = s.accesses.iter().enumerate().find(|(g, a)| plan.accesses.contains(g) && a.is_write());
    let mask = write.map(|(_, w)| write_mask(t, plan, &w.indices, trim));
    let ship = |role, src: &Endpoint, so: Vec<AffineExpr>, dst: &Endpoint, dof: Vec<AffineExpr>, di, reps, ext: &[i64], comment: String| ShipOp {
        role,
        src: src.clone(),
        src_offset: so,
        dst: dst.clone(),
        dst_offset: dof,
        di,
        reps,
        extents: ext.to_vec(),
        mask: if role == ShipRole::Flush { mask.clone() } else { None },
        comment,
    };
    let rb = declared.len();
    let whole = |what: &str| format!("{what} {name}");

    match (plan.kind, plan.fixed.is_empty()) {
        (BufferKind::Nc, _) => {}
        (BufferKind::Full, _) | (BufferKind::Line, true) => {
            if plan.reads {
                out.before_nest.push(ship(ShipRole::Fill, &ddr, anchor.clone(), &buf, zeros(rb), rb, 1, &declared, whole("fill")));
            }
            if plan.writes {
                out.after_nest.push(ship(ShipRole::Flush, &buf, zeros(rb), &ddr, anchor.clone(), rb, 1, &declared, whole("flush")));
            }
        }
        (BufferKind::Line, false) => {
            if plan.reads {
                out.q0_top.push(ship(ShipRole::Fill, &ddr, anchor.clone(), &buf, zeros(1), 1, 1, &declared, format!("fill line of {name}")));
            }
            if plan.writes {
                out.q0_end.push(ship(ShipRole::Flush, &buf, zeros(1), &ddr, anchor.clone(), 1, 1, &declared, format!("flush line of {name}")));
            }
        }
        (BufferKind::Chunk, _) => {
            let q0 = t.spec.perm[0];
            let v0 = &s.loops[q0].var;
            let c = declared[0] - 1;
            let seg = &declared[1..];
            if plan.reads {
                if c >= 1 {
                    let start: Vec<AffineExpr> = anchor.iter().map(|e| e.substitute(v0, &AffineExpr::constant(0))).collect();
                    out.before_nest.push(ship(ShipRole::Fill, &ddr, start, &buf, zeros(r), r - 1, c, seg, format!("fill first {c} slot(s) of {name}")));
                }
                let slot = unit(r, 0, AffineExpr::constant(c));
                if progressive(s, t, plan) {
                    let q1 = t.spec.perm[1];
                    let v1 = AffineExpr::var(&s.loops[q1].var);
                    let c1 = declared[1] - t.spec.sizes[q1];
                    let rows = &declared[2..];
                    if c1 >= 1 {
                        out.q0_top.push(ship(ShipRole::Fill, &ddr, add(&anchor, &slot), &buf, slot.clone(), r - 2, c1, rows, format!("fill first {c1} row(s) of slot {c} of {name}")));
                    }
                    let row = add(&slot, &unit(r, 1, v1 + c1));
                    out.q1_top.push(ship(ShipRole::Fill, &ddr, add(&anchor, &row), &buf, row, r - 2, 1, rows, format!("fill next row of slot {c} of {name}")));
                } else {
                    out.q0_top.push(ship(ShipRole::Fill, &ddr, add(&anchor, &slot), &buf, slot, r - 1, 1, seg, format!("fill slot {c} of {name}")));
                }
            }
            if plan.writes {
                let (_, w) = write.unwrap();
                let kw = w.indices[0].constant - plan.origin[0];
                let slot = unit(r, 0, AffineExpr::constant(kw));
                out.q0_end.push(ship(ShipRole::Flush, &buf, slot.clone(), &ddr, add(&anchor, &slot), r - 1, 1, seg, format!("flush slot {kw} of {name}")));
            }
            if c >= 1 && plan.reads {
                out.q0_end.push(ship(ShipRole::Shift, &buf, unit(r, 0, AffineExpr::constant(1)), &buf, zeros(r), r - 1, c, seg, format!("shift {name} down one slot")));
            }
        }
    }
    out
}

/// Build the tile program for a normalized tiling and its (haloed) plans.
pub fn plan_ships(t: &TiledScop, plans: &[BufferPlan], port_width: i64, opts: ShipgenOptions) -> TileProgram {
    let s = &t.base;
    let d = s.depth();
    let names = buffer_names(plans);
    let targets = redirect(t, plans);
    let mut decls = Vec::new();
    let mut placed = Vec::new();
    for (p, n) in plans.iter().zip(&names) {
        if let Some(n) = n {
            decls.push(BufferDecl {
                name: n.clone(),
                array: p.array.clone(),
                kind: p.kind,
                elem: s.array(&p.array).unwrap().elem.clone(),
                extents: p.declared_extents(),
                halo_left: p.halo_left,
                port_width: p.port_width,
            });
            placed.push(place(t, p, n, opts.guards));
        }
    }
    let gather = |f: fn(&Placed) -> &Vec<ShipOp>| -> Vec<Node> {
        placed.iter().flat_map(|p| f(p).iter().cloned().map(Node::Ship)).collect()
    };

    let body: Vec<Node> = s
        .body
        .iter()
        .map(|st| {
            Node::Stmt(match st {
                BodyStmt::Let { name, value: v } => Stmt::Let { name: name.clone(), value: value(v, &targets) },
                BodyStmt::Assign { write, value: v } => Stmt::Store {
                    dst: targets[*write].0.clone(),
                    indices: targets[*write].1.clone(),
                    value: value(v, &targets),
                    guard: None,
                },
            })
        })
        .collect();

    // Intra-tile nest, innermost first.
    let mut inner = body;
    for level in (0..d).rev() {
        let x = t.spec.perm[level];
        let l = &s.loops[x];
        let tv = AffineExpr::var(&tile_var(&l.var));
        let z = t.spec.sizes[x];
        let padded = t.padded && level == d - 1;
        let real = l.upper.clone() - tv;
        let mut node_body = Vec::new();
        if level == 0 && d > 1 {
            node_body.extend(gather(|p| &p.q0_top));
        }
        if level == 1 && d > 2 {
            node_body.extend(gather(|p| &p.q1_top));
        }
        node_body.extend(inner);
        if level == 0 && d > 1 {
            node_body.extend(gather(|p| &p.q0_end));
        }
        inner = vec![Node::Loop(LoopNode {
            var: l.var.clone(),
            kind: LoopKind::Intra,
            lower: IExpr::constant(0),
            upper: if padded {
                IExpr::constant(z - 1)
            } else {
                IExpr::Min(vec![IExpr::constant(z - 1), real.clone().into()])
            },
            step: l.stride,
            pipeline: if d == 1 { true } else { level == d - 2 },
            padded,
            real_upper: padded.then_some(real),
            body: node_body,
        })];
    }

    let mut tile_body = Vec::new();
    if !decls.is_empty() {
        tile_body.push(Node::Declare(decls.clone()));
    }
    tile_body.extend(gather(|p| &p.before_nest));
    tile_body.extend(inner);
    tile_body.extend(gather(|p| &p.after_nest));

    let mut nest = tile_body;
    for x in (0..d).rev() {
        let l = &s.loops[x];
        nest = vec![Node::Loop(LoopNode {
            var: tile_var(&l.var),
            kind: LoopKind::Tile,
            lower: l.lower.clone().into(),
            upper: l.upper.clone().into(),
            step: t.spec.sizes[x],
            pipeline: false,
            padded: false,
            real_upper: None,
            body: nest,
        })];
    }

    let tp = TileProgram {
        name: s.name.clone(),
        params: s.params.clone(),
        arrays: s.arrays.clone(),
        tile_sizes: t.spec.sizes.clone(),
        permutation: t.spec.perm.iter().map(|&x| s.loops[x].var.clone()).collect(),
        port_width,
        padded: t.padded,
        buffers: decls,
        body: nest,
    };
    if opts.guards {
        guard_padded_writes(&tp)
    } else {
        tp
    }
}

/// Keep padded iterations away from DDR: stores to DDR get a domain guard,
/// and loads from DDR yield NaN instead of touching memory. Cached writes
/// stay unguarded; their flushes are masked to the domain instead.
pub fn guard_padded_writes(tp: &TileProgram) -> TileProgram {
    fn guard_value(v: &mut VExpr, g: &Cond) {
        match v {
            VExpr::Load { src: Endpoint::Ddr(_), guard, .. } => *guard = Some(g.clone()),
            VExpr::Neg(x) => guard_value(x, g),
            VExpr::Bin(_, a, b) => {
                guard_value(a, g);
                guard_value(b, g);
            }
            _ => {}
        }
    }
    fn go(nodes: &mut [Node], g: Option<&Cond>) {
        for n in nodes {
            match n {
                Node::Loop(l) => {
                    let own = l.real_upper.as_ref().map(|r| Cond { lhs: AffineExpr::var(&l.var), rhs: r.clone() });
                    let g = own.as_ref().or(g);
                    go(&mut l.body, g);
                }
                Node::Stmt(st) => {
                    if let Some(g) = g {
                        match st {
                            Stmt::Let { value, .. } => guard_value(value, g),
                            Stmt::Store { dst, value, guard, .. } => {
                                guard_value(value, g);
                                if dst.is_ddr() {
                                    *guard = Some(g.clone());
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }
    let mut out = tp.clone();
    go(&mut out.body, None);
    out
}

/// A ship unrolled into nested segment loops around one burst copy.
///
/// Loop variables are `sf_r` for the repetition and `sf_s0`, `sf_s1`, ...
/// for the segment dimensions above the burst; `src` and `dst` give the
/// first element of each burst in terms of them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShipNest {
    pub reps: i64,
    /// Trip counts of the segment loops, outermost first.
    pub segments: Vec<i64>,
    /// Burst length.
    pub len: i64,
    pub src: Vec<AffineExpr>,
    pub dst: Vec<AffineExpr>,
}

pub const REP_VAR: &str = "sf_r";

pub fn seg_var(k: usize) -> String {
    format!("sf_s{k}")
}

fn burst_start(offset: &[AffineExpr], di: usize, reps: i64) -> Vec<AffineExpr> {
    let rank = offset.len();
    assert!(di >= 1 && di <= rank, "segment of {di} dimensions in rank {rank}");
    assert!(reps == 1 || di < rank, "repetitions need a dimension above the segment");
    offset
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut e = e.clone();
            if reps > 1 && k + 1 + di == rank {
                e = e + AffineExpr::var(REP_VAR);
            }
            if k + di >= rank && k + 1 < rank {
                e = e + AffineExpr::var(&seg_var(k + di - rank));
            }
            e
        })
        .collect()
}

/// Expand a ship into `reps` repetitions of `∏ extents[..di-1]` bursts of
/// `extents[di-1]` elements.
pub fn expand_ship(op: &ShipOp) -> ShipNest {
    assert_eq!(op.extents.len(), op.di);
    ShipNest {
        reps: op.reps,
        segments: op.extents[..op.di - 1].to_vec(),
        len: op.extents[op.di - 1],
        src: burst_start(&op.src_offset, op.di, op.reps),
        dst: burst_start(&op.dst_offset, op.di, op.reps),
    }
}
