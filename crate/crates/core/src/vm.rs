//! Reference interpreter for original SCoPs, tiled schedules and tile
//! programs, with a burst recorder and memory-hygiene checks.
//!
//! All arithmetic is `f64`, whatever element type the source declares.
//! Buffers start out holding a quiet NaN with a recognizable payload, so a
//! value that was never shipped in can be told apart from a NaN produced
//! by the stencil itself.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{ddr_pitch, Endpoint, Env, LoopKind, LoopNode, Node, ShipOp, ShipRole, Stmt, TileProgram, VExpr};
use crate::scop::{AffineExpr, Binding, BodyStmt, Scop, ScopError, ValueExpr};
use crate::shipgen::{expand_ship, seg_var, REP_VAR};
use crate::tiler::{TileError, TiledScop};

pub const SENTINEL_BITS: u64 = 0x7ff8_0000_dead_beef;

pub fn sentinel() -> f64 {
    f64::from_bits(SENTINEL_BITS)
}

pub fn is_sentinel(x: f64) -> bool {
    x.to_bits() == SENTINEL_BITS
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VmError {
    #[error(transparent)]
    Scop(#[from] ScopError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error("input for `{0}` is missing or has the wrong size")]
    BadInput(String),
    #[error("access to `{array}` at {index:?} is out of bounds")]
    OutOfBounds { array: String, index: Vec<i64> },
    #[error("buffer `{buffer}` accessed at {index:?}, outside its extents")]
    BufferBounds { buffer: String, index: Vec<i64> },
    #[error("scalar `{0}` read before assignment")]
    UnsetScalar(String),
    #[error("sentinel value flushed into `{array}` at {index:?}")]
    SentinelLeak { array: String, index: Vec<i64> },
    #[error("write to `{array}` at {index:?} is outside the original write footprint")]
    OutOfFootprint { array: String, index: Vec<i64> },
    #[error("buffer `{buffer}` read at {index:?} before anything was shipped there")]
    UninitializedRead { buffer: String, index: Vec<i64> },
}

/// Array contents in row-major order without padding, keyed by name.
pub type Arrays = BTreeMap<String, Vec<f64>>;

/// Positions (row-major, unpadded) each array receives writes at.
pub type Footprint = BTreeMap<String, Vec<bool>>;

fn row_major(extents: &[i64], idx: &[i64]) -> Option<usize> {
    let mut lin = 0i64;
    for (&e, &i) in extents.iter().zip(idx) {
        if i < 0 || i >= e {
            return None;
        }
        lin = lin * e + i;
    }
    Some(lin as usize)
}

/// Deterministic inputs in `[-1, 1)` for every array.
pub fn random_inputs(s: &Scop, b: &Binding, seed: u64) -> Result<Arrays, VmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Arrays::new();
    for a in &s.arrays {
        let n: i64 = s.array_extents(&a.name, b)?.iter().product();
        out.insert(a.name.clone(), (0..n.max(0)).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    Ok(out)
}

fn check_inputs(arrays: &[crate::scop::ArrayInfo], b: &Binding, inputs: &Arrays) -> Result<BTreeMap<String, Vec<i64>>, VmError> {
    let mut ext = BTreeMap::new();
    for a in arrays {
        let e: Vec<i64> = a.extents.iter().map(|x| x.eval_params(b)).collect::<Result<_, _>>()?;
        let n: i64 = e.iter().product();
        match inputs.get(&a.name) {
            Some(v) if v.len() as i64 == n.max(0) => {}
            _ => return Err(VmError::BadInput(a.name.clone())),
        }
        ext.insert(a.name.clone(), e);
    }
    Ok(ext)
}

/// Evaluate a statement body at one iteration, with reads and writes going
/// straight to the arrays.
struct Direct<'a> {
    s: &'a Scop,
    b: &'a Binding,
    ext: BTreeMap<String, Vec<i64>>,
    mem: Arrays,
    written: Footprint,
}

impl Direct<'_> {
    fn index(&self, g: usize, env: &[(String, i64)]) -> Result<(usize, Vec<i64>), VmError> {
        let a = &self.s.accesses[g];
        let idx: Vec<i64> = a
            .indices
            .iter()
            .map(|e| e.eval_with(|v| env.iter().find(|(n, _)| n == v).map(|(_, x)| *x), self.b))
            .collect::<Result<_, _>>()?;
        let lin = row_major(&self.ext[&a.array], &idx).ok_or_else(|| VmError::OutOfBounds {
            array: a.array.clone(),
            index: idx.clone(),
        })?;
        Ok((lin, idx))
    }

    fn value(&self, v: &ValueExpr, env: &[(String, i64)], scalars: &[(String, f64)]) -> Result<f64, VmError> {
        Ok(match v {
            ValueExpr::Lit(x) => *x,
            ValueExpr::Read(g) => {
                let (lin, _) = self.index(*g, env)?;
                self.mem[&self.s.accesses[*g].array][lin]
            }
            ValueExpr::Scalar(n) => scalars
                .iter()
                .rev()
                .find(|(m, _)| m == n)
                .map(|(_, x)| *x)
                .ok_or_else(|| VmError::UnsetScalar(n.clone()))?,
            ValueExpr::Neg(x) => -self.value(x, env, scalars)?,
            ValueExpr::Bin(op, a, b) => op.apply(self.value(a, env, scalars)?, self.value(b, env, scalars)?),
        })
    }

    fn iteration(&mut self, env: &[(String, i64)]) -> Result<(), VmError> {
        let mut scalars: Vec<(String, f64)> = Vec::new();
        for st in &self.s.body {
            match st {
                BodyStmt::Let { name, value } => {
                    let x = self.value(value, env, &scalars)?;
                    scalars.push((name.clone(), x));
                }
                BodyStmt::Assign { write, value } => {
                    let x = self.value(value, env, &scalars)?;
                    let (lin, _) = self.index(*write, env)?;
                    let arr = &self.s.accesses[*write].array;
                    self.mem.get_mut(arr).unwrap()[lin] = x;
                    self.written.get_mut(arr).unwrap()[lin] = true;
                }
            }
        }
        Ok(())
    }
}

fn direct<'a>(s: &'a Scop, b: &'a Binding, inputs: &Arrays) -> Result<Direct<'a>, VmError> {
    let ext = check_inputs(&s.arrays, b, inputs)?;
    let written = inputs.iter().map(|(k, v)| (k.clone(), vec![false; v.len()])).collect();
    Ok(Direct {
        s,
        b,
        ext,
        mem: inputs.clone(),
        written,
    })
}

/// Execute the original nest in source order. Returns the final arrays
/// and the positions that were written.
pub fn run_original(s: &Scop, b: &Binding, inputs: &Arrays) -> Result<(Arrays, Footprint), VmError> {
    let mut m = direct(s, b, inputs)?;
    let bounds = s.loop_bounds(b)?;
    let vars = s.loop_vars();
    let mut env: Vec<(String, i64)> = Vec::new();
    fn go(m: &mut Direct, bounds: &[(i64, i64)], vars: &[String], strides: &[i64], env: &mut Vec<(String, i64)>) -> Result<(), VmError> {
        let k = env.len();
        if k == vars.len() {
            return m.iteration(env);
        }
        let (lo, hi) = bounds[k];
        let mut x = lo;
        while x <= hi {
            env.push((vars[k].clone(), x));
            go(m, bounds, vars, strides, env)?;
            env.pop();
            x += strides[k];
        }
        Ok(())
    }
    let strides: Vec<i64> = s.loops.iter().map(|l| l.stride).collect();
    go(&mut m, &bounds, &vars, &strides, &mut env)?;
    Ok((m.mem, m.written))
}

/// Execute the tiled schedule with the original body and no buffers;
/// padded points are skipped.
pub fn run_tiled(t: &TiledScop, b: &Binding, inputs: &Arrays) -> Result<Arrays, VmError> {
    let s = &t.base;
    let mut m = direct(s, b, inputs)?;
    let vars = s.loop_vars();
    for p in t.points(b)? {
        if p.padded {
            continue;
        }
        let env: Vec<(String, i64)> = vars.iter().cloned().zip(p.iter.iter().copied()).collect();
        m.iteration(&env)?;
    }
    Ok(m.mem)
}

/// One burst copy as seen on the bus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Burst {
    pub role: ShipRole,
    /// DDR array touched, `None` for buffer-to-buffer shifts.
    pub array: Option<String>,
    pub buffer: String,
    /// Element offset of the first element: in the padded DDR layout, or
    /// in the buffer for shifts.
    pub offset: i64,
    pub len: i64,
    /// Elements actually transferred (write-enabled ones for flushes).
    pub moved: i64,
    pub width: i64,
    /// Sequence number of the tile the burst belongs to.
    pub tile: u64,
    /// Value of the outermost intra-tile index, inside that loop.
    pub tick: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferCounts {
    pub fill_elements: i64,
    pub flush_elements: i64,
    pub shift_elements: i64,
    pub fill_bursts: i64,
    pub flush_bursts: i64,
    pub shift_segments: i64,
}

/// Aggregated shipment and execution counts of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub buffers: BTreeMap<String, BufferCounts>,
    pub ddr_bursts: i64,
    /// `Σ ceil(len / width)` over DDR bursts.
    pub ddr_beats: i64,
    pub nc_reads: i64,
    pub nc_writes: i64,
    /// Executions of innermost intra-tile loops and their total trip count.
    pub innermost_runs: i64,
    pub innermost_iterations: i64,
    pub padded_iterations: i64,
    pub guard_skips: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShipTrace {
    pub bursts: Vec<Burst>,
    pub counts: Counts,
}

impl ShipTrace {
    /// Line-oriented dump: `burstcpy KIND offset length target`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for b in &self.bursts {
            let target = b.array.as_deref().unwrap_or(&b.buffer);
            out.push_str(&format!("burstcpy {} {} {} {}\n", b.role.name(), b.offset, b.len, target));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstViolation {
    pub array: String,
    pub offset: i64,
    pub len: i64,
}

/// DDR bursts whose offset or length is not a multiple of `w`; shifts are
/// exempt.
pub fn check_bursts(trace: &ShipTrace, w: i64) -> Vec<BurstViolation> {
    trace
        .bursts
        .iter()
        .filter_map(|b| {
            let a = b.array.as_ref()?;
            (b.offset % w != 0 || b.len % w != 0).then(|| BurstViolation {
                array: a.clone(),
                offset: b.offset,
                len: b.len,
            })
        })
        .collect()
}

struct Ddr {
    extents: Vec<i64>,
    pitch: i64,
    data: Vec<f64>,
}

impl Ddr {
    fn dims(&self) -> Vec<i64> {
        let mut d = self.extents.clone();
        if let Some(l) = d.last_mut() {
            *l = self.pitch;
        }
        d
    }

    /// Linear offset in the padded layout; the innermost index may reach
    /// into the row padding.
    fn offset(&self, idx: &[i64]) -> Option<usize> {
        row_major(&self.dims(), idx)
    }

    fn logical(&self, idx: &[i64]) -> Option<usize> {
        row_major(&self.extents, idx).and_then(|_| self.offset(idx))
    }
}

struct Buffer {
    extents: Vec<i64>,
    data: Vec<f64>,
    filled: Vec<bool>,
    width: i64,
}

struct Interp<'a> {
    ddr: BTreeMap<String, Ddr>,
    bufs: BTreeMap<String, Buffer>,
    footprint: Option<&'a Footprint>,
    trace: ShipTrace,
    record: bool,
    dry: bool,
    scalars: Vec<(String, f64)>,
    tile: u64,
    tick: Option<i64>,
    padded: bool,
}

fn eval_all(env: &Env, xs: &[AffineExpr]) -> Result<Vec<i64>, VmError> {
    Ok(xs.iter().map(|x| env.eval(x)).collect::<Result<_, _>>()?)
}

fn has_ddr_access(nodes: &[Node]) -> bool {
    fn v(e: &VExpr) -> bool {
        match e {
            VExpr::Load { src, .. } => src.is_ddr(),
            VExpr::Neg(x) => v(x),
            VExpr::Bin(_, a, b) => v(a) || v(b),
            _ => false,
        }
    }
    nodes.iter().any(|n| match n {
        Node::Stmt(Stmt::Let { value, .. }) => v(value),
        Node::Stmt(Stmt::Store { dst, value, .. }) => dst.is_ddr() || v(value),
        Node::Loop(l) => has_ddr_access(&l.body),
        _ => false,
    })
}

impl<'a> Interp<'a> {
    fn new(tp: &'a TileProgram, b: &Binding, inputs: Option<&Arrays>) -> Result<Self, VmError> {
        let mut ddr = BTreeMap::new();
        for a in &tp.arrays {
            let extents: Vec<i64> = a.extents.iter().map(|x| x.eval_params(b)).collect::<Result<_, _>>()?;
            let pitch = ddr_pitch(*extents.last().unwrap_or(&1), tp.port_width);
            let mut d = Ddr {
                extents: extents.clone(),
                pitch,
                data: Vec::new(),
            };
            if let Some(inputs) = inputs {
                let total: i64 = d.dims().iter().product();
                d.data = vec![sentinel(); total.max(0) as usize];
                let src = &inputs[&a.name];
                let mut idx = vec![0i64; extents.len()];
                for &x in src.iter() {
                    let off = d.offset(&idx).unwrap();
                    d.data[off] = x;
                    // Odometer over the logical extents.
                    for k in (0..idx.len()).rev() {
                        idx[k] += 1;
                        if idx[k] < extents[k] {
                            break;
                        }
                        idx[k] = 0;
                    }
                }
            }
            ddr.insert(a.name.clone(), d);
        }
        Ok(Interp {
            ddr,
            bufs: BTreeMap::new(),
            footprint: None,
            trace: ShipTrace::default(),
            record: true,
            dry: inputs.is_none(),
            scalars: Vec::new(),
            tile: 0,
            tick: None,
            padded: false,
        })
    }

    fn outputs(&self) -> Arrays {
        let mut out = Arrays::new();
        for (name, d) in &self.ddr {
            let n: i64 = d.extents.iter().product();
            let mut v = Vec::with_capacity(n.max(0) as usize);
            let mut idx = vec![0i64; d.extents.len()];
            for _ in 0..n.max(0) {
                v.push(d.data[d.offset(&idx).unwrap()]);
                for k in (0..idx.len()).rev() {
                    idx[k] += 1;
                    if idx[k] < d.extents[k] {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            out.insert(name.clone(), v);
        }
        out
    }

    fn nodes(&mut self, nodes: &[Node], env: &mut Env) -> Result<(), VmError> {
        for n in nodes {
            match n {
                Node::Loop(l) => self.run_loop(l, env)?,
                Node::Declare(decls) => {
                    self.tile += 1;
                    for d in decls {
                        let n: i64 = d.extents.iter().product();
                        let len = if self.dry { 0 } else { n as usize };
                        self.bufs.insert(
                            d.name.clone(),
                            Buffer {
                                extents: d.extents.clone(),
                                data: vec![sentinel(); len],
                                filled: vec![false; len],
                                width: d.port_width,
                            },
                        );
                    }
                }
                Node::Ship(op) => self.ship(op, env)?,
                Node::Stmt(st) => {
                    if self.dry {
                        self.count_stmt(st, env)?;
                    } else {
                        self.stmt(st, env)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn run_loop(&mut self, l: &LoopNode, env: &mut Env) -> Result<(), VmError> {
        let lo = l.lower.eval(env)?;
        let hi = l.upper.eval(env)?;
        let innermost = !l.body.iter().any(|n| matches!(n, Node::Loop(_)));
        let trip = if hi >= lo { (hi - lo) / l.step + 1 } else { 0 };
        if innermost && l.kind == LoopKind::Intra {
            self.trace.counts.innermost_runs += 1;
            self.trace.counts.innermost_iterations += trip;
            if let Some(r) = &l.real_upper {
                let real = env.eval(r)?;
                let beyond = if hi > real { (hi - real.max(lo - 1) + l.step - 1) / l.step } else { 0 };
                self.trace.counts.padded_iterations += beyond.min(trip);
            }
            // Nothing observable in a dry walk unless DDR is touched.
            if self.dry && !has_ddr_access(&l.body) && !l.body.iter().any(|n| matches!(n, Node::Ship(_))) {
                return Ok(());
            }
        }
        let outer_tick = self.tick;
        let is_q0 = l.kind == LoopKind::Intra && self.tick.is_none();
        let was_padded = self.padded;
        env.push(&l.var, lo);
        let mut x = lo;
        while x <= hi {
            env.set_last(x);
            if is_q0 {
                self.tick = Some(x);
            }
            if let Some(r) = &l.real_upper {
                self.padded = was_padded || x > env.eval(r)?;
            }
            self.nodes(&l.body, env)?;
            x += l.step;
        }
        env.pop();
        self.padded = was_padded;
        if is_q0 {
            self.tick = outer_tick;
        }
        Ok(())
    }

    fn buf_offset(&self, name: &str, idx: &[i64]) -> Result<usize, VmError> {
        let b = &self.bufs[name];
        row_major(&b.extents, idx).ok_or_else(|| VmError::BufferBounds {
            buffer: name.to_string(),
            index: idx.to_vec(),
        })
    }

    fn load(&mut self, src: &Endpoint, idx: &[AffineExpr], guard: &Option<crate::ir::Cond>, env: &Env) -> Result<f64, VmError> {
        if let Some(g) = guard {
            if !g.holds(env)? {
                self.trace.counts.guard_skips += 1;
                return Ok(sentinel());
            }
        }
        let idx = eval_all(env, idx)?;
        match src {
            Endpoint::Ddr(a) => {
                self.trace.counts.nc_reads += 1;
                let d = &self.ddr[a];
                let off = d.logical(&idx).ok_or_else(|| VmError::OutOfBounds { array: a.clone(), index: idx.clone() })?;
                Ok(d.data[off])
            }
            Endpoint::Buf(n) => {
                let off = self.buf_offset(n, &idx)?;
                let b = &self.bufs[n];
                if !b.filled[off] && !self.padded {
                    return Err(VmError::UninitializedRead { buffer: n.clone(), index: idx });
                }
                Ok(b.data[off])
            }
        }
    }

    fn value(&mut self, v: &VExpr, env: &Env) -> Result<f64, VmError> {
        Ok(match v {
            VExpr::Lit(x) => *x,
            VExpr::Load { src, indices, guard } => self.load(src, indices, guard, env)?,
            VExpr::Scalar(n) => self
                .scalars
                .iter()
                .rev()
                .find(|(m, _)| m == n)
                .map(|(_, x)| *x)
                .ok_or_else(|| VmError::UnsetScalar(n.clone()))?,
            VExpr::Neg(x) => -self.value(x, env)?,
            VExpr::Bin(op, a, b) => {
                let x = self.value(a, env)?;
                op.apply(x, self.value(b, env)?)
            }
        })
    }

    fn ddr_write(&mut self, a: &str, idx: &[i64], x: f64) -> Result<(), VmError> {
        let d = self.ddr.get_mut(a).unwrap();
        let off = d.logical(idx).ok_or_else(|| VmError::OutOfBounds { array: a.to_string(), index: idx.to_vec() })?;
        if let Some(fp) = self.footprint {
            let lin = row_major(&d.extents, idx).unwrap();
            if !fp[a][lin] {
                return Err(VmError::OutOfFootprint { array: a.to_string(), index: idx.to_vec() });
            }
        }
        d.data[off] = x;
        Ok(())
    }

    fn stmt(&mut self, st: &Stmt, env: &Env) -> Result<(), VmError> {
        match st {
            Stmt::Let { name, value } => {
                let x = self.value(value, env)?;
                self.scalars.retain(|(n, _)| n != name);
                self.scalars.push((name.clone(), x));
            }
            Stmt::Store { dst, indices, value, guard } => {
                if let Some(g) = guard {
                    if !g.holds(env)? {
                        self.trace.counts.guard_skips += 1;
                        return Ok(());
                    }
                }
                let x = self.value(value, env)?;
                let idx = eval_all(env, indices)?;
                match dst {
                    Endpoint::Ddr(a) => {
                        self.trace.counts.nc_writes += 1;
                        self.ddr_write(a, &idx, x)?;
                    }
                    Endpoint::Buf(n) => {
                        let off = self.buf_offset(n, &idx)?;
                        let b = self.bufs.get_mut(n).unwrap();
                        b.data[off] = x;
                        b.filled[off] = true;
                    }
                }
            }
        }
        Ok(())
    }

    /// Dry walk: count DDR accesses a statement would make.
    fn count_stmt(&mut self, st: &Stmt, env: &Env) -> Result<(), VmError> {
        fn loads(v: &VExpr, env: &Env, c: &mut Counts) -> Result<(), VmError> {
            match v {
                VExpr::Load { src: Endpoint::Ddr(_), guard, .. } => {
                    match guard {
                        Some(g) if !g.holds(env)? => c.guard_skips += 1,
                        _ => c.nc_reads += 1,
                    }
                }
                VExpr::Neg(x) => loads(x, env, c)?,
                VExpr::Bin(_, a, b) => {
                    loads(a, env, c)?;
                    loads(b, env, c)?;
                }
                _ => {}
            }
            Ok(())
        }
        let c = &mut self.trace.counts;
        match st {
            Stmt::Let { value, .. } => loads(value, env, c),
            Stmt::Store { dst, value, guard, .. } => {
                if let Some(g) = guard {
                    if !g.holds(env)? {
                        c.guard_skips += 1;
                        return Ok(());
                    }
                }
                loads(value, env, c)?;
                if dst.is_ddr() {
                    c.nc_writes += 1;
                }
                Ok(())
            }
        }
    }

    fn ship(&mut self, op: &ShipOp, env: &mut Env) -> Result<(), VmError> {
        let nest = expand_ship(op);
        let mask = match &op.mask {
            Some(m) => Some(
                m.iter()
                    .map(|d| Ok((d.lo.eval(env)?, d.hi.eval(env)?, env.eval(&d.at)?, d.step)))
                    .collect::<Result<Vec<_>, VmError>>()?,
            ),
            None => None,
        };
        let segs = nest.segments.len();
        env.push(REP_VAR, 0);
        for k in 0..segs {
            env.push(&seg_var(k), 0);
        }
        let total: i64 = nest.segments.iter().product::<i64>() * nest.reps;
        for n in 0..total {
            // Decompose n into (r, s_0, .., s_{segs-1}), last segment fastest.
            let mut rest = n;
            let mut vals = vec![0; segs];
            for k in (0..segs).rev() {
                vals[k] = rest % nest.segments[k];
                rest /= nest.segments[k];
            }
            let depth = segs + 1;
            // Env stack: [.., r, s_0, .., s_{segs-1}]; rewrite in place.
            for _ in 0..depth {
                env.pop();
            }
            env.push(REP_VAR, rest);
            for (k, v) in vals.iter().enumerate() {
                env.push(&seg_var(k), *v);
            }
            let src = eval_all(env, &nest.src)?;
            let dst = eval_all(env, &nest.dst)?;
            self.burst(op, &src, &dst, nest.len, mask.as_deref())?;
        }
        for _ in 0..=segs {
            env.pop();
        }
        Ok(())
    }

    fn record(&mut self, b: Burst) {
        let c = &mut self.trace.counts;
        let e = c.buffers.entry(b.buffer.clone()).or_default();
        match b.role {
            ShipRole::Fill => {
                e.fill_elements += b.moved;
                e.fill_bursts += 1;
            }
            ShipRole::Flush => {
                e.flush_elements += b.moved;
                e.flush_bursts += 1;
            }
            ShipRole::Shift => {
                e.shift_elements += b.moved;
                e.shift_segments += 1;
            }
        }
        if b.array.is_some() {
            c.ddr_bursts += 1;
            c.ddr_beats += (b.len + b.width - 1) / b.width;
        }
        if self.record {
            self.trace.bursts.push(b);
        }
    }

    fn burst(&mut self, op: &ShipOp, src: &[i64], dst: &[i64], len: i64, mask: Option<&[(i64, i64, i64, i64)]>) -> Result<(), VmError> {
        let (tile, tick) = (self.tile, self.tick);
        match (&op.src, &op.dst) {
            (Endpoint::Buf(s), Endpoint::Buf(d)) => {
                assert_eq!(s, d, "shifts stay within one buffer");
                if !self.dry {
                    let so = self.buf_offset(s, src)?;
                    let mut last = dst.to_vec();
                    *last.last_mut().unwrap() += len - 1;
                    self.buf_offset(d, &last)?;
                    let doff = self.buf_offset(d, dst)?;
                    let b = self.bufs.get_mut(s).unwrap();
                    for e in 0..len as usize {
                        b.data[doff + e] = b.data[so + e];
                        b.filled[doff + e] = b.filled[so + e];
                    }
                }
                let offset = self.buf_offset(d, dst)? as i64;
                let width = self.bufs[d].width;
                self.record(Burst { role: op.role, array: None, buffer: d.clone(), offset, len, moved: len, width, tile, tick });
            }
            (Endpoint::Ddr(a), Endpoint::Buf(bn)) | (Endpoint::Buf(bn), Endpoint::Ddr(a)) => {
                let fill = op.src.is_ddr();
                let (row, brow) = if fill { (src, dst) } else { (dst, src) };
                let d = &self.ddr[a];
                let r = row.len();
                // Rows outside the array are skipped entirely.
                if (0..r - 1).any(|k| row[k] < 0 || row[k] >= d.extents[k]) {
                    return Ok(());
                }
                if let Some(m) = mask {
                    let inside = |k: usize, y: i64| {
                        let (lo, hi, at, step) = m[k];
                        y >= lo && y <= hi && (y - at).rem_euclid(step) == 0
                    };
                    if (0..r - 1).any(|k| !inside(k, row[k])) {
                        return Ok(());
                    }
                }
                let c0 = row[r - 1];
                let lo = c0.max(0);
                let hi = (c0 + len).min(d.pitch);
                if lo >= hi {
                    return Ok(());
                }
                let mut first = row.to_vec();
                first[r - 1] = lo;
                let offset = d.offset(&first).unwrap() as i64;
                let width = self.bufs[bn].width;
                let shift = lo - c0;
                let mut moved = hi - lo;
                if !fill {
                    let m = mask.expect("flushes carry a mask");
                    let (mlo, mhi, at, step) = m[r - 1];
                    moved = (lo..hi).filter(|&y| y >= mlo && y <= mhi && (y - at).rem_euclid(step) == 0).count() as i64;
                    if moved == 0 {
                        return Ok(());
                    }
                }
                if !self.dry {
                    let mut bidx = brow.to_vec();
                    *bidx.last_mut().unwrap() += shift;
                    let boff = self.buf_offset(bn, &bidx)?;
                    let mut bend = bidx.clone();
                    *bend.last_mut().unwrap() += hi - lo - 1;
                    self.buf_offset(bn, &bend)?;
                    let doff = offset as usize;
                    if fill {
                        let d = &self.ddr[a];
                        let vals: Vec<f64> = d.data[doff..doff + (hi - lo) as usize].to_vec();
                        let b = self.bufs.get_mut(bn).unwrap();
                        for (e, v) in vals.into_iter().enumerate() {
                            b.data[boff + e] = v;
                            b.filled[boff + e] = true;
                        }
                    } else {
                        let (mlo, mhi, at, step) = mask.unwrap()[r - 1];
                        for y in lo..hi {
                            if !(y >= mlo && y <= mhi && (y - at).rem_euclid(step) == 0) {
                                continue;
                            }
                            let x = self.bufs[bn].data[boff + (y - lo) as usize];
                            let mut idx = row.to_vec();
                            idx[r - 1] = y;
                            if is_sentinel(x) {
                                return Err(VmError::SentinelLeak { array: a.clone(), index: idx });
                            }
                            self.ddr_write(a, &idx, x)?;
                        }
                    }
                }
                self.record(Burst {
                    role: op.role,
                    array: Some(a.clone()),
                    buffer: bn.clone(),
                    offset,
                    len: hi - lo,
                    moved,
                    width,
                    tile,
                    tick,
                });
            }
            (Endpoint::Ddr(_), Endpoint::Ddr(_)) => unreachable!("DDR to DDR ship"),
        }
        Ok(())
    }
}

/// Execute a tile program. With `footprint`, every DDR write must land on
/// a position the original program writes.
pub fn run_transformed(tp: &TileProgram, b: &Binding, inputs: &Arrays, footprint: Option<&Footprint>) -> Result<(Arrays, ShipTrace), VmError> {
    check_inputs(&tp.arrays, b, inputs)?;
    let mut m = Interp::new(tp, b, Some(inputs))?;
    m.footprint = footprint;
    let mut env = Env::new(b);
    m.nodes(&tp.body, &mut env)?;
    Ok((m.outputs(), m.trace))
}

/// Walk the loops and ships of a tile program without moving data: the
/// same bursts and counts as a real run, at a fraction of the cost.
pub fn walk_ships(tp: &TileProgram, b: &Binding, record: bool) -> Result<ShipTrace, VmError> {
    let mut m = Interp::new(tp, b, None)?;
    m.record = record;
    let mut env = Env::new(b);
    m.nodes(&tp.body, &mut env)?;
    Ok(m.trace)
}

/// Arrays that differ bitwise, with the first differing position.
pub fn compare(expected: &Arrays, got: &Arrays) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (name, e) in expected {
        let g = &got[name];
        if let Some(k) = (0..e.len()).find(|&k| e[k].to_bits() != g[k].to_bits()) {
            out.push((name.clone(), k));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::load;

    #[test]
    fn figure_two_loop_by_hand() {
        let s = load("param N\narray A float[N]\narray B float[N+1]\nloop i = 1 .. N-1 { A[i] = B[i-1] + B[i+1]; }").unwrap();
        let b = Binding::new().with("N", 4);
        let mut inputs = Arrays::new();
        inputs.insert("A".into(), vec![0.0; 4]);
        inputs.insert("B".into(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let (out, fp) = run_original(&s, &b, &inputs).unwrap();
        assert_eq!(out["A"], vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(fp["A"], vec![false, true, true, true]);
    }

    #[test]
    fn empty_domain_leaves_inputs() {
        let s = load("param N\narray A float[N+1]\nloop i = 1 .. N-1 { A[i] = 1.0; }").unwrap();
        let b = Binding::new().with("N", 1);
        let inputs = random_inputs(&s, &b, 3).unwrap();
        assert_eq!(run_original(&s, &b, &inputs).unwrap().0, inputs);
    }

    #[test]
    fn division_by_zero_follows_ieee() {
        let s = load("param N\narray A float[N]\narray B float[N]\nloop i = 0 .. N-1 { A[i] = B[i] / 0.0; }").unwrap();
        let b = Binding::new().with("N", 3);
        let mut inputs = Arrays::new();
        inputs.insert("A".into(), vec![0.0; 3]);
        inputs.insert("B".into(), vec![1.0, -1.0, 0.0]);
        let out = run_original(&s, &b, &inputs).unwrap().0;
        assert_eq!(out["A"][0], f64::INFINITY);
        assert_eq!(out["A"][1], f64::NEG_INFINITY);
        assert!(out["A"][2].is_nan() && !is_sentinel(out["A"][2]));
    }

    #[test]
    fn tiled_schedule_matches_for_forward_dependences() {
        let s = load("param N\narray A float[N][N]\nloop i = 1 .. N-1 { loop j = 1 .. N-1 { A[i, j] = A[i-1, j] + 0.5 * A[i, j-1]; } }")
            .unwrap();
        let b = Binding::new().with("N", 11);
        let inputs = random_inputs(&s, &b, 1).unwrap();
        let want = run_original(&s, &b, &inputs).unwrap().0;
        for perm in [[0, 1], [1, 0]] {
            let t = TiledScop::normalized(&s, &[4, 4], &perm, true).unwrap();
            assert!(compare(&want, &run_tiled(&t, &b, &inputs).unwrap()).is_empty());
        }
    }

    #[test]
    fn burst_checker_flags_misalignment() {
        let mut t = ShipTrace::default();
        let mk = |offset, len| Burst {
            role: ShipRole::Fill,
            array: Some("A".into()),
            buffer: "A_buf".into(),
            offset,
            len,
            moved: len,
            width: 4,
            tile: 1,
            tick: None,
        };
        t.bursts = vec![mk(8, 36), mk(9, 36), mk(8, 33)];
        assert_eq!(check_bursts(&t, 4).len(), 2);
        assert!(check_bursts(&t, 1).is_empty());
        assert_eq!(t.dump().lines().next(), Some("burstcpy FILL 8 36 A"));
    }
}
