//! HLS-C rendering of tile programs and the analytical cycle model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Endpoint, IExpr, LoopNode, MaskDim, Node, ShipOp, Stmt, TileProgram, VExpr};
use crate::planner::check_port_width;
use crate::scop::{AffineExpr, ArrayInfo, Binding};
use crate::shipgen::{expand_ship, seg_var, REP_VAR};
use crate::vm::{self, BufferCounts, VmError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// AMD Vitis HLS: adds interface pragmas for the kernel ports.
    Vitis,
    /// Plain C with only the loop and partition pragmas.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitConfig {
    pub port_width: i64,
    /// Informational only.
    pub frequency_mhz: f64,
    pub dialect: Dialect,
    /// Cycles to open a DDR burst.
    pub c_setup: i64,
    /// Cycles to fill the compute pipeline.
    pub c_pipe: i64,
}

impl EmitConfig {
    pub fn new(port_width: i64) -> Self {
        EmitConfig {
            port_width,
            frequency_mhz: 200.0,
            dialect: Dialect::Vitis,
            c_setup: 16,
            c_pipe: 8,
        }
    }
}

struct Out {
    text: String,
    indent: usize,
}

impl Out {
    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.text.push_str("  ");
        }
        self.text.push_str(s);
        self.text.push('\n');
    }

    /// Pragmas start in column 0.
    fn pragma(&mut self, s: &str) {
        self.text.push_str("#pragma HLS ");
        self.text.push_str(s);
        self.text.push('\n');
    }
}

fn idx(xs: &[AffineExpr]) -> String {
    xs.iter().map(|x| format!("[{x}]")).collect()
}

fn c_extent(e: &AffineExpr) -> String {
    e.to_string()
}

struct Ctx<'a> {
    tp: &'a TileProgram,
    scalar: &'static str,
    suffix: &'static str,
    declared: Vec<String>,
}

impl Ctx<'_> {
    fn array(&self, name: &str) -> &ArrayInfo {
        self.tp.array(name).expect("ship of an undeclared array")
    }

    fn elem_of(&self, e: &Endpoint) -> String {
        match e {
            Endpoint::Ddr(a) => self.array(a).elem.clone(),
            Endpoint::Buf(b) => self.tp.buffer(b).expect("undeclared buffer").elem.clone(),
        }
    }

    fn lit(&self, x: f64) -> String {
        if x.is_nan() {
            "NAN".into()
        } else if x.is_infinite() {
            if x > 0.0 { "INFINITY".into() } else { "(-INFINITY)".into() }
        } else {
            let s = format!("{x:?}");
            if s.starts_with('-') { format!("({s}{})", self.suffix) } else { format!("{s}{}", self.suffix) }
        }
    }

    fn value(&self, v: &VExpr) -> String {
        match v {
            VExpr::Lit(x) => self.lit(*x),
            VExpr::Scalar(n) => n.clone(),
            VExpr::Load { src, indices, guard } => {
                let acc = format!("{}{}", src.name(), idx(indices));
                match guard {
                    Some(g) => format!("({} <= {} ? {acc} : NAN)", g.lhs, g.rhs),
                    None => acc,
                }
            }
            VExpr::Neg(x) => format!("(-{})", self.value(x)),
            VExpr::Bin(op, a, b) => format!("({} {} {})", self.value(a), op.symbol(), self.value(b)),
        }
    }
}

fn loop_header(l: &LoopNode) -> String {
    let inc = if l.step == 1 { format!("{}++", l.var) } else { format!("{} += {}", l.var, l.step) };
    format!("for (int {v} = {}; {v} <= {}; {inc}) {{", l.lower, l.upper, v = l.var)
}

/// `a <= b` in C, or `None` when it always holds.
fn le(a: &AffineExpr, b: &AffineExpr) -> Option<String> {
    let d = b.clone() - a.clone();
    (!(d.is_constant() && d.constant >= 0)).then(|| format!("{a} <= {b}"))
}

/// `a <= b` for every part of a min on the right (or a max on the left).
fn le_all(a: &[&AffineExpr], b: &[&AffineExpr]) -> Vec<String> {
    a.iter().flat_map(|x| b.iter().filter_map(move |y| le(x, y))).collect()
}

fn parts(e: &IExpr) -> Vec<&AffineExpr> {
    match e {
        IExpr::Aff(a) => vec![a],
        IExpr::Min(xs) | IExpr::Max(xs) => xs.iter().flat_map(parts).collect(),
    }
}

fn row_bounds(a: &ArrayInfo, row: &[AffineExpr]) -> Vec<String> {
    let r = row.len();
    let zero = AffineExpr::constant(0);
    let mut out = Vec::new();
    for k in 0..r - 1 {
        let last = a.extents[k].clone() - 1;
        out.extend(le(&zero, &row[k]));
        out.extend(le(&row[k], &last));
    }
    out
}

/// Window test of one outer DDR coordinate; `lo` is a max and `hi` a min
/// of affine parts (or a single one).
fn mask_test(m: &MaskDim, y: &AffineExpr) -> Vec<String> {
    let mut out = le_all(&parts(&m.lo), &[y]);
    out.extend(le_all(&[y], &parts(&m.hi)));
    if m.step != 1 {
        let d = y.clone() - m.at.clone();
        if !(d.is_constant() && d.constant.rem_euclid(m.step) == 0) {
            out.push(format!("EMOD({d}, {}) == 0", m.step));
        }
    }
    out
}

fn row_ptr(name: &str, row: &[AffineExpr]) -> String {
    let r = row.len();
    if r == 1 {
        name.to_string()
    } else {
        format!("&{name}{}[0]", idx(&row[..r - 1]))
    }
}

fn render_ship(o: &mut Out, cx: &Ctx, op: &ShipOp) {
    let nest = expand_ship(op);
    o.line(&format!("// {}", op.comment));
    let mut opened = 0;
    if nest.reps > 1 {
        o.line(&format!("for (int {v} = 0; {v} < {}; {v}++) {{", nest.reps, v = REP_VAR));
        o.indent += 1;
        opened += 1;
    }
    for (k, &n) in nest.segments.iter().enumerate() {
        o.line(&format!("for (int {v} = 0; {v} < {n}; {v}++) {{", v = seg_var(k)));
        o.indent += 1;
        opened += 1;
    }
    let elem = cx.elem_of(&op.dst);
    match (&op.src, &op.dst) {
        (Endpoint::Buf(b), Endpoint::Buf(_)) => {
            o.line(&format!("shift_{elem}(&{b}{}, &{b}{}, {});", idx(&nest.dst), idx(&nest.src), nest.len));
        }
        (Endpoint::Ddr(a), Endpoint::Buf(b)) => {
            let info = cx.array(a);
            let r = nest.src.len();
            let pitch = format!("ROUNDUP({})", c_extent(&info.extents[r - 1]));
            let call = format!(
                "fill_{elem}(&{b}{}, {}, {}, {}, {pitch});",
                idx(&nest.dst),
                row_ptr(a, &nest.src),
                nest.src[r - 1],
                nest.len
            );
            guarded_call(o, &row_bounds(info, &nest.src), &call);
        }
        (Endpoint::Buf(b), Endpoint::Ddr(a)) => {
            let info = cx.array(a);
            let r = nest.dst.len();
            let pitch = format!("ROUNDUP({})", c_extent(&info.extents[r - 1]));
            let mask = op.mask.as_ref().expect("flushes carry a mask");
            let mut conds = row_bounds(info, &nest.dst);
            for k in 0..r - 1 {
                conds.extend(mask_test(&mask[k], &nest.dst[k]));
            }
            let m = &mask[r - 1];
            let call = format!(
                "flush_{elem}({}, &{b}{}, {}, {}, {pitch}, {}, {}, {}, {});",
                row_ptr(a, &nest.dst),
                idx(&nest.src),
                nest.dst[r - 1],
                nest.len,
                m.lo,
                m.hi,
                m.at,
                m.step
            );
            guarded_call(o, &conds, &call);
        }
        (Endpoint::Ddr(_), Endpoint::Ddr(_)) => unreachable!("DDR to DDR ship"),
    }
    for _ in 0..opened {
        o.indent -= 1;
        o.line("}");
    }
}

fn guarded_call(o: &mut Out, conds: &[String], call: &str) {
    if conds.is_empty() {
        o.line(call);
    } else {
        o.line(&format!("if ({})", conds.join(" && ")));
        o.indent += 1;
        o.line(call);
        o.indent -= 1;
    }
}

fn render_nodes(o: &mut Out, cx: &mut Ctx, nodes: &[Node]) {
    for n in nodes {
        match n {
            Node::Loop(l) => {
                let saved = cx.declared.len();
                if l.padded {
                    let real = l.real_upper.as_ref().map(|r| r.to_string()).unwrap_or_default();
                    o.line(&format!("// padded loop: iterations past {real} are neutralized"));
                }
                o.line(&loop_header(l));
                o.indent += 1;
                if l.pipeline {
                    o.pragma("PIPELINE II=1");
                }
                render_nodes(o, cx, &l.body);
                cx.declared.truncate(saved);
                o.indent -= 1;
                o.line("}");
            }
            Node::Declare(decls) => {
                for d in decls {
                    let dims: String = d.extents.iter().map(|e| format!("[{e}]")).collect();
                    o.line(&format!("static {} {}{dims};", d.elem, d.name));
                    o.pragma(&format!("ARRAY_PARTITION variable={} complete", d.name));
                }
            }
            Node::Ship(op) => render_ship(o, cx, op),
            Node::Stmt(Stmt::Let { name, value }) => {
                let v = cx.value(value);
                if cx.declared.contains(name) {
                    o.line(&format!("{name} = {v};"));
                } else {
                    o.line(&format!("{} {name} = {v};", cx.scalar));
                    cx.declared.push(name.clone());
                }
            }
            Node::Stmt(Stmt::Store { dst, indices, value, guard }) => {
                let st = format!("{}{} = {};", dst.name(), idx(indices), cx.value(value));
                match guard {
                    Some(g) => o.line(&format!("if ({} <= {}) {st}", g.lhs, g.rhs)),
                    None => o.line(&st),
                }
            }
        }
    }
}

fn helpers(out: &mut String, elem: &str) {
    write!(
        out,
        "\
/* memcpy-style burst over a PW-element wide port */
static inline void burstcpy_{e}({e} *dst, const {e} *src, int n) {{ memcpy(dst, src, (size_t)n * sizeof({e})); }}

/* DDR row elements [c0, c0 + len), clipped to the row, into buf[0 .. len) */
static inline void fill_{e}({e} *buf, const {e} *row, int c0, int len, int pitch) {{
  int lo = max(c0, 0), hi = min(c0 + len, pitch);
  if (lo < hi)
    burstcpy_{e}(buf + (lo - c0), row + lo, hi - lo);
}}

/* write-enabled part of buf[0 .. len) back to the DDR row */
static inline void flush_{e}({e} *row, const {e} *buf, int c0, int len, int pitch, int lo, int hi, int at, int step) {{
  for (int y = max(c0, 0); y < min(c0 + len, pitch); y++)
    if (y >= lo && y <= hi && EMOD(y - at, step) == 0)
      row[y] = buf[y - c0];
}}

/* on-chip move between buffer slots */
static inline void shift_{e}({e} *dst, const {e} *src, int n) {{
  for (int k = 0; k < n; k++)
    dst[k] = src[k];
}}

",
        e = elem
    )
    .unwrap();
}

/// Render a tile program as C for an HLS tool. The text is plain C99 and
/// compiles with any C compiler; unknown pragmas are ignored there.
pub fn emit_hls(tp: &TileProgram, cfg: &EmitConfig) -> String {
    let mut text = String::new();
    let order = tp.permutation.join(", ");
    let sizes: Vec<String> = tp.tile_sizes.iter().map(|s| s.to_string()).collect();
    writeln!(text, "// {}: tiles {}, intra-tile order ({order}), port width {}", tp.name, sizes.join("x"), tp.port_width).unwrap();
    writeln!(text, "// DDR rows are padded to a multiple of PW elements.").unwrap();
    text.push_str("#include <math.h>\n#include <stddef.h>\n#include <string.h>\n\n");
    writeln!(text, "#define PW {}", tp.port_width).unwrap();
    text.push_str(
        "#define ROUNDUP(x) ((((x) + PW - 1) / PW) * PW)\n\
         #define min(a, b) ((a) < (b) ? (a) : (b))\n\
         #define max(a, b) ((a) > (b) ? (a) : (b))\n\
         #define EMOD(a, b) ((((a) % (b)) + (b)) % (b))\n\n",
    );
    let mut elems: Vec<&str> = tp.arrays.iter().map(|a| a.elem.as_str()).collect();
    elems.sort();
    elems.dedup();
    if !tp.buffers.is_empty() {
        for e in &elems {
            helpers(&mut text, e);
        }
    }
    let all_double = tp.arrays.iter().all(|a| a.elem == "double");
    let mut args: Vec<String> = tp.params.iter().map(|p| format!("int {p}")).collect();
    for a in &tp.arrays {
        let r = a.extents.len();
        let dims: String = a
            .extents
            .iter()
            .enumerate()
            .map(|(k, e)| if k + 1 == r { format!("[ROUNDUP({})]", c_extent(e)) } else { format!("[{}]", c_extent(e)) })
            .collect();
        args.push(format!("{} {}{dims}", a.elem, a.name));
    }
    writeln!(text, "void {}({})\n{{", tp.name, args.join(", ")).unwrap();
    let mut o = Out { text, indent: 1 };
    if cfg.dialect == Dialect::Vitis {
        for a in &tp.arrays {
            o.pragma(&format!("INTERFACE m_axi port={} offset=slave bundle=gmem_{} max_widen_bitwidth={}", a.name, a.name, 32 * tp.port_width));
        }
        for p in &tp.params {
            o.pragma(&format!("INTERFACE s_axilite port={p}"));
        }
        o.pragma("INTERFACE s_axilite port=return");
    }
    let mut cx = Ctx {
        tp,
        scalar: if all_double { "double" } else { "float" },
        suffix: if all_double { "" } else { "f" },
        declared: Vec::new(),
    };
    render_nodes(&mut o, &mut cx, &tp.body);
    o.text.push_str("}\n");
    o.text
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("configured port width {config} differs from the program's {program}")]
    WidthMismatch { config: i64, program: i64 },
    #[error("port width {0} is not one of 1, 2, 4, 8, 16")]
    BadPortWidth(i64),
}

pub const COST_NOTE: &str =
    "analytical model for ordering comparisons only; c_setup and c_pipe are configuration, not measurements";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub note: String,
    pub stencil: String,
    pub params: Binding,
    pub tile_sizes: Vec<i64>,
    pub permutation: Vec<String>,
    pub port_width: i64,
    pub frequency_mhz: f64,
    pub c_setup: i64,
    pub c_pipe: i64,
    /// Shipped elements and bursts per buffer, as the interpreter counts them.
    pub buffers: BTreeMap<String, BufferCounts>,
    pub ddr_bursts: i64,
    pub ddr_beats: i64,
    pub shift_segments: i64,
    pub nc_accesses: i64,
    pub innermost_runs: i64,
    pub innermost_iterations: i64,
    /// `ddr_bursts·c_setup + ddr_beats + shift_segments`.
    pub ship_cycles: i64,
    /// `nc_accesses·(c_setup + 1)`.
    pub nc_cycles: i64,
    /// `innermost_runs·c_pipe + innermost_iterations`.
    pub compute_cycles: i64,
    pub total_cycles: i64,
}

/// Model cycles from the exact burst and loop counts of the program at a
/// concrete binding. Every DDR burst costs `c_setup` plus one cycle per
/// port beat, every on-chip shift segment one cycle, every uncached access
/// a full single-element transaction, and every run of an innermost loop
/// `c_pipe` plus its trip count.
pub fn cost_model(tp: &TileProgram, cfg: &EmitConfig, params: &Binding) -> Result<CostReport, CostError> {
    check_port_width(cfg.port_width).map_err(|_| CostError::BadPortWidth(cfg.port_width))?;
    if cfg.port_width != tp.port_width {
        return Err(CostError::WidthMismatch { config: cfg.port_width, program: tp.port_width });
    }
    let c = vm::walk_ships(tp, params, false)?.counts;
    let shift_segments: i64 = c.buffers.values().map(|b| b.shift_segments).sum();
    let nc_accesses = c.nc_reads + c.nc_writes;
    let ship_cycles = c.ddr_bursts * cfg.c_setup + c.ddr_beats + shift_segments;
    let nc_cycles = nc_accesses * (cfg.c_setup + 1);
    let compute_cycles = c.innermost_runs * cfg.c_pipe + c.innermost_iterations;
    Ok(CostReport {
        note: COST_NOTE.into(),
        stencil: tp.name.clone(),
        params: params.clone(),
        tile_sizes: tp.tile_sizes.clone(),
        permutation: tp.permutation.clone(),
        port_width: tp.port_width,
        frequency_mhz: cfg.frequency_mhz,
        c_setup: cfg.c_setup,
        c_pipe: cfg.c_pipe,
        buffers: c.buffers,
        ddr_bursts: c.ddr_bursts,
        ddr_beats: c.ddr_beats,
        shift_segments,
        nc_accesses,
        innermost_runs: c.innermost_runs,
        innermost_iterations: c.innermost_iterations,
        ship_cycles,
        nc_cycles,
        compute_cycles,
        total_cycles: ship_cycles + nc_cycles + compute_cycles,
    })
}
