//! End-to-end compilation and the differential verification matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emit::{cost_model, CostError, EmitConfig, COST_NOTE};
use crate::ir::TileProgram;
use crate::planner::{self, add_halo, check_port_width, BufferPlan, PermutationChoice, PlanError, PlanReport};
use crate::scop::{Binding, Scop};
use crate::shipgen::{plan_ships, ShipgenOptions};
use crate::tiler::{self, TiledScop};
use crate::vm;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    pub sizes: Vec<i64>,
    /// Forced intra-tile order (loop positions); the cheapest legal one otherwise.
    pub perm: Option<Vec<usize>>,
    pub port_width: i64,
    /// Pad the innermost intra-tile loop. Off only as a test hook.
    pub pad: bool,
    /// Guard DDR accesses of padded iterations. Off only as a test hook.
    pub guards: bool,
}

impl CompileOptions {
    pub fn new(sizes: &[i64], port_width: i64) -> Self {
        CompileOptions {
            sizes: sizes.to_vec(),
            perm: None,
            port_width,
            pad: true,
            guards: true,
        }
    }
}

/// Default tile sizes by nest depth.
pub fn default_sizes(depth: usize) -> Vec<i64> {
    match depth {
        1 => vec![64],
        2 => vec![16, 16],
        _ => vec![8; depth],
    }
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub tiled: TiledScop,
    pub candidates: Vec<PermutationChoice>,
    pub chosen: usize,
    /// Plans of the chosen permutation with halos applied.
    pub plans: Vec<BufferPlan>,
    pub program: TileProgram,
    pub report: PlanReport,
}

/// Tile, plan, size halos and generate the tile program. `params` is
/// used for halo alignment only and may be empty.
pub fn compile(s: &Scop, opts: &CompileOptions, params: &Binding) -> Result<Compiled, PlanError> {
    check_port_width(opts.port_width)?;
    let (candidates, best) = planner::select_permutation(s, &opts.sizes)?;
    let chosen = match &opts.perm {
        None => best,
        Some(p) => candidates
            .iter()
            .position(|c| &c.perm == p)
            .ok_or_else(|| PlanError::IllegalPermutation(planner::perm_names(s, p)))?,
    };
    let tiled = TiledScop::normalized(s, &opts.sizes, &candidates[chosen].perm, opts.pad)?;
    let plans: Vec<BufferPlan> = candidates[chosen]
        .plans
        .iter()
        .map(|p| add_halo(p, opts.port_width, &tiled, params))
        .collect::<Result<_, _>>()?;
    let program = plan_ships(&tiled, &plans, opts.port_width, ShipgenOptions { guards: opts.guards });
    let report = PlanReport::new(s, &opts.sizes, opts.port_width, &candidates, chosen, &plans);
    Ok(Compiled {
        tiled,
        candidates,
        chosen,
        plans,
        program,
        report,
    })
}

/// Parameter values that give every loop an index range of `extent`,
/// as far as the bounds allow (first loop bounded by a parameter wins).
pub fn params_for_extent(s: &Scop, extent: i64) -> Binding {
    let mut b: Binding = s.params.iter().map(|p| (p.clone(), 0)).collect();
    for _ in 0..2 {
        for p in &s.params {
            let Some(l) = s.loops.iter().find(|l| l.upper.param_coeff(p) != 0) else {
                b.set(p, extent);
                continue;
            };
            let a = l.upper.param_coeff(p);
            let (Ok(lo), Ok(up)) = (l.lower.eval_params(&b), l.upper.eval_params(&b)) else {
                continue;
            };
            let rest = up - a * b.get(p).unwrap();
            let target = lo + extent - 1;
            // Smallest value reaching the target upper bound.
            let v = if a > 0 { (target - rest + a - 1).div_euclid(a) } else { (rest - target).div_euclid(-a) };
            b.set(p, v.max(1));
        }
    }
    b
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub sizes: Vec<i64>,
    pub port_widths: Vec<i64>,
    pub remainders: Vec<i64>,
    pub seed: u64,
    pub pad: bool,
    pub guards: bool,
}

impl VerifyConfig {
    /// The standard matrix: per-dimension tile sizes 4 and 8, domains of
    /// exactly two tiles and of two tiles plus 3, port widths 1 and 4.
    pub fn standard(seed: u64) -> Self {
        VerifyConfig {
            sizes: vec![4, 8],
            port_widths: vec![1, 4],
            remainders: vec![0, 3],
            seed,
            pad: true,
            guards: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseResult {
    pub permutation: Vec<String>,
    pub tile_sizes: Vec<i64>,
    pub params: Vec<(String, i64)>,
    pub port_width: i64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Arrays whose transformed result differs from the original.
    pub mismatched: Vec<String>,
    /// The tiled schedule without buffers also matched.
    pub tiled_matches: bool,
    pub bursts: usize,
    pub misaligned_bursts: usize,
    /// Counts of a dry ship walk equal those of the real run.
    pub counts_match: bool,
    pub padded_iterations: i64,
    pub guard_skips: i64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub stencil: String,
    pub cases: Vec<CaseResult>,
    pub passed: usize,
    pub failed: usize,
}

struct Case {
    perm: Vec<usize>,
    size: i64,
    remainder: i64,
    w: i64,
}

fn run_case(s: &Scop, c: &Case, cfg: &VerifyConfig, seed: u64) -> CaseResult {
    let sizes = vec![c.size; s.depth()];
    let b = params_for_extent(s, 2 * c.size + c.remainder);
    let mut r = CaseResult {
        permutation: planner::perm_names(s, &c.perm),
        tile_sizes: sizes.clone(),
        params: b.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        port_width: c.w,
        passed: false,
        error: None,
        mismatched: Vec::new(),
        tiled_matches: false,
        bursts: 0,
        misaligned_bursts: 0,
        counts_match: false,
        padded_iterations: 0,
        guard_skips: 0,
    };
    let opts = CompileOptions {
        sizes: sizes.clone(),
        perm: Some(c.perm.clone()),
        port_width: c.w,
        pad: cfg.pad,
        guards: cfg.guards,
    };
    let outcome = (|| -> Result<(), String> {
        let comp = compile(s, &opts, &b).map_err(|e| e.to_string())?;
        let inputs = vm::random_inputs(s, &b, seed).map_err(|e| e.to_string())?;
        let (want, fp) = vm::run_original(s, &b, &inputs).map_err(|e| e.to_string())?;
        let tiled = vm::run_tiled(&comp.tiled, &b, &inputs).map_err(|e| e.to_string())?;
        r.tiled_matches = vm::compare(&want, &tiled).is_empty();
        let (got, trace) = vm::run_transformed(&comp.program, &b, &inputs, Some(&fp)).map_err(|e| e.to_string())?;
        r.mismatched = vm::compare(&want, &got).into_iter().map(|(a, _)| a).collect();
        r.bursts = trace.bursts.iter().filter(|x| x.array.is_some()).count();
        r.misaligned_bursts = vm::check_bursts(&trace, c.w).len();
        r.padded_iterations = trace.counts.padded_iterations;
        r.guard_skips = trace.counts.guard_skips;
        let dry = vm::walk_ships(&comp.program, &b, false).map_err(|e| e.to_string())?;
        r.counts_match = dry.counts == trace.counts;
        Ok(())
    })();
    if let Err(e) = outcome {
        r.error = Some(e);
    }
    r.passed = r.error.is_none() && r.mismatched.is_empty() && r.tiled_matches && r.misaligned_bursts == 0 && r.counts_match;
    r
}

/// Differential check of every legal permutation over the configured
/// tile sizes, domain remainders and port widths, in parallel.
pub fn verify_matrix(s: &Scop, cfg: &VerifyConfig) -> Result<VerifyReport, PlanError> {
    let d = s.depth();
    let perms = tiler::legal_permutations(s, &vec![cfg.sizes[0]; d])?;
    let mut cases = Vec::new();
    for &size in &cfg.sizes {
        for p in &perms {
            for &remainder in &cfg.remainders {
                for &w in &cfg.port_widths {
                    check_port_width(w)?;
                    cases.push(Case {
                        perm: p.clone(),
                        size,
                        remainder,
                        w,
                    });
                }
            }
        }
    }
    let results: Vec<CaseResult> = cases
        .par_iter()
        .enumerate()
        .map(|(k, c)| run_case(s, c, cfg, cfg.seed.wrapping_add(k as u64)))
        .collect();
    let passed = results.iter().filter(|r| r.passed).count();
    Ok(VerifyReport {
        stencil: s.name.clone(),
        failed: results.len() - passed,
        passed,
        cases: results,
    })
}

/// Parameters for reports: every loop spans four tiles plus a partial one.
pub fn report_params(s: &Scop, sizes: &[i64]) -> Binding {
    let sz = sizes.iter().copied().max().unwrap_or(1);
    params_for_extent(s, 4 * sz + 3)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrendRow {
    pub tile_sizes: Vec<i64>,
    pub port_width: i64,
    pub permutation: Vec<String>,
    pub ship_cycles: i64,
    pub nc_cycles: i64,
    pub compute_cycles: i64,
    pub total_cycles: i64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrendReport {
    pub note: String,
    pub stencil: String,
    pub params: Binding,
    pub rows: Vec<TrendRow>,
}

/// Modeled cycles of the chosen plan for every tile-size vector and port
/// width, all at one parameter binding.
pub fn trend(s: &Scop, size_sets: &[Vec<i64>], widths: &[i64], params: &Binding) -> Result<TrendReport, TrendError> {
    let mut rows = Vec::new();
    for sizes in size_sets {
        for &w in widths {
            let comp = compile(s, &CompileOptions::new(sizes, w), params)?;
            let r = cost_model(&comp.program, &EmitConfig::new(w), params)?;
            rows.push(TrendRow {
                tile_sizes: sizes.clone(),
                port_width: w,
                permutation: comp.report.chosen.clone(),
                ship_cycles: r.ship_cycles,
                nc_cycles: r.nc_cycles,
                compute_cycles: r.compute_cycles,
                total_cycles: r.total_cycles,
            });
        }
    }
    Ok(TrendReport {
        note: COST_NOTE.into(),
        stencil: s.name.clone(),
        params: params.clone(),
        rows,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum TrendError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Cost(#[from] CostError),
}
