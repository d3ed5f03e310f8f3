use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stencil_forge::emit::{cost_model, emit_hls, Dialect, EmitConfig};
use stencil_forge::frontend::load;
use stencil_forge::pipeline::{compile, default_sizes, report_params, trend, verify_matrix, CompileOptions, VerifyConfig};
use stencil_forge::scop::{Binding, Scop};
use stencil_forge::vm;

#[derive(Parser)]
#[command(name = "stencil-forge", version, about = "Tile affine stencils and add burst-filled cache buffers for HLS")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan every legal intra-tile order and print the cost table as JSON.
    Analyze(Common),
    /// Write NAME.c and NAME.cost.json into the output directory.
    Emit(EmitArgs),
    /// Differential check of transformed against original programs.
    Verify(VerifyArgs),
    /// Modeled cycles over port widths and halved tile sizes.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    input: PathBuf,
    /// Tile sizes, one per loop, comma separated.
    #[arg(long, value_delimiter = ',')]
    sz: Option<Vec<i64>>,
    #[arg(long, default_value_t = 1)]
    port_width: i64,
    /// Intra-tile loop order by name, outermost first.
    #[arg(long, value_delimiter = ',')]
    perm: Option<Vec<String>>,
    /// Parameter values, e.g. `--param N=100`.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, i64)>,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "vitis")]
    dialect: DialectArg,
    /// Also write the burst trace of the cost binding (NAME.trace).
    #[arg(long)]
    trace: bool,
    /// Keep the innermost intra-tile loop unpadded (test hook).
    #[arg(long, hide = true)]
    no_padding: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per-dimension tile sizes of the matrix.
    #[arg(long, value_delimiter = ',', default_values_t = [4, 8])]
    sz: Vec<i64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 4])]
    port_width: Vec<i64>,
    /// Write NAME.verify.json with every case into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    no_padding: bool,
    /// Drop the padded-iteration guards; verification is expected to fail.
    #[arg(long, hide = true)]
    unsafe_drop_guards: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 8, 16])]
    widths: Vec<i64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DialectArg {
    Vitis,
    Plain,
}

fn parse_param(s: &str) -> Result<(String, i64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v = v.trim().parse::<i64>().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn read_scop(path: &Path) -> Result<Scop> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn options(s: &Scop, c: &Common) -> Result<CompileOptions> {
    let sizes = c.sz.clone().unwrap_or_else(|| default_sizes(s.depth()));
    if sizes.len() != s.depth() {
        bail!("{} tile sizes given for a nest of depth {}", sizes.len(), s.depth());
    }
    let mut o = CompileOptions::new(&sizes, c.port_width);
    if let Some(names) = &c.perm {
        let vars = s.loop_vars();
        let perm = names
            .iter()
            .map(|n| vars.iter().position(|v| v == n).with_context(|| format!("no loop named `{n}`")))
            .collect::<Result<Vec<_>>>()?;
        o.perm = Some(perm);
    }
    Ok(o)
}

fn binding(s: &Scop, c: &Common, sizes: &[i64]) -> Binding {
    let mut b = report_params(s, sizes);
    for (k, v) in &c.params {
        b.set(k, *v);
    }
    b
}

fn user_binding(c: &Common) -> Binding {
    c.params.iter().cloned().collect()
}

fn write_json(out: Option<&Path>, default_name: &str, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(default_name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn analyze(c: &Common) -> Result<()> {
    let s = read_scop(&c.input)?;
    let o = options(&s, c)?;
    let comp = compile(&s, &o, &user_binding(c))?;
    write_json(c.out.as_deref(), &format!("{}.plan.json", s.name), &comp.report)
}

fn emit(a: &EmitArgs) -> Result<()> {
    let c = &a.common;
    let s = read_scop(&c.input)?;
    let mut o = options(&s, c)?;
    o.pad = !a.no_padding;
    let b = binding(&s, c, &o.sizes);
    let comp = compile(&s, &o, &b)?;
    let mut cfg = EmitConfig::new(c.port_width);
    cfg.dialect = match a.dialect {
        DialectArg::Vitis => Dialect::Vitis,
        DialectArg::Plain => Dialect::Plain,
    };
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(format!("{}.c", s.name)), emit_hls(&comp.program, &cfg))?;
    let cost = cost_model(&comp.program, &cfg, &b)?;
    write_json(Some(&dir), &format!("{}.cost.json", s.name), &cost)?;
    if a.trace {
        let t = vm::walk_ships(&comp.program, &b, true)?;
        std::fs::write(dir.join(format!("{}.trace", s.name)), t.dump())?;
    }
    eprintln!("wrote {}/{}.c, total {} modeled cycles", dir.display(), s.name, cost.total_cycles);
    Ok(())
}

fn verify(a: &VerifyArgs) -> Result<bool> {
    let s = read_scop(&a.input)?;
    let mut cfg = VerifyConfig::standard(a.seed);
    cfg.sizes = a.sz.clone();
    cfg.port_widths = a.port_width.clone();
    cfg.pad = !a.no_padding;
    cfg.guards = !a.unsafe_drop_guards;
    let r = verify_matrix(&s, &cfg)?;
    if let Some(dir) = &a.out {
        write_json(Some(dir), &format!("{}.verify.json", s.name), &r)?;
    }
    eprintln!("{}: {} passed, {} failed", s.name, r.passed, r.failed);
    for c in r.cases.iter().filter(|c| !c.passed).take(5) {
        eprintln!(
            "  FAIL perm {:?} sz {:?} w {} params {:?}: {}",
            c.permutation,
            c.tile_sizes,
            c.port_width,
            c.params,
            c.error.clone().unwrap_or_else(|| format!("mismatch in {:?}", c.mismatched))
        );
    }
    Ok(r.failed == 0)
}

fn report(a: &ReportArgs) -> Result<()> {
    let c = &a.common;
    let s = read_scop(&c.input)?;
    let o = options(&s, c)?;
    let half: Vec<i64> = o.sizes.iter().map(|&x| (x / 2).max(1)).collect();
    let b = binding(&s, c, &o.sizes);
    let r = trend(&s, &[o.sizes.clone(), half], &a.widths, &b)?;
    write_json(c.out.as_deref(), &format!("{}.trend.json", s.name), &r)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Analyze(c) => analyze(c).map(|_| true),
        Cmd::Emit(a) => emit(a).map(|_| true),
        Cmd::Verify(a) => verify(a),
        Cmd::Report(a) => report(a).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
