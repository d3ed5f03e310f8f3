//! The command-line driver end to end: exit codes, golden C files and
//! schema-valid JSON.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn bench(name: &str) -> String {
    root().join("benchmarks").join(format!("{name}.stencil")).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stencil-forge")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn validate(schema: &str, doc: &Value) {
    let s: Value = serde_json::from_str(&std::fs::read_to_string(root().join("schemas").join(schema)).unwrap()).unwrap();
    let v = jsonschema::validator_for(&s).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

/// Compare with `tests/golden/NAME`, or rewrite it when SF_GOLDEN_UPDATE=1.
fn golden(name: &str, text: &str) {
    let path = root().join("tests").join("golden").join(name);
    if std::env::var("SF_GOLDEN_UPDATE").as_deref() == Ok("1") {
        std::fs::write(&path, text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
    assert!(want == text, "{name} differs from the golden file; rerun with SF_GOLDEN_UPDATE=1 if intended");
}

fn emit_to(dir: &Path, input: &str, extra: &[&str]) -> (String, Value) {
    let out = dir.display().to_string();
    let mut args = vec!["emit", "--input", input, "--out", &out];
    args.extend_from_slice(extra);
    ok(&args);
    let name = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "c"))
        .unwrap();
    let c = std::fs::read_to_string(&name).unwrap();
    let cost: Value = serde_json::from_str(&std::fs::read_to_string(name.with_extension("cost.json")).unwrap()).unwrap();
    (c, cost)
}

#[test]
fn analyze_reproduces_the_cost_table() {
    let text = ok(&["analyze", "--input", &bench("running-example"), "--sz", "32,32,32"]);
    let v: Value = serde_json::from_str(&text).unwrap();
    validate("plan_report.schema.json", &v);
    let total = |p: &str| {
        v["candidates"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["permutation"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect::<Vec<_>>().join(",") == p)
            .map(|c| c["total_cost"].as_i64().unwrap())
            .unwrap()
    };
    assert_eq!(total("i,k,j"), 36961);
    assert_eq!(total("i,j,k"), 34946);
    assert_eq!(v["chosen"], serde_json::json!(["i", "j", "k"]));
}

#[test]
fn analyze_is_deterministic() {
    let a = ok(&["analyze", "--input", &bench("3d-heat")]);
    let b = ok(&["analyze", "--input", &bench("3d-heat")]);
    assert_eq!(a, b);
}

#[test]
fn seidel_has_no_legal_tiling() {
    let o = run(&["analyze", "--input", &bench("seidel")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no legal tiling"));
}

#[test]
fn one_dimensional_jacobi_has_one_order_and_two_buffers() {
    let v: Value = serde_json::from_str(&ok(&["analyze", "--input", &bench("1d-jacobi")])).unwrap();
    assert_eq!(v["candidates"].as_array().unwrap().len(), 1);
    assert_eq!(v["buffers"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_arguments_are_reported() {
    assert_eq!(run(&["analyze", "--input", &bench("running-example"), "--sz", "4,4"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--input", &bench("running-example"), "--port-width", "3"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--input", &bench("running-example"), "--perm", "i,j,q"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "--input", "/nonexistent.stencil"]).status.code(), Some(2));
}

#[test]
fn emitted_running_example_matches_golden() {
    let d = tempfile::tempdir().unwrap();
    let (c, cost) = emit_to(d.path(), &bench("running-example"), &["--sz", "32,32,32", "--port-width", "4", "--param", "N=98"]);
    golden("running-example_sz32-32-32_w4.c", &c);
    assert!(c.contains("static float A_buf[2][33][36];"));
    validate("cost_report.schema.json", &cost);
    assert!(cost["note"].as_str().unwrap().contains("ordering"));
}

#[test]
fn more_goldens() {
    for (name, sz, w) in [("2d-jacobi", "16,16", "4"), ("1d-jacobi", "64", "8"), ("fdtd2", "16,16", "4")] {
        let d = tempfile::tempdir().unwrap();
        let (c, _) = emit_to(d.path(), &bench(name), &["--sz", sz, "--port-width", w, "--dialect", "plain"]);
        golden(&format!("{name}_sz{}_w{w}.c", sz.replace(',', "-")), &c);
    }
}

#[test]
fn padding_off_puts_min_on_the_innermost_loop() {
    let d = tempfile::tempdir().unwrap();
    let args = ["--sz", "32,32,32", "--port-width", "4", "--param", "N=98"];
    let (padded, _) = emit_to(d.path(), &bench("running-example"), &args);
    let d2 = tempfile::tempdir().unwrap();
    let mut raw_args = args.to_vec();
    raw_args.push("--no-padding");
    let (raw, _) = emit_to(d2.path(), &bench("running-example"), &raw_args);
    golden("running-example_sz32-32-32_w4_nopad.c", &raw);
    assert!(padded.contains("for (int k = 0; k <= 31; k++) {"));
    assert!(raw.contains("for (int k = 0; k <= min(31, -tk + N - 2); k++) {"));
    assert!(!raw.contains("padded loop"));
}

#[test]
fn wider_ports_never_cost_more() {
    let d8 = tempfile::tempdir().unwrap();
    let d16 = tempfile::tempdir().unwrap();
    let (_, c8) = emit_to(d8.path(), &bench("2d-5p"), &["--port-width", "8"]);
    let (_, c16) = emit_to(d16.path(), &bench("2d-5p"), &["--port-width", "16"]);
    assert!(c16["total_cycles"].as_i64() <= c8["total_cycles"].as_i64());
}

#[test]
fn missing_sizes_take_defaults() {
    let d = tempfile::tempdir().unwrap();
    let (_, cost) = emit_to(d.path(), &bench("3d-27p"), &[]);
    assert_eq!(cost["tile_sizes"], serde_json::json!([8, 8, 8]));
    let v: Value = serde_json::from_str(&ok(&["analyze", "--input", &bench("2d-9p")])).unwrap();
    assert_eq!(v["tile_sizes"], serde_json::json!([16, 16]));
}

#[test]
fn trace_dump_lists_bursts() {
    let d = tempfile::tempdir().unwrap();
    emit_to(d.path(), &bench("1d-jacobi"), &["--sz", "8", "--port-width", "4", "--param", "N=16", "--trace"]);
    let t = std::fs::read_to_string(d.path().join("jacobi1d.trace")).unwrap();
    let first = t.lines().next().unwrap();
    assert_eq!(first.split(' ').count(), 5);
    assert!(first.starts_with("burstcpy FILL "));
}

#[test]
fn verify_passes_and_writes_a_report() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().display().to_string();
    ok(&["verify", "--input", &bench("fdtd1"), "--out", &out]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("fdtd1.verify.json")).unwrap()).unwrap();
    validate("verify_report.schema.json", &v);
    assert_eq!(v["failed"], 0);
    // Divisible domains never execute a padded iteration.
    for c in v["cases"].as_array().unwrap() {
        let divisible = c["params"].as_array().unwrap().iter().all(|p| {
            let n = p[1].as_i64().unwrap();
            let sz = c["tile_sizes"][0].as_i64().unwrap();
            // fdtd1: i spans NX, j spans NY - 1.
            if p[0] == "NX" { n % sz == 0 } else { (n - 1) % sz == 0 }
        });
        if divisible {
            assert_eq!(c["padded_iterations"], 0, "{c}");
        }
    }
}

#[test]
fn verify_fails_without_guards() {
    let o = run(&["verify", "--input", &bench("2d-jacobi"), "--unsafe-drop-guards"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sentinel value flushed"));
}

#[test]
fn report_is_schema_valid() {
    let v: Value = serde_json::from_str(&ok(&["report", "--input", &bench("2d-jacobi"), "--port-width", "4"])).unwrap();
    validate("trend_report.schema.json", &v);
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn schemas_reject_malformed_reports() {
    let s: Value = serde_json::from_str(&std::fs::read_to_string(root().join("schemas/plan_report.schema.json")).unwrap()).unwrap();
    let v = jsonschema::validator_for(&s).unwrap();
    let mut doc: Value = serde_json::from_str(&ok(&["analyze", "--input", &bench("2d-5p")])).unwrap();
    assert!(v.is_valid(&doc));
    doc["buffers"][0]["kind"] = Value::from("HUGE");
    assert!(!v.is_valid(&doc));
    doc.as_object_mut().unwrap().remove("chosen");
    assert!(!v.is_valid(&doc));
}
