use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    repo().join("fixtures").join(name)
}

fn stopsurf(args: &[&str]) -> Output {
    stopsurf_env(args, &[])
}

fn stopsurf_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stopsurf"));
    cmd.args(args).env_remove("STOPSURF_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run stopsurf")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn assert_schema(file: &Path, schema: &str) {
    let schema_json = read_json(&repo().join("schemas").join(format!("{schema}.schema.json")));
    let validator = jsonschema::validator_for(&schema_json).expect("schema compiles");
    let instance = read_json(file);
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{} violates {schema}: {errors:?}", file.display());
}

/// Solves the put benchmark on a coarse grid into `dir`.
fn solve_put(dir: &Path, extra: &[&str]) -> Output {
    let put = fixture("put.prob");
    let mut args = vec!["solve", s(&put), "--nt", "41", "--nx", "81", "-o", s(dir)];
    args.extend_from_slice(extra);
    stopsurf(&args)
}

const JUMP_OVERSHOOT: &str = r#"
horizon = 1.0

[domain]
x_lo = -2.0
x_hi = 2.0
y_lo = 0.0
y_hi = 1.0

[coefficients]
alpha1 = "y + 1.2*x"
alpha2 = "0.2*(1 - y)"
beta1 = "0.05"
beta2 = "0.1"
r = "0.05"

[gain]
g = "x"

[far_field]
x_lo = "gain"
x_hi = "linear"
y_lo = "linear"
y_hi = "linear"

[jumps.0]
gamma1 = "-2*(x + 0.55)"
gamma_bar = "6"
atoms = [{ mark = [0.0], weight = 0.5 }]

[grid]
nt = 41
nx = 81
ny = 21

[window]
t = [0.0, 0.5]
x = [-1.0, 1.0]
y = [0.25, 0.75]
"#;

#[test]
fn solve_writes_fields_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = solve_put(&out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["value.grid", "mask.grid", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(!out.join(".stopsurf.lock").exists());
    assert_schema(&out.join("manifest.json"), "manifest");

    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["command"], "solve");
    assert_eq!(m["quality"]["converged"], true);
    assert_eq!(m["grid"]["nt"], 41);
    assert_eq!(m["grid"]["ny"], 7);
    let value = fs::read(out.join("value.grid")).unwrap();
    assert_eq!(&value[..8], b"SSGRID01");
    assert_eq!(value.len(), 8 + 8 + 3 * 8 + 8 * 41 * 81 * 7);
}

#[test]
fn csv_fields_feed_later_commands() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&solve_put(&run, &["--format", "csv"])), 0);
    let head = fs::read_to_string(run.join("value.csv")).unwrap();
    assert!(head.starts_with("t,x,y,value\n"));
    let put = fixture("put.prob");
    let o = stopsurf(&["boundary", s(&put), "--artifacts", s(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn missing_problem_file_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let o = stopsurf(&["solve", "does/not/exist.prob", "-o", s(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does/not/exist.prob"), "{}", stderr(&o));
}

#[test]
fn malformed_problem_file_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.prob");
    fs::write(&bad, "horizon = 1.0\n[coefficients]\nalpha1 = \"x +\"\n").unwrap();
    let o = stopsurf(&["solve", s(&bad), "-o", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.prob"), "{}", stderr(&o));
}

#[test]
fn iteration_budget_flags_the_run() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = solve_put(&out, &["--max-iter", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("iteration budget"), "{}", stderr(&o));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["quality"]["converged"], false);
    assert!(!m["quality"]["unconverged_levels"].as_array().unwrap().is_empty());
}

#[test]
fn check_synthetic_passes_with_delta() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    let syn = fixture("synthetic.prob");
    assert_eq!(code(&stopsurf(&["solve", s(&syn), "-o", s(&run)])), 0);
    let o = stopsurf(&["check", s(&syn), "--artifacts", s(&run)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("A3.1.iii-delta: pass, δ="), "{text}");
    assert!(!text.contains(": fail"), "{text}");
    assert_schema(&run.join("assumptions.json"), "assumptions");
    assert_schema(&run.join("check.manifest.json"), "manifest");
    let report = read_json(&run.join("assumptions.json"));
    assert_eq!(report["items"].as_array().unwrap().len(), 16);
    assert!(report["delta"].as_f64().unwrap() > 0.0);
}

#[test]
fn check_degenerate_beta2_reports_unverifiable_not_fail() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&solve_put(&run, &[])), 0);
    let put = fixture("put.prob");
    let o = stopsurf(&["check", s(&put), "--artifacts", s(&run), "--window", "0,0.4,60,95,0.34,0.66"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("A3.1.ii-beta2pos: unverifiable"), "{}", stdout(&o));
    assert!(!stdout(&o).contains(": fail"));
}

#[test]
fn check_reports_violated_hypothesis_with_witness() {
    let tmp = TempDir::new().unwrap();
    let prob = tmp.path().join("overshoot.prob");
    fs::write(&prob, JUMP_OVERSHOOT).unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&stopsurf(&["solve", s(&prob), "-o", s(&run)])), 0);
    let o = stopsurf(&["check", s(&prob), "--artifacts", s(&run)]);
    assert_ne!(code(&o), 0);
    assert_eq!(code(&o), 2);
    let line = stdout(&o).lines().find(|l| l.starts_with("L4.5.b:")).map(str::to_owned).unwrap_or_default();
    assert!(line.starts_with("L4.5.b: fail, witness (t="), "{}", stdout(&o));
    let report = read_json(&run.join("assumptions.json"));
    let item = report["items"].as_array().unwrap().iter().find(|i| i["id"] == "L4.5.b").unwrap();
    assert_eq!(item["status"], "fail");
    assert!(item["witness"]["x"].is_number());
}

#[test]
fn check_without_artifacts_leaves_u_items_unverifiable() {
    let syn = fixture("synthetic.prob");
    let tmp = TempDir::new().unwrap();
    let o = stopsurf(&["check", s(&syn), "-o", s(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("A3.1.iv-dxu: unverifiable"), "{}", stdout(&o));
}

#[test]
fn malformed_window_is_an_input_error() {
    let syn = fixture("synthetic.prob");
    for w in ["0,0.5,-1", "0,0.5,1,-1,0.2,0.8", "0,x,-1,1,0.2,0.8"] {
        let o = stopsurf(&["check", s(&syn), "--window", w]);
        assert_eq!(code(&o), 1, "window {w}");
        assert!(stderr(&o).contains("--window"), "{}", stderr(&o));
    }
}

#[test]
fn boundary_on_put_is_clean() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&solve_put(&run, &[])), 0);
    let put = fixture("put.prob");
    let o = stopsurf(&["boundary", s(&put), "--artifacts", s(&run)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    for (file, schema) in [
        ("boundary.json", "boundary"),
        ("continuity.json", "continuity"),
        ("smooth_fit.json", "smooth_fit"),
        ("boundary.manifest.json", "manifest"),
    ] {
        assert_schema(&run.join(file), schema);
    }
    let csv = fs::read_to_string(run.join("boundary.csv")).unwrap();
    assert!(csv.starts_with("t,y,x_star\n"));
    let c = read_json(&run.join("continuity.json"));
    assert_eq!(c["t"]["violations"], 0);
    assert_eq!(c["t"]["discontinuity"], false);
}

#[test]
fn boundary_rejects_tampered_fields() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&solve_put(&run, &[])), 0);
    let path = run.join("value.grid");
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();
    let put = fixture("put.prob");
    let o = stopsurf(&["boundary", s(&put), "--artifacts", s(&run)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does not match the manifest hash"), "{}", stderr(&o));
}

#[test]
fn artifacts_from_another_problem_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&solve_put(&run, &[])), 0);
    let syn = fixture("synthetic.prob");
    let o = stopsurf(&["boundary", s(&syn), "--artifacts", s(&run)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("different problem file"), "{}", stderr(&o));
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&solve_put(&run, &[])), 0);
    let put = fixture("put.prob");
    let sim = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = stopsurf(&[
            "simulate", s(&put), "--artifacts", s(&run), "--start", "0,100,0.5", "--paths", "400", "--seed", seed,
            "--lsm-degree", "2", "-o", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = sim("a", "7");
    let b = sim("b", "7");
    let c = sim("c", "8");
    let policy = |d: &Path| fs::read(d.join("policy.json")).unwrap();
    assert_eq!(policy(&a), policy(&b));
    assert_ne!(policy(&a), policy(&c));
    assert_eq!(fs::read(a.join("martingale.csv")).unwrap(), fs::read(b.join("martingale.csv")).unwrap());
    assert_schema(&a.join("policy.json"), "policy");
    assert_schema(&a.join("martingale.json"), "martingale");
    assert_schema(&a.join("simulate.manifest.json"), "manifest");
}

#[test]
fn simulate_rejects_too_few_paths() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&solve_put(&run, &[])), 0);
    let put = fixture("put.prob");
    let o = stopsurf(&["simulate", s(&put), "--artifacts", s(&run), "--start", "0,100,0.5", "--paths", "10"]);
    assert_eq!(code(&o), 1);
    assert!(!run.join("policy.json").exists());
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".stopsurf.lock"), "123\n").unwrap();
    let o = solve_put(&out, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
    assert!(!out.join("value.grid").exists());
}

#[test]
fn thread_count_does_not_change_the_fields() {
    let tmp = TempDir::new().unwrap();
    let put = fixture("put.prob");
    let run = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        let o = stopsurf_env(&["solve", s(&put), "--nt", "41", "--nx", "81", "-o", s(&out)], &[("STOPSURF_THREADS", threads)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out.join("value.grid")).unwrap()
    };
    assert_eq!(run("one", "1"), run("four", "4"));

    let o = stopsurf_env(&["solve", s(&put), "-o", s(&tmp.path().join("bad"))], &[("STOPSURF_THREADS", "zero")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("STOPSURF_THREADS"));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&stopsurf(&["--help"])), 0);
    assert_eq!(code(&stopsurf(&["--version"])), 0);
    assert_eq!(code(&stopsurf(&["solve"])), 1);
    assert_eq!(code(&stopsurf(&["frobnicate"])), 1);
}
