use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use stopsurf::boundary::{
    continuity_report, extract_boundary, monotone_gradient_check, smooth_fit_residual, BoundaryError, BoundarySurface,
    ContinuityOptions, ExtractOptions, Monotonicity, Refinement,
};
use stopsurf::hypotheses::{assumption_report, CatalogOptions, Status, UField};
use stopsurf::model::file::{load_problem, LoadedProblem};
use stopsurf::model::{has_errors, validate_spec, Grid, Severity, WindowU};
use stopsurf::montecarlo::{
    evaluate_policy, interpolate_value, longstaff_schwartz, martingale_check, simulate_paths, MartingalePoint, PolicyEstimate,
    SimConfig, Truncation,
};
use stopsurf::solver::{gain_on_grid, solve_backward, ObstacleMethod, SolveResult};

use crate::args::{BoundaryArgs, CheckArgs, FieldFormat, GridArgs, MethodArg, MonotoneArg, RefinementArg, SimulateArgs, SolveArgs};
use crate::gridio;
use crate::manifest::{input_artifact, sha256_hex, unix_now, GridInfo, OutputDir, RunManifest, SolveQuality, MANIFEST_VERSION};
use crate::{CliError, Outcome};

struct Problem {
    path: PathBuf,
    sha256: String,
    loaded: LoadedProblem,
}

fn read_problem(path: &Path) -> Result<Problem, CliError> {
    let src = fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read problem file {}: {e}", path.display())))?;
    let loaded = load_problem(&src).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(Problem { path: path.to_path_buf(), sha256: sha256_hex(src.as_bytes()), loaded })
}

fn grid_from(p: &Problem, flags: &GridArgs) -> Result<Grid, CliError> {
    let file = p.loaded.grid;
    let pick = |flag: Option<usize>, from_file: Option<usize>, name: &str| {
        flag.or(from_file).ok_or_else(|| CliError::input(format!("--{name} is required (the problem file has no [grid] section)")))
    };
    let nt = pick(flags.nt, file.map(|g| g.nt), "nt")?;
    let nx = pick(flags.nx, file.map(|g| g.nx), "nx")?;
    let ny = pick(flags.ny, file.map(|g| g.ny), "ny")?;
    p.loaded.spec.build_grid(nt, nx, ny).map_err(|e| CliError::input(e.to_string()))
}

fn manifest(command: &str, p: &Problem, settings: serde_json::Value, started: u64) -> RunManifest {
    RunManifest {
        manifest_version: MANIFEST_VERSION,
        command: command.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        core_version: stopsurf::VERSION.into(),
        problem_file: p.path.display().to_string(),
        problem_sha256: p.sha256.clone(),
        grid: None,
        solver: None,
        quality: None,
        field_format: None,
        settings,
        inputs: Vec::new(),
        outputs: Vec::new(),
        started_unix: started,
        finished_unix: started,
    }
}

fn grid_info(g: &Grid) -> GridInfo {
    GridInfo { nt: g.nt, nx: g.nx, ny: g.ny, horizon: g.horizon(), domain: g.domain() }
}

fn report_diagnostics(p: &Problem, grid: &Grid) -> Result<(), CliError> {
    let diags = validate_spec(&p.loaded.spec, grid);
    for d in &diags {
        let tag = match d.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        };
        eprintln!("{tag} [{}]: {}", d.code, d.message);
    }
    if has_errors(&diags) {
        return Err(CliError::input(format!("{} failed validation", p.path.display())));
    }
    Ok(())
}

pub fn solve(a: &SolveArgs) -> Result<Outcome, CliError> {
    let started = unix_now();
    let p = read_problem(&a.problem)?;
    let grid = grid_from(&p, &a.grid)?;
    report_diagnostics(&p, &grid)?;
    let mut cfg = p.loaded.solver.clone();
    if let Some(v) = a.theta {
        cfg.theta = v;
    }
    if let Some(v) = a.omega {
        cfg.psor_omega = v;
    }
    if let Some(v) = a.tol {
        cfg.psor_tol = v;
    }
    if let Some(v) = a.max_iter {
        cfg.psor_max_iter = v;
    }
    if let Some(m) = a.method {
        cfg.obstacle_method = match m {
            MethodArg::Psor => ObstacleMethod::Psor,
            MethodArg::Penalty => ObstacleMethod::Penalty,
        };
    }
    let res = solve_backward(&p.loaded.spec, &grid, &cfg).map_err(|e| CliError::input(e.to_string()))?;

    let mut out = OutputDir::open(&a.out)?;
    let mask: Vec<f64> = res.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let dims = [grid.nt, grid.nx, grid.ny];
    let format = match a.format {
        FieldFormat::Binary => {
            out.write("value.grid", &gridio::encode(&dims, &res.value))?;
            out.write("mask.grid", &gridio::encode(&dims, &mask))?;
            "binary"
        }
        FieldFormat::Csv => {
            for (name, data) in [("value", &res.value), ("mask", &mask)] {
                let mut buf = Vec::new();
                gridio::write_csv(&mut buf, &grid, name, data).map_err(|e| CliError::input(e.to_string()))?;
                out.write(&format!("{name}.csv"), &buf)?;
            }
            "csv"
        }
    };
    let quality = SolveQuality {
        converged: res.converged,
        activation_tol: res.activation_tol,
        total_iterations: res.total_iterations(),
        max_level_residual: res.levels.iter().map(|l| l.residual).fold(0.0, f64::max),
        unconverged_levels: res.levels.iter().filter(|l| !l.converged).map(|l| l.level).collect(),
    };
    let mut m = manifest("solve", &p, json!({ "nt": grid.nt, "nx": grid.nx, "ny": grid.ny }), started);
    m.grid = Some(grid_info(&grid));
    m.solver = Some(cfg);
    m.field_format = Some(format.into());
    m.inputs.push(input_artifact(&p.path)?);
    let flagged = (!quality.converged).then(|| {
        let levels = &quality.unconverged_levels;
        let shown: Vec<String> = levels.iter().take(8).map(usize::to_string).collect();
        let more = if levels.len() > 8 { ", ..." } else { "" };
        format!("{} time level(s) hit the iteration budget: [{}{more}] (see manifest.json)", levels.len(), shown.join(", "))
    });
    m.quality = Some(quality);
    out.finish(m)?;
    println!("solved {}x{}x{} grid into {}", grid.nt, grid.nx, grid.ny, a.out.display());
    Ok(flagged.map_or(Outcome::Ok, Outcome::Flagged))
}

/// Rebuilds a solve from its artifact directory, after checking that it was
/// produced from the same problem file.
fn load_solution(p: &Problem, dir: &Path) -> Result<(SolveResult, RunManifest), CliError> {
    let m = RunManifest::read_verified(dir, "solve")?;
    if m.problem_sha256 != p.sha256 {
        return Err(CliError::input(format!(
            "{} was produced from a different problem file than {}",
            dir.display(),
            p.path.display()
        )));
    }
    let (Some(info), Some(quality), Some(cfg)) = (m.grid, m.quality.clone(), m.solver.clone()) else {
        return Err(CliError::input(format!("{}: manifest lacks grid or solver data", dir.display())));
    };
    let grid = p.loaded.spec.build_grid(info.nt, info.nx, info.ny).map_err(|e| CliError::input(e.to_string()))?;
    let n = grid.nt * grid.len2();
    let read = |name: &str| -> Result<Vec<f64>, CliError> {
        let path = dir.join(name);
        let err = |e: std::io::Error| CliError::input(format!("{}: {e}", path.display()));
        match m.field_format.as_deref() {
            Some("csv") => gridio::read_csv(&fs::read_to_string(&path).map_err(err)?, n).map_err(err),
            _ => {
                let (dims, data) = gridio::decode(&fs::read(&path).map_err(err)?).map_err(err)?;
                if dims != [info.nt, info.nx, info.ny] {
                    return Err(CliError::input(format!("{}: dimensions {dims:?} disagree with the manifest", path.display())));
                }
                Ok(data)
            }
        }
    };
    let ext = if m.field_format.as_deref() == Some("csv") { "csv" } else { "grid" };
    let value = read(&format!("value.{ext}"))?;
    let stored_mask = read(&format!("mask.{ext}"))?;
    let gain = gain_on_grid(&p.loaded.spec, &grid).map_err(|e| CliError::input(e.to_string()))?;
    let mut res = SolveResult::from_fields(grid, value, gain, quality.activation_tol);
    if res.mask.iter().zip(&stored_mask).any(|(&a, &b)| a != (b != 0.0)) {
        return Err(CliError::input(format!("{}: stored mask disagrees with the value field", dir.display())));
    }
    res.config = cfg;
    res.converged = quality.converged;
    Ok((res, m))
}

fn window_from(p: &Problem, flag: Option<WindowU>) -> Result<WindowU, CliError> {
    flag.or(p.loaded.window)
        .ok_or_else(|| CliError::input("--window is required (the problem file has no [window] section)"))
}

fn out_dir(explicit: &Option<PathBuf>, artifacts: Option<&PathBuf>) -> PathBuf {
    explicit.clone().or_else(|| artifacts.cloned()).unwrap_or_else(|| PathBuf::from("stopsurf-out"))
}

pub fn check(a: &CheckArgs) -> Result<Outcome, CliError> {
    let started = unix_now();
    let p = read_problem(&a.problem)?;
    let w = window_from(&p, a.window)?;
    let (grid, solution) = match &a.artifacts {
        Some(dir) => {
            let (res, _) = load_solution(&p, dir)?;
            (res.grid.clone(), Some(res))
        }
        None => (grid_from(&p, &a.grid)?, None),
    };
    w.index(&grid).map_err(|e| CliError::input(e.to_string()))?;
    let u = solution.as_ref().map(UField::from_solve);
    let report = assumption_report(&p.loaded.spec, &grid, &w, u.as_ref(), &CatalogOptions::default())
        .map_err(|e| CliError::input(e.to_string()))?;

    for c in &report.items {
        let mut line = format!("{}: {}", c.id, c.status.label());
        if c.id == "A3.1.iii-delta" {
            if let Some(d) = report.delta {
                line.push_str(&format!(", δ={d:.4}"));
            }
        }
        if c.status == Status::Fail {
            if let Some(n) = c.witness {
                line.push_str(&format!(", witness (t={}, x={}, y={})", n.t, n.x, n.y));
            }
            if !c.notes.is_empty() {
                line.push_str(&format!(": {}", c.notes));
            }
        }
        println!("{line}");
    }
    for note in &report.info {
        println!("info: {note}");
    }

    let dir = out_dir(&a.out, a.artifacts.as_ref());
    let mut out = OutputDir::open(&dir)?;
    out.write_json("assumptions.json", &report)?;
    let mut m = manifest("check", &p, json!({ "window": w, "with_solution": solution.is_some() }), started);
    m.grid = Some(grid_info(&grid));
    m.inputs.push(input_artifact(&p.path)?);
    if let Some(art) = &a.artifacts {
        m.inputs.push(input_artifact(&art.join(RunManifest::file_name("solve")))?);
    }
    out.finish(m)?;
    let failures = report.failures();
    Ok(if failures.is_empty() { Outcome::Ok } else { Outcome::Flagged(format!("failed items: {}", failures.join(", "))) })
}

fn monotone(a: MonotoneArg) -> Monotonicity {
    match a {
        MonotoneArg::Inc => Monotonicity::Increasing,
        MonotoneArg::Dec => Monotonicity::Decreasing,
        MonotoneArg::None => Monotonicity::Unspecified,
    }
}

fn extract(p: &Problem, res: &SolveResult, opts: &ExtractOptions) -> Result<BoundarySurface, CliError> {
    extract_boundary(res, p.loaded.spec.orientation, opts).map_err(|e| match e {
        BoundaryError::OrientationMismatch { .. } => CliError::input(format!("{e}; check `orientation` in the problem file")),
        other => CliError::input(other.to_string()),
    })
}

pub fn boundary(a: &BoundaryArgs) -> Result<Outcome, CliError> {
    let started = unix_now();
    let p = read_problem(&a.problem)?;
    let w = window_from(&p, a.window)?;
    let (res, _) = load_solution(&p, &a.artifacts)?;
    w.index(&res.grid).map_err(|e| CliError::input(e.to_string()))?;
    let opts = ExtractOptions {
        x_range: a.x_range.or(p.loaded.x_range),
        refinement: match a.refinement {
            RefinementArg::None => Refinement::None,
            RefinementArg::Linear => Refinement::Linear,
        },
    };
    let surface = extract(&p, &res, &opts)?;
    let finer = match &a.finer {
        Some(dir) => {
            let (fine, _) = load_solution(&p, dir)?;
            Some(extract(&p, &fine, &opts)?)
        }
        None => None,
    };
    let copts = ContinuityOptions {
        monotone_t: monotone(a.monotone_t),
        monotone_y: monotone(a.monotone_y),
        jump_factor: a.jump_factor,
        finer: finer.as_ref(),
    };
    let report = continuity_report(&surface, &w, &copts);
    let smooth = smooth_fit_residual(&res, &surface, &w).map_err(|e| CliError::input(e.to_string()))?;
    let gradient = monotone_gradient_check(&res, &w).map_err(|e| CliError::input(e.to_string()))?;

    let dir = out_dir(&a.out, Some(&a.artifacts));
    let mut out = OutputDir::open(&dir)?;
    out.write("boundary.csv", surface.csv().as_bytes())?;
    out.write_json("boundary.json", &surface)?;
    out.write_json("continuity.json", &report)?;
    out.write_json("smooth_fit.json", &json!({ "residual": smooth, "min_dx_u": gradient }))?;
    let settings = json!({
        "window": w,
        "x_range": opts.x_range,
        "refinement": opts.refinement,
        "jump_factor": a.jump_factor,
        "finer": a.finer.as_ref().map(|d| d.display().to_string()),
    });
    let mut m = manifest("boundary", &p, settings, started);
    m.grid = Some(grid_info(&res.grid));
    m.inputs.push(input_artifact(&p.path)?);
    m.inputs.push(input_artifact(&a.artifacts.join(RunManifest::file_name("solve")))?);
    if let Some(f) = &a.finer {
        m.inputs.push(input_artifact(&f.join(RunManifest::file_name("solve")))?);
    }
    out.finish(m)?;

    if report.samples == 0 {
        println!("no finite surface entries inside the window (sentinel-only surface)");
    }
    println!(
        "t: {} violations, max step {:.6}; y: {} violations, max step {:.6}",
        report.t.violations, report.t.max_step, report.y.violations, report.y.max_step
    );
    if let Some(d) = report.refinement_distance {
        println!("refinement distance {d:.6}");
    }
    let mut flags = Vec::new();
    if report.t.discontinuity {
        flags.push("t");
    }
    if report.y.discontinuity {
        flags.push("y");
    }
    Ok(if flags.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Flagged(format!("discontinuity flagged along {}", flags.join(" and ")))
    })
}

#[derive(Serialize)]
struct PolicyReport<'a> {
    start: (f64, f64, f64),
    config: SimConfig,
    pde_value: f64,
    policy: &'a PolicyEstimate,
    lsm: Option<&'a PolicyEstimate>,
    mean_jump_count: f64,
    exited_paths: usize,
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let started = unix_now();
    let p = read_problem(&a.problem)?;
    let (res, _) = load_solution(&p, &a.artifacts)?;
    let spec = &p.loaded.spec;
    let cfg = SimConfig {
        n_paths: a.paths,
        dt_sim: a.dt_sim.unwrap_or(res.grid.dt),
        seed: a.seed,
        antithetic: a.antithetic,
        truncation: if a.reflect { Truncation::ReflectReport } else { Truncation::Absorb },
    };
    cfg.check(Some(res.grid.dt)).map_err(|e| CliError::input(e.to_string()))?;
    let mc = |e: stopsurf::montecarlo::MonteCarloError| CliError::input(e.to_string());
    let batch = simulate_paths(spec, a.start, &cfg).map_err(mc)?;
    let horizon = spec.horizon;
    let checkpoints = a.checkpoints.clone().unwrap_or_else(|| vec![a.start.0, horizon / 4.0, horizon / 2.0]);
    let policy = evaluate_policy(&batch, &res, spec).map_err(mc)?;
    let lsm = match a.lsm_degree {
        0 => None,
        d => Some(longstaff_schwartz(&batch, spec, d).map_err(mc)?),
    };
    let points: Vec<MartingalePoint> = martingale_check(&batch, &res, spec, &checkpoints).map_err(mc)?;
    let pde_value = interpolate_value(&res, a.start.0, a.start.1, a.start.2);

    let dir = out_dir(&a.out, Some(&a.artifacts));
    let mut out = OutputDir::open(&dir)?;
    let report = PolicyReport {
        start: a.start,
        config: cfg,
        pde_value,
        policy: &policy,
        lsm: lsm.as_ref(),
        mean_jump_count: batch.mean_jump_count(),
        exited_paths: batch.exits.iter().filter(|e| e.is_some()).count(),
    };
    out.write_json("policy.json", &report)?;
    out.write_json("martingale.json", &json!({ "pde_value": pde_value, "points": points }))?;
    let mut csv = String::from("time,step,stopped_mean,stopped_se,unstopped_mean,unstopped_se\n");
    for c in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.time, c.step, c.stopped_mean, c.stopped_se, c.unstopped_mean, c.unstopped_se
        ));
    }
    out.write("martingale.csv", csv.as_bytes())?;
    if a.write_paths {
        let mut buf = Vec::new();
        batch.write_records(&mut buf).map_err(|e| CliError::input(e.to_string()))?;
        out.write("paths.bin", &buf)?;
    }
    let mut m = manifest("simulate", &p, json!({ "config": cfg, "start": a.start, "checkpoints": checkpoints, "lsm_degree": a.lsm_degree }), started);
    m.grid = Some(grid_info(&res.grid));
    m.inputs.push(input_artifact(&p.path)?);
    m.inputs.push(input_artifact(&a.artifacts.join(RunManifest::file_name("solve")))?);
    out.finish(m)?;

    println!("PDE value {pde_value:.6}");
    println!("policy    {:.6} ± {:.6}", policy.mean, policy.std_err);
    if let Some(l) = &lsm {
        println!("LSM       {:.6} ± {:.6}", l.mean, l.std_err);
    }
    for c in &points {
        println!(
            "t={:.4}: stopped {:.6} ± {:.6}, un-stopped {:.6} ± {:.6}",
            c.time, c.stopped_mean, c.stopped_se, c.unstopped_mean, c.unstopped_se
        );
    }
    Ok(Outcome::Ok)
}
