//! Python module `stopsurf_py`: load a problem file, solve it, and run the
//! hypothesis catalog, boundary extraction and Monte Carlo checks on the
//! result. Reports come back as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use serde_json::json;
use stopsurf::boundary::{
    continuity_report, extract_boundary, monotone_gradient_check, smooth_fit_residual, BoundarySurface, ContinuityOptions,
    ExtractOptions, Monotonicity, Refinement,
};
use stopsurf::hypotheses::{assumption_report, CatalogOptions, UField};
use stopsurf::model::file::{load_problem, LoadedProblem};
use stopsurf::model::{has_errors, validate_spec, Grid, Severity, WindowU};
use stopsurf::montecarlo::{
    evaluate_policy, interpolate_value, longstaff_schwartz, martingale_check, simulate_paths, SimConfig, Truncation,
};
use stopsurf::solver::{solve_backward, SolveResult};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

type Window6 = (f64, f64, f64, f64, f64, f64);

fn window_or(problem: &LoadedProblem, w: Option<Window6>) -> PyResult<WindowU> {
    match w {
        Some((t1, t2, xd, xu, yd, yu)) => Ok(WindowU::new((t1, t2), (xd, xu), (yd, yu))),
        None => problem.window.ok_or_else(|| value_err("no window given and the problem file has no [window] section")),
    }
}

fn refinement(name: &str) -> PyResult<Refinement> {
    match name {
        "none" => Ok(Refinement::None),
        "linear" => Ok(Refinement::Linear),
        other => Err(value_err(format!("refinement must be 'none' or 'linear', got {other:?}"))),
    }
}

/// A parsed problem file.
#[pyclass(module = "stopsurf_py", frozen)]
struct Problem {
    inner: Arc<LoadedProblem>,
}

impl Problem {
    fn grid(&self, nt: Option<usize>, nx: Option<usize>, ny: Option<usize>) -> PyResult<Grid> {
        let file = self.inner.grid;
        let pick = |v: Option<usize>, f: Option<usize>, name: &str| {
            v.or(f).ok_or_else(|| value_err(format!("{name} is required (the problem file has no [grid] section)")))
        };
        let nt = pick(nt, file.map(|g| g.nt), "nt")?;
        let nx = pick(nx, file.map(|g| g.nx), "nx")?;
        let ny = pick(ny, file.map(|g| g.ny), "ny")?;
        self.inner.spec.build_grid(nt, nx, ny).map_err(value_err)
    }
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn from_toml(src: &str) -> PyResult<Problem> {
        Ok(Problem { inner: Arc::new(load_problem(src).map_err(value_err)?) })
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.spec.horizon
    }

    /// `(nt, nx, ny)` from the `[grid]` section, if present.
    #[getter]
    fn grid_counts(&self) -> Option<(usize, usize, usize)> {
        self.inner.grid.map(|g| (g.nt, g.nx, g.ny))
    }

    /// `(t1, t2, x_d, x_u, y_d, y_u)` from the `[window]` section, if present.
    #[getter]
    fn window(&self) -> Option<Window6> {
        self.inner.window.map(|w| (w.t1, w.t2, w.x_d, w.x_u, w.y_d, w.y_u))
    }

    /// Diagnostics as `(severity, code, message)` triples.
    #[pyo3(signature = (nt=None, nx=None, ny=None))]
    fn validate(&self, nt: Option<usize>, nx: Option<usize>, ny: Option<usize>) -> PyResult<Vec<(String, String, String)>> {
        let grid = self.grid(nt, nx, ny)?;
        Ok(validate_spec(&self.inner.spec, &grid)
            .into_iter()
            .map(|d| {
                let sev = match d.severity {
                    Severity::Error => "error",
                    Severity::Warning => "warning",
                    Severity::Info => "info",
                };
                (sev.to_string(), d.code.to_string(), d.message)
            })
            .collect())
    }

    /// Solves backward in time. Grid counts default to the `[grid]` section
    /// and solver settings to the `[solver]` section.
    #[pyo3(signature = (nt=None, nx=None, ny=None, theta=None, tol=None, max_iter=None))]
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        py: Python<'_>,
        nt: Option<usize>,
        nx: Option<usize>,
        ny: Option<usize>,
        theta: Option<f64>,
        tol: Option<f64>,
        max_iter: Option<usize>,
    ) -> PyResult<Solution> {
        let grid = self.grid(nt, nx, ny)?;
        let diags = validate_spec(&self.inner.spec, &grid);
        if has_errors(&diags) {
            let msgs: Vec<String> =
                diags.iter().filter(|d| d.severity == Severity::Error).map(|d| format!("[{}] {}", d.code, d.message)).collect();
            return Err(value_err(msgs.join("; ")));
        }
        let mut cfg = self.inner.solver.clone();
        if let Some(v) = theta {
            cfg.theta = v;
        }
        if let Some(v) = tol {
            cfg.psor_tol = v;
        }
        if let Some(v) = max_iter {
            cfg.psor_max_iter = v;
        }
        let problem = Arc::clone(&self.inner);
        let res = py.detach(move || solve_backward(&problem.spec, &grid, &cfg)).map_err(value_err)?;
        Ok(Solution { problem: Arc::clone(&self.inner), res: Arc::new(res) })
    }
}

/// Value field and exercise mask on the space-time grid, stored with `t`
/// slowest and `y` fastest.
#[pyclass(module = "stopsurf_py", frozen)]
struct Solution {
    problem: Arc<LoadedProblem>,
    res: Arc<SolveResult>,
}

impl Solution {
    fn surface(&self, x_range: Option<(f64, f64)>, refine: &str) -> PyResult<BoundarySurface> {
        let opts = ExtractOptions { x_range: x_range.or(self.problem.x_range), refinement: refinement(refine)? };
        extract_boundary(&self.res, self.problem.spec.orientation, &opts).map_err(value_err)
    }
}

#[pymethods]
impl Solution {
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let g = &self.res.grid;
        (g.nt, g.nx, g.ny)
    }

    #[getter]
    fn converged(&self) -> bool {
        self.res.converged
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.res.grid.t.clone()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.res.grid.x.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.res.grid.y.clone()
    }

    /// Flat value field in storage order.
    fn value(&self) -> Vec<f64> {
        self.res.value.clone()
    }

    /// Flat exercise mask in storage order.
    fn mask(&self) -> Vec<bool> {
        self.res.mask.clone()
    }

    /// Trilinear interpolation of the value field.
    fn value_at(&self, t: f64, x: f64, y: f64) -> f64 {
        interpolate_value(&self.res, t, x, y)
    }

    /// Runs the hypothesis catalog with `u = v - g` from this solution.
    #[pyo3(signature = (window=None))]
    fn check<'py>(&self, py: Python<'py>, window: Option<Window6>) -> PyResult<Bound<'py, PyAny>> {
        let w = window_or(&self.problem, window)?;
        let u = UField::from_solve(&self.res);
        let report =
            assumption_report(&self.problem.spec, &self.res.grid, &w, Some(&u), &CatalogOptions::default()).map_err(value_err)?;
        to_py(py, &report)
    }

    /// The stopping surface `x*(t, y)`; unbounded rows hold `"+inf"` / `"-inf"`.
    #[pyo3(signature = (x_range=None, refinement="none"))]
    fn extract<'py>(&self, py: Python<'py>, x_range: Option<(f64, f64)>, refinement: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.surface(x_range, refinement)?)
    }

    /// Continuity and smooth-fit diagnostics of the surface on a window.
    #[pyo3(signature = (window=None, x_range=None, jump_factor=10.0))]
    fn boundary_report<'py>(
        &self,
        py: Python<'py>,
        window: Option<Window6>,
        x_range: Option<(f64, f64)>,
        jump_factor: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let w = window_or(&self.problem, window)?;
        let surface = self.surface(x_range, "none")?;
        let opts = ContinuityOptions {
            monotone_t: Monotonicity::Unspecified,
            monotone_y: Monotonicity::Unspecified,
            jump_factor,
            finer: None,
        };
        let continuity = continuity_report(&surface, &w, &opts);
        let smooth = smooth_fit_residual(&self.res, &surface, &w).map_err(value_err)?;
        let gradient = monotone_gradient_check(&self.res, &w).map_err(value_err)?;
        to_py(py, &json!({ "continuity": continuity, "smooth_fit": { "residual": smooth, "min_dx_u": gradient } }))
    }

    /// Simulates paths from `start = (t, x, y)` and evaluates the stopping
    /// rule `v <= g`, a Longstaff-Schwartz estimate (`lsm_degree` 0 skips
    /// it) and the martingale check at `checkpoints`.
    #[pyo3(signature = (start, n_paths=10_000, seed=1, dt_sim=None, antithetic=false, lsm_degree=3, checkpoints=None))]
    #[allow(clippy::too_many_arguments)]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        start: (f64, f64, f64),
        n_paths: usize,
        seed: u64,
        dt_sim: Option<f64>,
        antithetic: bool,
        lsm_degree: usize,
        checkpoints: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = SimConfig {
            n_paths,
            dt_sim: dt_sim.unwrap_or(self.res.grid.dt),
            seed,
            antithetic,
            truncation: Truncation::Absorb,
        };
        cfg.check(Some(self.res.grid.dt)).map_err(value_err)?;
        let horizon = self.problem.spec.horizon;
        let checkpoints = checkpoints.unwrap_or_else(|| vec![start.0, horizon / 4.0, horizon / 2.0]);
        let (problem, res) = (Arc::clone(&self.problem), Arc::clone(&self.res));
        let out = py.detach(move || {
            let spec = &problem.spec;
            let batch = simulate_paths(spec, start, &cfg)?;
            let policy = evaluate_policy(&batch, &res, spec)?;
            let lsm = match lsm_degree {
                0 => None,
                d => Some(longstaff_schwartz(&batch, spec, d)?),
            };
            let points = martingale_check(&batch, &res, spec, &checkpoints)?;
            Ok::<_, stopsurf::montecarlo::MonteCarloError>(json!({
                "config": cfg,
                "pde_value": interpolate_value(&res, start.0, start.1, start.2),
                "policy": policy,
                "lsm": lsm,
                "martingale": points,
                "mean_jump_count": batch.mean_jump_count(),
            }))
        });
        to_py(py, &out.map_err(value_err)?)
    }
}

/// Reads and parses a problem file.
#[pyfunction]
fn load(path: PathBuf) -> PyResult<Problem> {
    let src = std::fs::read_to_string(&path)?;
    Problem::from_toml(&src).map_err(|e| value_err(format!("{}: {e}", path.display())))
}

#[pymodule]
fn stopsurf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", stopsurf::VERSION)?;
    m.add("CATALOG", stopsurf::hypotheses::CATALOG.to_vec())?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_class::<Problem>()?;
    m.add_class::<Solution>()?;
    Ok(())
}
