//! Backward θ-scheme for the obstacle problem with explicit jumps.

mod psor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprs::{EvalError, Expr};
use crate::model::{
    evaluate_field_at, gain_field, FaceRule, Field2, Grid, NodeEvalError, ProblemSpec, WindowU,
};
use crate::operators::{
    apply_jump_operator, apply_local_generator, build_jump_quadrature_at, slot, CoefficientFields, ExprGenerator,
    Exterior, JumpQuadrature, LocalStencil,
};

pub use psor::{psor_sweep, CsrMatrix, PsorOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleMethod {
    Psor,
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Implicit weight of the local operator, in `[0.5, 1]`.
    pub theta: f64,
    pub psor_omega: f64,
    pub psor_tol: f64,
    pub psor_max_iter: usize,
    pub obstacle_method: ObstacleMethod,
    pub penalty_rho: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            theta: 1.0,
            psor_omega: 1.2,
            psor_tol: 1e-8,
            psor_max_iter: 10_000,
            obstacle_method: ObstacleMethod::Psor,
            penalty_rho: 1e8,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidConfig(m.to_string()));
        if !(0.5..=1.0).contains(&self.theta) {
            return bad("theta must lie in [0.5, 1]");
        }
        if !(self.psor_omega > 0.0 && self.psor_omega < 2.0) {
            return bad("psor_omega must lie in (0, 2)");
        }
        if !(self.psor_tol > 0.0) {
            return bad("psor_tol must be positive");
        }
        if self.psor_max_iter == 0 {
            return bad("psor_max_iter must be positive");
        }
        if !(self.penalty_rho > 0.0) {
            return bad("penalty_rho must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("assembly failed: {0}")]
    Assembly(String),
    #[error("time step {dt} exceeds the explicit-jump bound 1/(total intensity) = {bound}")]
    StepTooLarge { dt: f64, bound: f64 },
}

impl From<NodeEvalError> for SolveError {
    fn from(e: NodeEvalError) -> Self {
        SolveError::Assembly(e.to_string())
    }
}

impl From<EvalError> for SolveError {
    fn from(e: EvalError) -> Self {
        SolveError::Assembly(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Value field, evaluated gain and exercise mask on every node.
///
/// Storage is `t` slowest, then `x`, then `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub grid: Grid,
    pub value: Vec<f64>,
    pub gain: Vec<f64>,
    pub mask: Vec<bool>,
    pub levels: Vec<LevelStats>,
    pub config: SolverConfig,
    /// Band below which `v - g` counts as stopped.
    pub activation_tol: f64,
    /// False when some level hit the iteration budget.
    pub converged: bool,
}

/// Width of the stopping band: `max(10 tol, 1e-8 max|g|)`.
pub fn activation_tolerance(tol: f64, gain: &[f64]) -> f64 {
    let scale = gain.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    (10.0 * tol).max(1e-8 * scale)
}

impl SolveResult {
    /// Wraps precomputed fields; the mask follows from `activation_tol`.
    pub fn from_fields(grid: Grid, value: Vec<f64>, gain: Vec<f64>, activation_tol: f64) -> SolveResult {
        assert_eq!(value.len(), grid.nt * grid.len2());
        assert_eq!(gain.len(), value.len());
        let mask = value.iter().zip(&gain).map(|(v, g)| v - g <= activation_tol).collect();
        SolveResult {
            grid,
            value,
            gain,
            mask,
            levels: Vec::new(),
            config: SolverConfig::default(),
            activation_tol,
            converged: true,
        }
    }

    #[inline]
    pub fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.grid.nx + i) * self.grid.ny + j
    }

    pub fn v(&self, k: usize, i: usize, j: usize) -> f64 {
        self.value[self.idx(k, i, j)]
    }

    pub fn g(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gain[self.idx(k, i, j)]
    }

    pub fn u(&self, k: usize, i: usize, j: usize) -> f64 {
        let n = self.idx(k, i, j);
        self.value[n] - self.gain[n]
    }

    pub fn stopped(&self, k: usize, i: usize, j: usize) -> bool {
        self.mask[self.idx(k, i, j)]
    }

    fn level(&self, data: &[f64], k: usize) -> Field2 {
        let n = self.grid.len2();
        Field2 { nx: self.grid.nx, ny: self.grid.ny, data: data[k * n..(k + 1) * n].to_vec() }
    }

    pub fn value_field(&self, k: usize) -> Field2 {
        self.level(&self.value, k)
    }

    pub fn gain_field(&self, k: usize) -> Field2 {
        self.level(&self.gain, k)
    }

    /// `u = v - g` at level `k`.
    pub fn u_field(&self, k: usize) -> Field2 {
        let mut f = self.value_field(k);
        let n = self.grid.len2();
        for (a, g) in f.data.iter_mut().zip(&self.gain[k * n..(k + 1) * n]) {
            *a -= g;
        }
        f
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.iterations).sum()
    }
}

fn face_rule<'a>(p: &'a ProblemSpec, grid: &Grid, i: usize, j: usize) -> &'a FaceRule {
    let ff = &p.far_field;
    if i == 0 {
        &ff.x_lo
    } else if i == grid.nx - 1 {
        &ff.x_hi
    } else if j == 0 {
        &ff.y_lo
    } else {
        &ff.y_hi
    }
}

/// Neighbours used by linear extrapolation from a boundary node inward.
fn inward(grid: &Grid, i: usize, j: usize) -> [(usize, usize); 2] {
    if i == 0 {
        [(1, j), (2, j)]
    } else if i == grid.nx - 1 {
        [(i - 1, j), (i - 2, j)]
    } else if j == 0 {
        [(i, 1), (i, 2)]
    } else {
        [(i, j - 1), (i, j - 2)]
    }
}

/// Boundary value at time `t` for Dirichlet faces, `None` for linear faces.
fn dirichlet_value(rule: &FaceRule, gain: &Field2, t: f64, x: f64, y: f64, n: usize) -> Result<Option<f64>, SolveError> {
    Ok(match rule {
        FaceRule::Gain => Some(gain.data[n]),
        FaceRule::Expression(e) => Some(e.eval_txy(t, x, y).map_err(|err| {
            SolveError::Assembly(format!("far-field expression: {err} at (t={t}, x={x}, y={y})"))
        })?),
        FaceRule::Linear => None,
    })
}

/// Matrix `I - theta dt (L - r)` on interior rows; boundary rows are
/// identity (Dirichlet) or `v_b - 2 v_1 + v_2 = 0` (linear).
fn assemble(p: &ProblemSpec, grid: &Grid, stencil: &LocalStencil, theta_dt: f64) -> CsrMatrix {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut rows = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let n = grid.idx(i, j);
            if stencil.is_interior(i, j) {
                let mut row = Vec::with_capacity(9);
                for di in -1isize..=1 {
                    for dj in -1isize..=1 {
                        let w = stencil.rows[n][slot(di, dj)];
                        let diag = di == 0 && dj == 0;
                        let a = if diag { 1.0 - theta_dt * w } else { -theta_dt * w };
                        if a != 0.0 || diag {
                            let c = grid.idx((i as isize + di) as usize, (j as isize + dj) as usize);
                            row.push((c, a));
                        }
                    }
                }
                rows.push(row);
            } else if matches!(face_rule(p, grid, i, j), FaceRule::Linear) {
                let [a, b] = inward(grid, i, j);
                rows.push(vec![(n, 1.0), (grid.idx(a.0, a.1), -2.0), (grid.idx(b.0, b.1), 1.0)]);
            } else {
                rows.push(vec![(n, 1.0)]);
            }
        }
    }
    CsrMatrix::from_rows(rows)
}

struct LevelOps {
    coeffs: CoefficientFields,
    stencil: LocalStencil,
}

impl LevelOps {
    fn at(p: &ProblemSpec, grid: &Grid, t: f64) -> Result<LevelOps, SolveError> {
        let coeffs = CoefficientFields::evaluate(p, grid, t)?;
        for (name, f) in [
            ("alpha1", &coeffs.alpha1),
            ("alpha2", &coeffs.alpha2),
            ("beta1", &coeffs.beta1),
            ("beta2", &coeffs.beta2),
            ("r", &coeffs.r),
        ] {
            if let Some(n) = f.data.iter().position(|v| !v.is_finite()) {
                return Err(SolveError::Assembly(format!(
                    "{name} is not finite at (t={t}, x={}, y={})",
                    grid.x[n / grid.ny],
                    grid.y[n % grid.ny]
                )));
            }
        }
        let stencil = LocalStencil::build(&coeffs, grid);
        Ok(LevelOps { coeffs, stencil })
    }
}

/// Solves the discrete obstacle problem backward from the horizon.
///
/// Each step solves `(I - θ dt L_k) v_k = v_{k+1} + (1-θ) dt L_{k+1} v_{k+1}
/// + dt A v_{k+1} + dt (θ f_k + (1-θ) f_{k+1})` subject to `v_k >= g_k`.
pub fn solve_backward(p: &ProblemSpec, grid: &Grid, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    cfg.check()?;
    let intensity: f64 = p.jumps.iter().map(|j| j.total_mass()).sum();
    if intensity > 0.0 && grid.dt * intensity > 1.0 {
        return Err(SolveError::StepTooLarge { dt: grid.dt, bound: 1.0 / intensity });
    }
    let (nt, n2) = (grid.nt, grid.len2());
    let coeff_time = {
        let c = &p.coefficients;
        let mut e: Vec<&Expr> = vec![&c.alpha1, &c.alpha2, &c.beta1, &c.beta2, &c.r];
        e.extend(c.running_cost.iter());
        e.iter().any(|e| e.depends_on(crate::exprs::Var::T))
    };
    let jumps_time = p.jumps.iter().any(|j| {
        j.gamma1.depends_on(crate::exprs::Var::T) || j.gamma2.depends_on(crate::exprs::Var::T)
    });

    let mut gain = vec![0.0; nt * n2];
    for k in 0..nt {
        let g = gain_field(p, grid, k)?;
        gain[k * n2..(k + 1) * n2].copy_from_slice(&g.data);
    }
    let mut value = vec![0.0; nt * n2];
    value[(nt - 1) * n2..].copy_from_slice(&gain[(nt - 1) * n2..]);

    let theta = cfg.theta;
    let dt = grid.dt;
    let mut ops_next = LevelOps::at(p, grid, grid.t[nt - 1])?;
    let mut quad_next: Option<JumpQuadrature> = if p.jumps.is_empty() {
        None
    } else {
        Some(build_jump_quadrature_at(p, grid, grid.t[nt - 1])?)
    };
    let mut ops_cur = if coeff_time { None } else { Some(LevelOps::at(p, grid, grid.t[0])?) };
    let mut matrix = ops_cur.as_ref().map(|o| assemble(p, grid, &o.stencil, theta * dt));
    let plain: Vec<bool> = (0..grid.nx).flat_map(|i| (0..grid.ny).map(move |j| grid.is_boundary(i, j))).collect();

    let mut levels = Vec::with_capacity(nt - 1);
    for k in (0..nt - 1).rev() {
        let t = grid.t[k];
        if coeff_time {
            let o = LevelOps::at(p, grid, t)?;
            matrix = Some(assemble(p, grid, &o.stencil, theta * dt));
            ops_cur = Some(o);
        }
        let ops = ops_cur.as_ref().expect("level operators");
        let a = matrix.as_ref().expect("level matrix");
        let v_next = Field2 { nx: grid.nx, ny: grid.ny, data: value[(k + 1) * n2..(k + 2) * n2].to_vec() };
        let g_cur = Field2 { nx: grid.nx, ny: grid.ny, data: gain[k * n2..(k + 1) * n2].to_vec() };

        let explicit_local = (theta < 1.0).then(|| apply_local_generator(&v_next, &ops_next.stencil));
        let jump = match &quad_next {
            Some(q) => {
                let gain_expr = p.gain.at_level(k + 1 == nt - 1);
                let ext = Exterior::FarField { rules: &p.far_field, gain: gain_expr, t: grid.t[k + 1] };
                Some(apply_jump_operator(&v_next, None, q, grid, ext))
            }
            None => None,
        };

        let mut rhs = vec![0.0; n2];
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let n = grid.idx(i, j);
                if ops.stencil.is_interior(i, j) {
                    let mut b = v_next.data[n];
                    if let Some(l) = &explicit_local {
                        b += (1.0 - theta) * dt * l.data[n];
                    }
                    if let Some(aj) = &jump {
                        b += dt * aj.data[n];
                    }
                    if let Some(f) = &ops.coeffs.running_cost {
                        b += dt * theta * f.data[n];
                    }
                    if let Some(f) = &ops_next.coeffs.running_cost {
                        b += dt * (1.0 - theta) * f.data[n];
                    }
                    rhs[n] = b;
                } else if let Some(d) =
                    dirichlet_value(face_rule(p, grid, i, j), &g_cur, t, grid.x[i], grid.y[j], n)?
                {
                    rhs[n] = d;
                }
            }
        }
        if let Some(n) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(SolveError::Assembly(format!(
                "non-finite right-hand side at (t={t}, x={}, y={})",
                grid.x[n / grid.ny],
                grid.y[n % grid.ny]
            )));
        }

        let out = match cfg.obstacle_method {
            ObstacleMethod::Psor => psor::psor_with_plain_rows(
                a,
                &rhs,
                Some(&g_cur.data),
                &v_next.data,
                cfg.psor_omega,
                cfg.psor_tol,
                cfg.psor_max_iter,
                Some(&plain),
            ),
            ObstacleMethod::Penalty => penalty_solve(a, &rhs, &g_cur.data, &v_next.data, cfg, &plain),
        };
        levels.push(LevelStats { level: k, iterations: out.iterations, residual: out.residual, converged: out.converged });
        value[k * n2..(k + 1) * n2].copy_from_slice(&out.solution);

        if coeff_time || k == nt - 2 {
            ops_next = LevelOps::at(p, grid, t)?;
        }
        if jumps_time {
            quad_next = Some(build_jump_quadrature_at(p, grid, t)?);
        }
    }
    levels.reverse();
    let activation_tol = activation_tolerance(cfg.psor_tol, &gain);
    let mask = value.iter().zip(&gain).map(|(v, g)| v - g <= activation_tol).collect();
    let converged = levels.iter().all(|l| l.converged);
    Ok(SolveResult {
        grid: grid.clone(),
        value,
        gain,
        mask,
        levels,
        config: cfg.clone(),
        activation_tol,
        converged,
    })
}

/// Penalty iteration: repeatedly solves `(A + P) x = b + P g` with
/// `P = rho` on nodes below the obstacle until the active set settles.
fn penalty_solve(a: &CsrMatrix, b: &[f64], g: &[f64], x0: &[f64], cfg: &SolverConfig, plain: &[bool]) -> PsorOutcome {
    let mut x = x0.to_vec();
    let mut active: Vec<bool> = x.iter().zip(g).map(|(x, g)| x < g).collect();
    let mut iterations = 0;
    let mut last = PsorOutcome { solution: x.clone(), iterations: 0, residual: 0.0, converged: true };
    for _ in 0..100 {
        let mut pa = a.clone();
        let mut pb = b.to_vec();
        for r in 0..a.n {
            if active[r] {
                pa.vals[pa.diag[r]] += cfg.penalty_rho;
                pb[r] += cfg.penalty_rho * g[r];
            }
        }
        let budget = cfg.psor_max_iter.saturating_sub(iterations).max(1);
        last = psor::psor_with_plain_rows(&pa, &pb, None, &x, cfg.psor_omega, cfg.psor_tol, budget, Some(plain));
        iterations += last.iterations;
        x = last.solution.clone();
        // A penalized node is released when its unpenalized Gauss–Seidel
        // value clears the obstacle; comparing x with g directly would
        // hinge on differences of order 1/rho.
        let next: Vec<bool> = (0..a.n)
            .map(|r| {
                if active[r] {
                    let mut s = b[r];
                    for q in a.row_ptr[r]..a.row_ptr[r + 1] {
                        if q != a.diag[r] {
                            s -= a.vals[q] * x[a.cols[q]];
                        }
                    }
                    s / a.vals[a.diag[r]] <= g[r]
                } else {
                    x[r] < g[r]
                }
            })
            .collect();
        if next == active || !last.converged {
            break;
        }
        active = next;
    }
    PsorOutcome { solution: x, iterations, residual: last.residual, converged: last.converged }
}

/// Discrete `(d/dt + L + A - r) v + f` at level `k` of a solved field,
/// using the same time weighting as the solver. Boundary nodes are zero.
pub fn discrete_generator_residual(p: &ProblemSpec, res: &SolveResult, k: usize) -> Result<Field2, SolveError> {
    let grid = &res.grid;
    let theta = res.config.theta;
    let cur = LevelOps::at(p, grid, grid.t[k])?;
    let next = LevelOps::at(p, grid, grid.t[k + 1])?;
    let vk = res.value_field(k);
    let vn = res.value_field(k + 1);
    let lk = apply_local_generator(&vk, &cur.stencil);
    let ln = apply_local_generator(&vn, &next.stencil);
    let jump = if p.jumps.is_empty() {
        None
    } else {
        let q = build_jump_quadrature_at(p, grid, grid.t[k + 1])?;
        let gain_expr = p.gain.at_level(k + 1 == grid.nt - 1);
        let ext = Exterior::FarField { rules: &p.far_field, gain: gain_expr, t: grid.t[k + 1] };
        Some(apply_jump_operator(&vn, None, &q, grid, ext))
    };
    let mut out = Field2::zeros(grid.nx, grid.ny);
    for i in 1..grid.nx - 1 {
        for j in 1..grid.ny - 1 {
            let n = grid.idx(i, j);
            let mut r = (vn.data[n] - vk.data[n]) / grid.dt + theta * lk.data[n] + (1.0 - theta) * ln.data[n];
            if let Some(a) = &jump {
                r += a.data[n];
            }
            if let Some(f) = &cur.coeffs.running_cost {
                r += theta * f.data[n];
            }
            if let Some(f) = &next.coeffs.running_cost {
                r += (1.0 - theta) * f.data[n];
            }
            out.data[n] = r;
        }
    }
    Ok(out)
}

/// Largest `|(d/dt + L + A - r) gtilde - f|` over the window nodes, where `f`
/// is the running cost (zero when absent).
pub fn dynkin_absorb_check(p: &ProblemSpec, gtilde: &Expr, window: &WindowU, grid: &Grid) -> Result<f64, DynkinError> {
    let ix = window.index(grid).map_err(|e| DynkinError::Window(e.to_string()))?;
    let gen = ExprGenerator::new(gtilde);
    let mut worst = 0.0f64;
    for (k, i, j) in ix.nodes() {
        let (t, x, y) = (grid.t[k], grid.x[i], grid.y[j]);
        let at = |source: EvalError| DynkinError::Eval(NodeEvalError { t, x, y, source });
        let lhs = gen.apply(p, t, x, y).map_err(at)?;
        let f = match &p.coefficients.running_cost {
            Some(f) => f.eval_txy(t, x, y).map_err(at)?,
            None => 0.0,
        };
        worst = worst.max((lhs - f).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynkinError {
    #[error("{0}")]
    Window(String),
    #[error(transparent)]
    Eval(NodeEvalError),
}

/// Gain evaluated on every level, `t` slowest. Exposed for callers that
/// build manufactured results.
pub fn gain_on_grid(p: &ProblemSpec, grid: &Grid) -> Result<Vec<f64>, NodeEvalError> {
    let mut out = Vec::with_capacity(grid.nt * grid.len2());
    for k in 0..grid.nt {
        out.extend(gain_field(p, grid, k)?.data);
    }
    Ok(out)
}

/// Expression evaluated on every level, `t` slowest.
pub fn expr_on_grid(e: &Expr, grid: &Grid) -> Result<Vec<f64>, NodeEvalError> {
    let mut out = Vec::with_capacity(grid.nt * grid.len2());
    for &t in &grid.t {
        out.extend(evaluate_field_at(e, grid, t)?.data);
    }
    Ok(out)
}
