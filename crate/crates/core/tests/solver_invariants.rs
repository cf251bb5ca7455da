mod common;

use common::{e, put_spec};
use stopsurf::boundary::{extract_boundary, ExtractOptions};
use stopsurf::exprs::{parse_with, Symbols};
use stopsurf::model::{Atom, CoefficientSet, DomainBox, FaceRule, FarField, GainSpec, JumpComponent, ProblemSpec};
use stopsurf::solver::{discrete_generator_residual, solve_backward, SolveResult, SolverConfig};

/// Small two-dimensional problem with a correlated diffusion and one jump.
fn jump_problem(gain: &str) -> ProblemSpec {
    let coefficients = CoefficientSet {
        alpha1: e("0.3*y - 0.2*x"),
        alpha2: e("0.1*(0.5 - y)"),
        beta1: e("0.05 + 0.02*y"),
        beta2: e("0.04"),
        rho: 0.4,
        r: e("0.08"),
        running_cost: None,
    };
    let domain = DomainBox { x_lo: -2.0, x_hi: 2.0, y_lo: 0.0, y_hi: 1.0 };
    let mut p = ProblemSpec::new(coefficients, GainSpec::new(e(gain)), domain, 1.0);
    let m = |s: &str| parse_with(s, &Symbols::with_marks(1)).unwrap();
    p.jumps.push(JumpComponent::with_atoms(m("-0.2"), m("0.05"), 1, vec![Atom { mark: vec![0.0], weight: 0.8 }], m("0.2")));
    p.far_field = FarField { x_lo: FaceRule::Gain, x_hi: FaceRule::Linear, y_lo: FaceRule::Linear, y_hi: FaceRule::Linear };
    p
}

fn solve(p: &ProblemSpec, nt: usize, nx: usize, ny: usize) -> SolveResult {
    let grid = p.build_grid(nt, nx, ny).unwrap();
    solve_backward(p, &grid, &SolverConfig::default()).unwrap()
}

#[test]
fn value_dominates_the_obstacle() {
    let res = solve(&jump_problem("pos(0.5 - x)"), 41, 41, 11);
    let worst = res.value.iter().zip(&res.gain).map(|(v, g)| v - g).fold(f64::INFINITY, f64::min);
    assert!(worst >= -res.config.psor_tol, "min(v - g) = {worst}");
}

#[test]
fn value_is_nonincreasing_in_time_for_homogeneous_data() {
    let p = jump_problem("pos(0.5 - x)");
    assert!(p.is_time_homogeneous());
    let res = solve(&p, 41, 41, 11);
    let g = &res.grid;
    let tol = res.config.psor_tol;
    for k in 0..g.nt - 1 {
        for i in 0..g.nx {
            for j in 0..g.ny {
                assert!(res.v(k + 1, i, j) <= res.v(k, i, j) + tol, "({k}, {i}, {j})");
            }
        }
    }
}

#[test]
fn raising_the_gain_never_lowers_the_value() {
    let low = solve(&jump_problem("pos(0.5 - x)"), 31, 41, 11);
    let high = solve(&jump_problem("pos(0.5 - x) + 0.05*exp(-x^2)"), 31, 41, 11);
    let tol = 2.0 * low.config.psor_tol;
    for (a, b) in low.value.iter().zip(&high.value) {
        assert!(*b >= a - tol, "{b} < {a}");
    }
}

#[test]
fn variational_inequality_holds_discretely() {
    let p = jump_problem("pos(0.5 - x)");
    let res = solve(&p, 41, 41, 11);
    let g = &res.grid;
    // PSOR stops on update size; in generator units that allows roughly
    // tol * (1/dt + 2 beta/h^2) per node.
    let tol = 1e-5;
    let mut worst_cont: f64 = 0.0;
    for k in 0..g.nt - 1 {
        let r = discrete_generator_residual(&p, &res, k).unwrap();
        for i in 1..g.nx - 1 {
            for j in 1..g.ny - 1 {
                let v = r.at(i, j);
                assert!(v <= tol, "residual {v} at ({k}, {i}, {j})");
                if !res.stopped(k, i, j) {
                    worst_cont = worst_cont.max(v.abs());
                }
            }
        }
    }
    assert!(worst_cont <= tol, "continuation residual {worst_cont}");
}

#[test]
fn reflected_problem_mirrors_the_solution() {
    let p = jump_problem("pos(0.5 - x)");
    let a = solve(&p, 21, 41, 11);
    let b = solve(&p.reflected(), 21, 41, 11);
    let g = &a.grid;
    let mut worst: f64 = 0.0;
    for k in 0..g.nt {
        for i in 0..g.nx {
            for j in 0..g.ny {
                worst = worst.max((a.v(k, i, j) - b.v(k, g.nx - 1 - i, j)).abs());
            }
        }
    }
    assert!(worst <= 1e-6, "mirror mismatch {worst}");
}

#[test]
fn put_rows_agree_and_extraction_is_deterministic() {
    let p = put_spec();
    let res = solve(&p, 51, 101, 7);
    let g = &res.grid;
    for k in 0..g.nt {
        for i in 0..g.nx {
            assert_eq!(res.v(k, i, 2), res.v(k, i, 3));
        }
    }
    let opts = ExtractOptions { x_range: Some((60.0, 115.0)), ..Default::default() };
    let b1 = extract_boundary(&res, p.orientation, &opts).unwrap();
    let b2 = extract_boundary(&res, p.orientation, &opts).unwrap();
    assert_eq!(b1, b2);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let p = jump_problem("pos(0.5 - x)");
    let run = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| solve(&p, 11, 41, 11));
    assert_eq!(run(1).value, run(3).value);
}
