use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::policy::discounting;
use super::{MonteCarloError, PathBatch, PolicyEstimate};
use crate::model::ProblemSpec;

/// Monomials `x^a y^b` with `a + b <= degree`, in standardised variables.
fn basis_row(x: f64, y: f64, degree: usize, use_y: bool, out: &mut Vec<f64>) {
    out.clear();
    for total in 0..=degree {
        for b in 0..=total {
            if b > 0 && !use_y {
                continue;
            }
            out.push(x.powi((total - b) as i32) * y.powi(b as i32));
        }
    }
}

struct Fit {
    coef: DVector<f64>,
    degree: usize,
    use_y: bool,
    centre: (f64, f64),
    scale: (f64, f64),
}

impl Fit {
    fn predict(&self, x: f64, y: f64, row: &mut Vec<f64>) -> f64 {
        let xs = (x - self.centre.0) / self.scale.0;
        let ys = if self.use_y { (y - self.centre.1) / self.scale.1 } else { 0.0 };
        basis_row(xs, ys, self.degree, self.use_y, row);
        row.iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum()
    }
}

fn spread(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt();
    (m, sd)
}

/// Least squares by SVD; `None` if the design matrix is rank deficient.
fn solve_full_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-10 * smax.max(f64::MIN_POSITIVE);
    if smax <= 0.0 || svd.singular_values.iter().any(|&s| s <= eps) {
        return None;
    }
    svd.solve(b, eps).ok()
}

fn regress(xs: &[f64], ys: &[f64], target: &[f64], degree: usize, notes: &mut Vec<String>) -> Result<Fit, MonteCarloError> {
    let (mx, sx) = spread(xs);
    let (my, sy) = spread(ys);
    let use_x = sx > 1e-12 * (1.0 + mx.abs());
    let use_y = sy > 1e-12 * (1.0 + my.abs());
    let start = if use_x { degree } else { 0 };
    let b = DVector::from_column_slice(target);
    let mut row = Vec::new();
    for d in (0..=start).rev() {
        let uy = use_y && d > 0;
        basis_row(0.0, 0.0, d, uy, &mut row);
        let ncol = row.len();
        if xs.len() < ncol {
            continue;
        }
        let mut a = DMatrix::<f64>::zeros(xs.len(), ncol);
        for (r, (&x, &y)) in xs.iter().zip(ys).enumerate() {
            basis_row((x - mx) / sx.max(f64::MIN_POSITIVE), if uy { (y - my) / sy } else { 0.0 }, d, uy, &mut row);
            for (c, v) in row.iter().enumerate() {
                a[(r, c)] = *v;
            }
        }
        if let Some(coef) = solve_full_rank(&a, &b) {
            if d < degree {
                let note = format!("regression basis reduced from degree {degree} to {d}");
                if !notes.contains(&note) {
                    notes.push(note);
                }
            }
            return Ok(Fit { coef, degree: d, use_y: uy, centre: (mx, my), scale: (sx.max(f64::MIN_POSITIVE), sy.max(f64::MIN_POSITIVE)) });
        }
    }
    Err(MonteCarloError::SingularRegression)
}

/// Longstaff-Schwartz estimate with exercise allowed at every simulation
/// step. Continuation values are regressed on polynomials of total degree
/// `basis_degree` in `(x, y)` over the paths with positive gain. The value
/// is the in-sample mean of the realised cash flows.
pub fn longstaff_schwartz(batch: &PathBatch, p: &ProblemSpec, basis_degree: usize) -> Result<PolicyEstimate, MonteCarloError> {
    if !(2..=3).contains(&basis_degree) {
        return Err(MonteCarloError::InvalidConfig(format!("basis degree {basis_degree} is not 2 or 3")));
    }
    let nn = batch.n_steps;
    let paths: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..batch.n_paths)
        .into_par_iter()
        .map(|n| {
            let (disc, run) = discounting(p, batch, n, nn)?;
            let gains = (0..=nn)
                .map(|s| {
                    let t = batch.time(s);
                    let (x, y) = batch.at(n, s);
                    p.gain.at_level(s == nn).eval_txy(t, x, y).map_err(|source| MonteCarloError::Eval { t, x, y, source })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            Ok((disc, run, gains))
        })
        .collect::<Result<_, MonteCarloError>>()?;

    // Realised discounted cash flow of each path, and its stopping step.
    let mut cash: Vec<f64> = paths.iter().map(|(d, r, g)| r[nn] + d[nn] * g[nn]).collect();
    let mut stop = vec![nn; batch.n_paths];
    let mut notes = Vec::new();
    let mut row = Vec::new();
    for s in (1..nn).rev() {
        let itm: Vec<usize> = (0..batch.n_paths).filter(|&n| paths[n].2[s] > 0.0).collect();
        if itm.is_empty() {
            continue;
        }
        let xs: Vec<f64> = itm.iter().map(|&n| batch.at(n, s).0).collect();
        let ys: Vec<f64> = itm.iter().map(|&n| batch.at(n, s).1).collect();
        let target: Vec<f64> = itm.iter().map(|&n| (cash[n] - paths[n].1[s]) / paths[n].0[s]).collect();
        let fit = regress(&xs, &ys, &target, basis_degree, &mut notes)?;
        for (q, &n) in itm.iter().enumerate() {
            let exercise = paths[n].2[s];
            if exercise >= fit.predict(xs[q], ys[q], &mut row) {
                cash[n] = paths[n].1[s] + paths[n].0[s] * exercise;
                stop[n] = s;
            }
        }
    }
    let g0 = paths.first().map_or(0.0, |p| p.2[0]);
    let mut est = PolicyEstimate::from_samples(&cash, &stop, nn, notes);
    if g0 >= est.mean {
        est.mean = g0;
        est.std_err = 0.0;
        est.stop_histogram = vec![0; nn + 1];
        est.stop_histogram[0] = batch.n_paths;
    }
    Ok(est)
}
