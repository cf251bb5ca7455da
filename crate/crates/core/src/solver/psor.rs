use serde::Serialize;

/// Square sparse matrix in compressed-row form with the diagonal entry of
/// every row recorded.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub diag: Vec<usize>,
}

impl CsrMatrix {
    /// Builds a matrix from per-row `(column, value)` lists. Every row must
    /// hold a nonzero diagonal entry.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> CsrMatrix {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for (r, row) in rows.into_iter().enumerate() {
            let mut d = None;
            for (c, v) in row {
                if c == r {
                    d = Some(cols.len());
                }
                cols.push(c);
                vals.push(v);
            }
            diag.push(d.unwrap_or_else(|| panic!("row {r} has no diagonal entry")));
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals, diag }
    }

    pub fn diagonal(values: &[f64]) -> CsrMatrix {
        CsrMatrix::from_rows(values.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|p| self.vals[p] * x[self.cols[p]]).sum())
            .collect()
    }

    /// Whether every row is weakly diagonally dominant.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.n).all(|r| {
            let d = self.vals[self.diag[r]].abs();
            let off: f64 = (self.row_ptr[r]..self.row_ptr[r + 1])
                .filter(|&p| p != self.diag[r])
                .map(|p| self.vals[p].abs())
                .sum();
            d >= off
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PsorOutcome {
    #[serde(skip)]
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Largest update of the final sweep.
    pub residual: f64,
    pub converged: bool,
}

/// Projected SOR for `A x >= b, x >= obstacle, (A x - b)(x - obstacle) = 0`.
///
/// Sweeps rows in index order; each update is the relaxed Gauss–Seidel
/// value projected onto the obstacle. Rows flagged in `plain` are updated
/// without relaxation. Stops when the largest update of a sweep is below
/// `tol`. The starting point is `max(x0, obstacle)`.
pub fn psor_sweep(
    a: &CsrMatrix,
    b: &[f64],
    obstacle: Option<&[f64]>,
    x0: &[f64],
    omega: f64,
    tol: f64,
    max_iter: usize,
) -> PsorOutcome {
    psor_with_plain_rows(a, b, obstacle, x0, omega, tol, max_iter, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn psor_with_plain_rows(
    a: &CsrMatrix,
    b: &[f64],
    obstacle: Option<&[f64]>,
    x0: &[f64],
    omega: f64,
    tol: f64,
    max_iter: usize,
    plain: Option<&[bool]>,
) -> PsorOutcome {
    let mut x: Vec<f64> = match obstacle {
        Some(g) => x0.iter().zip(g).map(|(x, g)| x.max(*g)).collect(),
        None => x0.to_vec(),
    };
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        residual = 0.0;
        for r in 0..a.n {
            let mut s = b[r];
            for p in a.row_ptr[r]..a.row_ptr[r + 1] {
                if p != a.diag[r] {
                    s -= a.vals[p] * x[a.cols[p]];
                }
            }
            let gs = s / a.vals[a.diag[r]];
            let w = if plain.is_some_and(|pl| pl[r]) { 1.0 } else { omega };
            let mut new = x[r] + w * (gs - x[r]);
            if let Some(g) = obstacle {
                new = new.max(g[r]);
            }
            residual = residual.max((new - x[r]).abs());
            x[r] = new;
        }
        if residual < tol {
            return PsorOutcome { solution: x, iterations, residual, converged: true };
        }
    }
    PsorOutcome { solution: x, iterations, residual, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_examples() {
        let a = CsrMatrix::diagonal(&[2.0]);
        let out = psor_sweep(&a, &[1.0], Some(&[0.8]), &[0.0], 1.5, 1e-12, 100);
        assert_eq!(out.solution, vec![0.8]);
        assert_eq!(out.iterations, 1);
        let out = psor_sweep(&a, &[3.0], Some(&[0.8]), &[0.0], 1.5, 1e-12, 200);
        assert!((out.solution[0] - 1.5).abs() < 1e-11 && out.converged);
    }

    #[test]
    fn diagonal_pair() {
        let a = CsrMatrix::diagonal(&[1.0, 1.0]);
        let out = psor_sweep(&a, &[0.2, 0.9], Some(&[0.5, 0.5]), &[0.0, 0.0], 1.0, 1e-12, 10);
        assert_eq!(out.solution, vec![0.5, 0.9]);
    }

    #[test]
    fn tridiagonal_lcp_satisfies_complementarity() {
        let n = 50;
        let h = 1.0 / (n + 1) as f64;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0 / (h * h) + 1.0)];
                if i > 0 {
                    r.push((i - 1, -1.0 / (h * h)));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0 / (h * h)));
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        assert!(a.is_diagonally_dominant());
        let b = vec![-1.0; n];
        let g: Vec<f64> = (0..n).map(|i| 0.1 - ((i + 1) as f64 * h - 0.5).powi(2)).collect();
        let out = psor_sweep(&a, &b, Some(&g), &vec![0.0; n], 1.8, 1e-13, 100_000);
        assert!(out.converged);
        let ax = a.mul_vec(&out.solution);
        for i in 0..n {
            let slack = ax[i] - b[i];
            let gap = out.solution[i] - g[i];
            assert!(gap >= -1e-12 && slack >= -1e-7 && (slack * gap).abs() < 1e-7, "row {i}");
        }
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 2.0), (1, -1.0)], vec![(0, -1.0), (1, 2.0)]]);
        let out = psor_sweep(&a, &[1.0, 1.0], None, &[0.0, 0.0], 1.0, 1e-14, 1);
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }
}
