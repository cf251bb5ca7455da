use rayon::prelude::*;

use crate::model::{evaluate_field_at, Field2, Grid, NodeEvalError, ProblemSpec};

/// Coefficient fields of the local generator at one time.
#[derive(Debug, Clone)]
pub struct CoefficientFields {
    pub alpha1: Field2,
    pub alpha2: Field2,
    pub beta1: Field2,
    pub beta2: Field2,
    pub beta_bar: Field2,
    pub r: Field2,
    pub running_cost: Option<Field2>,
}

impl CoefficientFields {
    pub fn evaluate(p: &ProblemSpec, grid: &Grid, t: f64) -> Result<CoefficientFields, NodeEvalError> {
        let c = &p.coefficients;
        let beta1 = evaluate_field_at(&c.beta1, grid, t)?;
        let beta2 = evaluate_field_at(&c.beta2, grid, t)?;
        let mut beta_bar = Field2::zeros(grid.nx, grid.ny);
        for (n, v) in beta_bar.data.iter_mut().enumerate() {
            *v = c.beta_bar(beta1.data[n], beta2.data[n]);
        }
        Ok(CoefficientFields {
            alpha1: evaluate_field_at(&c.alpha1, grid, t)?,
            alpha2: evaluate_field_at(&c.alpha2, grid, t)?,
            beta1,
            beta2,
            beta_bar,
            r: evaluate_field_at(&c.r, grid, t)?,
            running_cost: c.running_cost.as_ref().map(|f| evaluate_field_at(f, grid, t)).transpose()?,
        })
    }
}

/// Position of offset `(di, dj)` in a 9-point row.
#[inline]
pub fn slot(di: isize, dj: isize) -> usize {
    ((di + 1) * 3 + (dj + 1)) as usize
}

/// 9-point discretization of `beta1 dxx + beta2 dyy + 2 beta_bar dxy +
/// alpha1 dx + alpha2 dy - r` at one time level. Rows exist for interior
/// nodes only; boundary nodes carry zero rows.
#[derive(Debug, Clone)]
pub struct LocalStencil {
    pub nx: usize,
    pub ny: usize,
    pub rows: Vec<[f64; 9]>,
    /// Whether the drift in x (resp. y) is upwinded at the node.
    pub upwind: Vec<(bool, bool)>,
}

/// Second-derivative plus drift weights along one axis: `(minus, centre, plus)`.
fn axis_weights(beta: f64, alpha: f64, h: f64) -> ([f64; 3], bool) {
    let diff = beta / (h * h);
    let mut w = [diff, -2.0 * diff, diff];
    let upwind = alpha.abs() * h > 2.0 * beta;
    if upwind {
        if alpha > 0.0 {
            w[1] -= alpha / h;
            w[2] += alpha / h;
        } else {
            w[0] -= alpha / h;
            w[1] += alpha / h;
        }
    } else {
        w[0] -= alpha / (2.0 * h);
        w[2] += alpha / (2.0 * h);
    }
    (w, upwind)
}

impl LocalStencil {
    pub fn build(c: &CoefficientFields, grid: &Grid) -> LocalStencil {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut rows = vec![[0.0; 9]; nx * ny];
        let mut upwind = vec![(false, false); nx * ny];
        rows.par_chunks_mut(ny).zip(upwind.par_chunks_mut(ny)).enumerate().for_each(|(i, (row, up))| {
            if i == 0 || i == nx - 1 {
                return;
            }
            for j in 1..ny - 1 {
                let n = i * ny + j;
                let (wx, ux) = axis_weights(c.beta1.data[n], c.alpha1.data[n], grid.hx);
                let (wy, uy) = axis_weights(c.beta2.data[n], c.alpha2.data[n], grid.hy);
                let s = &mut row[j];
                s[slot(-1, 0)] += wx[0];
                s[slot(0, 0)] += wx[1] + wy[1] - c.r.data[n];
                s[slot(1, 0)] += wx[2];
                s[slot(0, -1)] += wy[0];
                s[slot(0, 1)] += wy[2];
                let m = 2.0 * c.beta_bar.data[n] / (4.0 * grid.hx * grid.hy);
                s[slot(1, 1)] += m;
                s[slot(-1, -1)] += m;
                s[slot(1, -1)] -= m;
                s[slot(-1, 1)] -= m;
                up[j] = (ux, uy);
            }
        });
        LocalStencil { nx, ny, rows, upwind }
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.nx && j + 1 < self.ny
    }

    /// `(L - r) f` at interior node `(i, j)`.
    #[inline]
    pub fn apply_at(&self, f: &Field2, i: usize, j: usize) -> f64 {
        let row = &self.rows[i * self.ny + j];
        let mut acc = 0.0;
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                let w = row[slot(di, dj)];
                if w != 0.0 {
                    acc += w * f.at((i as isize + di) as usize, (j as isize + dj) as usize);
                }
            }
        }
        acc
    }
}

/// Applies the local generator to `f`, whose boundary nodes hold the
/// far-field (ghost) values. Boundary nodes of the result are zero.
pub fn apply_local_generator(f: &Field2, stencil: &LocalStencil) -> Field2 {
    let ny = stencil.ny;
    let mut out = Field2::zeros(stencil.nx, ny);
    out.data.par_chunks_mut(ny).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            if stencil.is_interior(i, j) {
                *v = stencil.apply_at(f, i, j);
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::parse;
    use crate::model::{CoefficientSet, DomainBox, GainSpec};

    fn spec(a1: &str, a2: &str, b1: &str, b2: &str, rho: f64, r: &str) -> ProblemSpec {
        let p = |s: &str| parse(s).unwrap();
        let c = CoefficientSet {
            alpha1: p(a1),
            alpha2: p(a2),
            beta1: p(b1),
            beta2: p(b2),
            rho,
            r: p(r),
            running_cost: None,
        };
        ProblemSpec::new(c, GainSpec::new(p("0")), DomainBox { x_lo: 0.0, x_hi: 2.0, y_lo: 0.0, y_hi: 2.0 }, 1.0)
    }

    fn stencil(p: &ProblemSpec, g: &Grid) -> LocalStencil {
        LocalStencil::build(&CoefficientFields::evaluate(p, g, 0.0).unwrap(), g)
    }

    fn interior(g: &Grid) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..g.nx - 1).flat_map(move |i| (1..g.ny - 1).map(move |j| (i, j)))
    }

    #[test]
    fn quadratic_exactness() {
        let p = spec("0", "0", "1", "1", 0.0, "0");
        let g = p.build_grid(3, 21, 21).unwrap();
        let f = Field2::from_fn(&g, |x, y| x * x + y * y);
        let out = apply_local_generator(&f, &stencil(&p, &g));
        for (i, j) in interior(&g) {
            assert!((out.at(i, j) - 4.0).abs() < 1e-9);
        }
        assert_eq!(out.at(0, 3), 0.0);
    }

    #[test]
    fn cubic_second_derivative() {
        let p = spec("0", "0", "1", "0", 0.0, "0");
        let g = p.build_grid(3, 21, 3).unwrap();
        assert!((g.hx - 0.1).abs() < 1e-15);
        let f = Field2::from_fn(&g, |x, _| x * x * x);
        let out = apply_local_generator(&f, &stencil(&p, &g));
        let v = out.at(10, 1);
        assert!((5.99..=6.01).contains(&v), "{v}");
    }

    #[test]
    fn mixed_term_on_bilinear() {
        let p = spec("0", "0", "2", "2", 0.5, "0");
        let g = p.build_grid(3, 11, 11).unwrap();
        let f = Field2::from_fn(&g, |x, y| x * y);
        let out = apply_local_generator(&f, &stencil(&p, &g));
        for (i, j) in interior(&g) {
            assert!((out.at(i, j) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_gives_minus_r() {
        let p = spec("x", "0.3*y", "0.1", "0.2", -0.4, "0.07");
        let g = p.build_grid(3, 9, 9).unwrap();
        let out = apply_local_generator(&Field2::constant(9, 9, 3.0), &stencil(&p, &g));
        for (i, j) in interior(&g) {
            assert!((out.at(i, j) + 0.21).abs() < 1e-12);
        }
    }

    #[test]
    fn upwinding_keeps_off_diagonals_nonnegative() {
        let p = spec("5 - 10*x", "0", "0.001", "0", 0.0, "0");
        let g = p.build_grid(3, 21, 5).unwrap();
        let s = stencil(&p, &g);
        for (i, j) in interior(&g) {
            let n = g.idx(i, j);
            assert!(s.upwind[n].0 || (5.0 - 10.0 * g.x[i]).abs() * g.hx <= 0.002);
            for (k, w) in s.rows[n].iter().enumerate() {
                if k != slot(0, 0) {
                    assert!(*w >= 0.0, "node ({i},{j}) slot {k}: {w}");
                }
            }
        }
    }
}
