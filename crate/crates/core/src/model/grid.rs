use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DomainBox, ModelError, ProblemSpec};
use crate::exprs::{EvalContext, EvalError, Expr};

/// Uniform tensor grid over `[0, T] x [x_lo, x_hi] x [y_lo, y_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dt: f64,
    pub hx: f64,
    pub hy: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { hi } else { lo + h * i as f64 }).collect()
}

impl Grid {
    pub fn new(horizon: f64, domain: &DomainBox, nt: usize, nx: usize, ny: usize) -> Result<Grid, ModelError> {
        if nt < 3 || nx < 3 || ny < 3 {
            return Err(ModelError::InvalidCounts { nt, nx, ny });
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::InvalidHorizon(horizon));
        }
        domain.check()?;
        Ok(Grid {
            nt,
            nx,
            ny,
            t: linspace(0.0, horizon, nt),
            x: linspace(domain.x_lo, domain.x_hi, nx),
            y: linspace(domain.y_lo, domain.y_hi, ny),
            dt: horizon / (nt - 1) as f64,
            hx: (domain.x_hi - domain.x_lo) / (nx - 1) as f64,
            hy: (domain.y_hi - domain.y_lo) / (ny - 1) as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.t[self.nt - 1]
    }

    pub fn domain(&self) -> DomainBox {
        DomainBox { x_lo: self.x[0], x_hi: self.x[self.nx - 1], y_lo: self.y[0], y_hi: self.y[self.ny - 1] }
    }

    /// Number of spatial nodes.
    pub fn len2(&self) -> usize {
        self.nx * self.ny
    }

    /// Flat index of spatial node `(i, j)`; `y` varies fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn nearest_t(&self, t: f64) -> usize {
        nearest(t, self.t[0], self.dt, self.nt)
    }

    pub fn nearest_x(&self, x: f64) -> usize {
        nearest(x, self.x[0], self.hx, self.nx)
    }

    pub fn nearest_y(&self, y: f64) -> usize {
        nearest(y, self.y[0], self.hy, self.ny)
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Whether `(x, y)` lies in the closed spatial box.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x[0] && x <= self.x[self.nx - 1] && y >= self.y[0] && y <= self.y[self.ny - 1]
    }
}

fn nearest(v: f64, lo: f64, h: f64, n: usize) -> usize {
    let k = ((v - lo) / h).round();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

/// Values on the spatial nodes of a grid, `y` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field2 {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl Field2 {
    pub fn zeros(nx: usize, ny: usize) -> Field2 {
        Field2 { nx, ny, data: vec![0.0; nx * ny] }
    }

    pub fn constant(nx: usize, ny: usize, v: f64) -> Field2 {
        Field2 { nx, ny, data: vec![v; nx * ny] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Field2 {
        let mut data = Vec::with_capacity(grid.len2());
        for &x in &grid.x {
            for &y in &grid.y {
                data.push(f(x, y));
            }
        }
        Field2 { nx: grid.nx, ny: grid.ny, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ny + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ny + j] = v;
    }

    /// Rows indexed by `x` node, each a slice over `y`.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.ny).map(|r| r.to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// An evaluation failure at a specific node.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{source} at node (t={t}, x={x}, y={y})")]
pub struct NodeEvalError {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub source: EvalError,
}

/// Evaluates `e` at every spatial node at time level `t_index`.
pub fn evaluate_field(e: &Expr, grid: &Grid, t_index: usize) -> Result<Field2, NodeEvalError> {
    evaluate_field_at(e, grid, grid.t[t_index])
}

/// Evaluates `e` at every spatial node at an arbitrary time `t`.
pub fn evaluate_field_at(e: &Expr, grid: &Grid, t: f64) -> Result<Field2, NodeEvalError> {
    if let Some(c) = e.as_const() {
        return Ok(Field2::constant(grid.nx, grid.ny, c));
    }
    let rows: Result<Vec<Vec<f64>>, NodeEvalError> = grid
        .x
        .par_iter()
        .map(|&x| {
            grid.y
                .iter()
                .map(|&y| e.evaluate(&EvalContext::txy(t, x, y)).map_err(|source| NodeEvalError { t, x, y, source }))
                .collect()
        })
        .collect();
    Ok(Field2 { nx: grid.nx, ny: grid.ny, data: rows?.concat() })
}

/// The gain at time level `k`: the terminal gain on the last level.
pub fn gain_field(p: &ProblemSpec, grid: &Grid, k: usize) -> Result<Field2, NodeEvalError> {
    evaluate_field(p.gain.at_level(k + 1 == grid.nt), grid, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::parse;

    fn unit_box() -> DomainBox {
        DomainBox { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 }
    }

    #[test]
    fn steps() {
        let g = Grid::new(1.0, &unit_box(), 5, 3, 3).unwrap();
        assert_eq!(g.dt, 0.25);
        let b = DomainBox { x_lo: 0.0, x_hi: 2.0, y_lo: 0.0, y_hi: 1.0 };
        let g = Grid::new(1.0, &b, 3, 5, 3).unwrap();
        assert_eq!((g.hx, g.hy), (0.5, 0.5));
        assert!(matches!(Grid::new(1.0, &b, 3, 2, 3), Err(ModelError::InvalidCounts { .. })));
    }

    #[test]
    fn field_examples() {
        let g = Grid::new(1.0, &unit_box(), 5, 3, 3).unwrap();
        let f = evaluate_field(&parse("x+y").unwrap(), &g, 0).unwrap();
        assert_eq!(f.rows(), vec![vec![0.0, 0.5, 1.0], vec![0.5, 1.0, 1.5], vec![1.0, 1.5, 2.0]]);
        let f = evaluate_field(&parse("t").unwrap(), &g, 1).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.25));
        let err = evaluate_field(&parse("1/(x-0.5)").unwrap(), &g, 0).unwrap_err();
        assert_eq!(err.x, 0.5);
        assert!(matches!(err.source, EvalError::Domain { .. }));
    }

    #[test]
    fn index_round_trip() {
        let b = DomainBox { x_lo: -3.0, x_hi: 7.0, y_lo: 0.1, y_hi: 0.9 };
        let g = Grid::new(2.0, &b, 11, 41, 9).unwrap();
        for i in 0..g.nx {
            assert_eq!(g.nearest_x(g.x[i]), i);
        }
        for j in 0..g.ny {
            assert_eq!(g.nearest_y(g.y[j]), j);
        }
        for k in 0..g.nt {
            assert_eq!(g.nearest_t(g.t[k]), k);
        }
        assert_eq!(g.x[g.nx - 1], 7.0);
    }
}
