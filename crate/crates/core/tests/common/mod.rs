#![allow(dead_code)]

use stopsurf::exprs::{parse, Expr};
use stopsurf::model::{CoefficientSet, DomainBox, FaceRule, FarField, GainSpec, Orientation, ProblemSpec};

pub fn e(s: &str) -> Expr {
    parse(s).unwrap()
}

pub const PUT_STRIKE: f64 = 100.0;
pub const PUT_RATE: f64 = 0.05;
pub const PUT_SIGMA: f64 = 0.2;
pub const PUT_HORIZON: f64 = 0.5;

/// American put embedded in two dimensions: `y` carries no dynamics, so
/// every `y`-row solves the same one-dimensional problem.
pub fn put_spec() -> ProblemSpec {
    let coefficients = CoefficientSet {
        alpha1: e("0.05*x"),
        beta1: e("0.02*x^2"),
        r: e("0.05"),
        ..CoefficientSet::zero()
    };
    let domain = DomainBox { x_lo: 0.0, x_hi: 200.0, y_lo: 0.0, y_hi: 1.0 };
    let mut p = ProblemSpec::new(coefficients, GainSpec::new(e("pos(100 - x)")), domain, PUT_HORIZON);
    p.orientation = Orientation::ContinuationAbove;
    p.far_field = FarField { x_lo: FaceRule::Gain, x_hi: FaceRule::Gain, y_lo: FaceRule::Linear, y_hi: FaceRule::Linear };
    p
}

/// Cox-Ross-Rubinstein tree for the American put.
pub fn binomial_put(s0: f64, k: f64, r: f64, sigma: f64, t: f64, n: usize) -> f64 {
    let dt = t / n as f64;
    let u = (sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let disc = (-r * dt).exp();
    let q = ((r * dt).exp() - d) / (u - d);
    let mut v: Vec<f64> = (0..=n).map(|i| (k - s0 * u.powi(i as i32) * d.powi((n - i) as i32)).max(0.0)).collect();
    for step in (0..n).rev() {
        for i in 0..=step {
            let s = s0 * u.powi(i as i32) * d.powi((step - i) as i32);
            let cont = disc * (q * v[i + 1] + (1.0 - q) * v[i]);
            v[i] = cont.max(k - s);
        }
    }
    v[0]
}
