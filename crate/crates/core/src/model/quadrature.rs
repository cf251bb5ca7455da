//! Gauss–Legendre rules used to turn jump densities into atoms.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Tensor-product rule on the box `lower..upper`: returns `(point, weight)`
/// pairs with `nodes` points per axis.
pub fn tensor_rule(lower: &[f64], upper: &[f64], nodes: usize) -> Vec<(Vec<f64>, f64)> {
    let (z, w) = gauss_legendre(nodes);
    let dim = lower.len();
    let mut out = Vec::with_capacity(nodes.pow(dim as u32));
    let mut idx = vec![0usize; dim];
    loop {
        let mut point = Vec::with_capacity(dim);
        let mut weight = 1.0;
        for d in 0..dim {
            let half = 0.5 * (upper[d] - lower[d]);
            point.push(lower[d] + half * (z[idx[d]] + 1.0));
            weight *= half * w[idx[d]];
        }
        out.push((point, weight));
        let mut d = 0;
        loop {
            if d == dim {
                return out;
            }
            idx[d] += 1;
            if idx[d] < nodes {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}
