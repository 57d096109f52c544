//! Gauss–Legendre rules and composite radial grids.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite rule on `[a, b]` with `panels` equal panels of an `n`-point rule.
pub fn composite(a: f64, b: f64, panels: usize, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * n);
    for p in 0..panels {
        let lo = a + h * p as f64;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

/// Panels on `[0, r_max]` of width about `width`, with the first panel split
/// geometrically towards zero `levels` times.
pub fn radial_rule(r_max: f64, width: f64, n: usize, levels: usize) -> Vec<(f64, f64)> {
    let panels = ((r_max / width).ceil() as usize).max(1);
    let h = r_max / panels as f64;
    let mut edges = vec![0.0];
    for k in (1..=levels).rev() {
        edges.push(h / f64::powi(2.0, k as i32));
    }
    for p in 1..=panels {
        edges.push(h * p as f64);
    }
    let (x, w) = gauss_legendre(n);
    let mut out = Vec::with_capacity((edges.len() - 1) * n);
    for e in edges.windows(2) {
        let (lo, hi) = (e[0], e[1]);
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * (hi - lo) * (xi + 1.0), 0.5 * (hi - lo) * wi));
        }
    }
    out
}
