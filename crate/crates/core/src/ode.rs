//! Fixed-step RK4 for linear Kolmogorov forward equations dp/dt = p Q(t).

use nalgebra::{DMatrix, DVector, RowDVector};

/// Integrates the row vector `p0` from `t0` to `t1` under the generator `q`.
pub fn rk4_row(
    q: impl Fn(f64) -> DMatrix<f64>,
    p0: &RowDVector<f64>,
    t0: f64,
    t1: f64,
    steps: usize,
) -> RowDVector<f64> {
    let h = (t1 - t0) / steps as f64;
    let mut p = p0.clone();
    for n in 0..steps {
        let t = t0 + n as f64 * h;
        let qa = q(t);
        let qm = q(t + 0.5 * h);
        let qb = q(t + h);
        let k1 = &p * &qa;
        let k2 = (&p + &k1 * (0.5 * h)) * &qm;
        let k3 = (&p + &k2 * (0.5 * h)) * &qm;
        let k4 = (&p + &k3 * h) * &qb;
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    p
}

/// Integrates a column vector under dv/dt = A v with constant `a`.
pub fn rk4_column(a: &DMatrix<f64>, v0: &DVector<f64>, t: f64, steps: usize) -> DVector<f64> {
    let h = t / steps as f64;
    let mut v = v0.clone();
    for _ in 0..steps {
        let k1 = a * &v;
        let k2 = a * (&v + &k1 * (0.5 * h));
        let k3 = a * (&v + &k2 * (0.5 * h));
        let k4 = a * (&v + &k3 * h);
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    v
}
