//! Independent oracles shared by the integration tests. None of them use
//! the crate's reduction, diagonalizer or integrator.

#![allow(dead_code)]

/// Classical RK4 for u'' = -a(t) xi^2 u with n fixed steps; returns
/// (u(T), u'(T)).
pub fn scalar_rk4(a: &dyn Fn(f64) -> f64, xi: f64, u0: f64, v0: f64, t_final: f64, n: usize) -> (f64, f64) {
    let h = t_final / n as f64;
    let f = |t: f64, u: f64, v: f64| (v, -a(t) * xi * xi * u);
    let (mut u, mut v) = (u0, v0);
    for i in 0..n {
        let t = i as f64 * h;
        let (k1u, k1v) = f(t, u, v);
        let (k2u, k2v) = f(t + 0.5 * h, u + 0.5 * h * k1u, v + 0.5 * h * k1v);
        let (k3u, k3v) = f(t + 0.5 * h, u + 0.5 * h * k2u, v + 0.5 * h * k2v);
        let (k4u, k4v) = f(t + h, u + h * k3u, v + h * k3v);
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    (u, v)
}

/// Floquet exponent of u'' + xi^2 (1 + delta sin(2 xi t)) u = 0: the
/// monodromy over one period pi/xi is built from two fundamental solutions
/// (RK4, `per_period` steps); the exponent is ln(spectral radius)/period.
pub fn floquet_rate(delta: f64, xi: f64, per_period: usize) -> f64 {
    let period = std::f64::consts::PI / xi;
    let a = |t: f64| 1.0 + delta * (2.0 * xi * t).sin();
    let (u1, v1) = scalar_rk4(&a, xi, 1.0, 0.0, period, per_period);
    let (u2, v2) = scalar_rk4(&a, xi, 0.0, 1.0, period, per_period);
    let tr = u1 + v2;
    let det = u1 * v2 - u2 * v1;
    let disc = tr * tr - 4.0 * det;
    let rho = if disc >= 0.0 {
        (tr.abs() + disc.sqrt()) / 2.0
    } else {
        det.abs().sqrt()
    };
    rho.ln() / period
}
