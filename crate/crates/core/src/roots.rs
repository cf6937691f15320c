//! Characteristic roots of the principal symbol and their mollification in
//! time at the frequency-dependent scale eps = 1/<xi>.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::coeffs::{CoefficientFamily, FamilyKind, ProblemSpec};
use crate::error::{HypError, Result};
use crate::japanese;
use crate::moduli::ModulusOfContinuity;
use crate::quad::GaussLegendre;
use crate::taylor::{Jet, Real};

/// Roots of tau^m - sum_k q_k tau^(m-k) (q_k = p_k(t) xi^k), ascending.
/// Computed as companion-matrix eigenvalues of the polynomial rescaled by
/// <xi>, then polished by Newton steps.
pub fn characteristic_roots(spec: &ProblemSpec, t: f64, xi: f64) -> Result<Vec<f64>> {
    if xi == 0.0 {
        return Err(HypError::Domain("characteristic roots need |xi| > 0".into()));
    }
    let q = spec.principal_coefficients(t, xi);
    polynomial_roots(&q, t, xi)
}

/// Real simple roots of tau^m - sum_k q[k-1] tau^(m-k).
pub fn polynomial_roots(q: &[f64], t: f64, xi: f64) -> Result<Vec<f64>> {
    let m = q.len();
    let scale = japanese(xi);
    // sigma = tau / scale: sigma^m - sum_k (q_k / scale^k) sigma^(m-k)
    let qs: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(i, v)| v / scale.powi(i as i32 + 1))
        .collect();
    let mut comp = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        comp[(0, k)] = qs[k];
    }
    for i in 1..m {
        comp[(i, i - 1)] = 1.0;
    }
    let eig = comp.complex_eigenvalues();
    let imag = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if imag > 1e-8 {
        // a nearly double real root splits into a tiny complex pair
        let re: Vec<f64> = eig.iter().map(|z| z.re).collect();
        let spread = re
            .iter()
            .flat_map(|a| re.iter().map(move |b| (a - b).abs()))
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        if imag < 1e-6 && spread.is_finite() && spread < 1e-6 {
            return Err(HypError::MultipleRoots { t, xi, gap: 0.0 });
        }
        return Err(HypError::NonRealRoots { t, xi, imag: imag * scale });
    }
    let mut roots: Vec<f64> = eig.iter().map(|z| z.re).collect();
    let poly = |s: f64| -> (f64, f64) {
        // p(s) = s^m - sum qs_k s^(m-k), Horner with derivative
        let mut p = 1.0;
        let mut dp = 0.0;
        for &c in &qs {
            dp = dp * s + p;
            p = p * s - c;
        }
        (p, dp)
    };
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = poly(*r);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            if !step.is_finite() || step.abs() > 1e-6 {
                break;
            }
            *r -= step;
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in roots.windows(2) {
        if w[1] - w[0] < 1e-6 {
            return Err(HypError::MultipleRoots { t, xi, gap: (w[1] - w[0]) * scale });
        }
    }
    Ok(roots.into_iter().map(|r| r * scale).collect())
}

/// Roots on a (t, xi) grid: `tau[ix][it][j]`.
#[derive(Debug, Clone)]
pub struct RootTable {
    pub t_grid: Vec<f64>,
    pub xi_grid: Vec<f64>,
    pub tau: Vec<Vec<Vec<f64>>>,
}

pub fn root_table(spec: &ProblemSpec, t_grid: &[f64], xi_grid: &[f64]) -> Result<RootTable> {
    let tau = xi_grid
        .iter()
        .map(|&xi| {
            t_grid
                .iter()
                .map(|&t| characteristic_roots(spec, t, xi))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RootTable { t_grid: t_grid.to_vec(), xi_grid: xi_grid.to_vec(), tau })
}

/// Unnormalized bump exp(-1/(1 - x^2)) on (-1, 1).
pub fn bump<R: Real>(x: R) -> R {
    let one_minus = -(x * x) + 1.0;
    (-one_minus.recip()).exp()
}

/// Even bump phi with supp in [-1, 1], normalized so that the quadrature
/// weights w_i phi(u_i) sum to one.
#[derive(Debug, Clone)]
pub struct Mollifier {
    pub rule: GaussLegendre,
    /// Normalization constant C with phi = C exp(-1/(1-x^2)).
    pub norm: f64,
    /// w_i phi(u_i).
    pub kernel_weights: Vec<f64>,
}

impl Default for Mollifier {
    fn default() -> Self {
        Self::new(129)
    }
}

/// Shared 129-node mollifier.
pub fn standard_mollifier() -> &'static Mollifier {
    static PHI: std::sync::OnceLock<Mollifier> = std::sync::OnceLock::new();
    PHI.get_or_init(Mollifier::default)
}

impl Mollifier {
    pub fn new(n: usize) -> Self {
        let rule = GaussLegendre::new(n);
        let raw: Vec<f64> = rule.nodes.iter().map(|&x| bump(x)).collect();
        let total: f64 = raw.iter().zip(&rule.weights).map(|(p, w)| p * w).sum();
        let kernel_weights = raw.iter().zip(&rule.weights).map(|(p, w)| p * w / total).collect();
        Mollifier { rule, norm: 1.0 / total, kernel_weights }
    }

    pub fn phi(&self, x: f64) -> f64 {
        if x.abs() >= 1.0 {
            0.0
        } else {
            self.norm * bump(x)
        }
    }
}

/// integral of tau(t - eps u) phi(u) du by the fixed Gauss-Legendre rule.
pub fn mollify(tau_of_t: &dyn Fn(f64) -> f64, t: f64, eps: f64, phi: &Mollifier) -> f64 {
    phi.rule
        .nodes
        .iter()
        .zip(&phi.kernel_weights)
        .map(|(u, w)| w * tau_of_t(t - eps * u))
        .sum()
}

/// All m roots mollified at once (tau clamped outside [0, T]).
pub fn mollified_roots(
    spec: &ProblemSpec,
    t: f64,
    xi: f64,
    eps: f64,
    phi: &Mollifier,
) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; spec.m];
    for (u, w) in phi.rule.nodes.iter().zip(&phi.kernel_weights) {
        let s = (t - eps * u).clamp(0.0, spec.t_final);
        let r = characteristic_roots(spec, s, xi)?;
        for (a, v) in acc.iter_mut().zip(r) {
            *a += w * v;
        }
    }
    Ok(acc)
}

/// Nodes of a family where it fails to be smooth (sawtooth kinks).
pub fn kinks(fam: &CoefficientFamily, t_final: f64) -> Vec<f64> {
    match &fam.kind {
        FamilyKind::Sawtooth { h, .. } => {
            let n = (t_final / h).floor() as i64;
            (0..=n).map(|k| k as f64 * h).collect()
        }
        FamilyKind::Shifted { base, .. } => kinks(base, t_final),
        FamilyKind::Symmetric { speeds, .. } => {
            let mut all: Vec<f64> = speeds.iter().flat_map(|s| kinks(s, t_final)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
            all
        }
        _ => Vec::new(),
    }
}

pub fn spec_kinks(spec: &ProblemSpec) -> Vec<f64> {
    let mut all: Vec<f64> = spec.principal.iter().flat_map(|f| kinks(f, spec.t_final)).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    all
}

/// Base grid plus points kink + k eps/4 (|k| <= 8) around every kink, so
/// that the scale-eps behaviour near kinks is sampled at every frequency.
pub fn refined_t_grid(base: &[f64], kinks: &[f64], eps: f64, t_final: f64) -> Vec<f64> {
    let mut g: Vec<f64> = base.to_vec();
    for &k in kinks {
        for i in -8..=8 {
            let t = k + i as f64 * eps / 4.0;
            if (0.0..=t_final).contains(&t) {
                g.push(t);
            }
        }
    }
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    g
}

/// All nodes of one frequency: `tau[it][j]`, `lambda[it][j]` and lambda at
/// t -+ eps/4 for the centered time derivative.
#[derive(Debug, Clone)]
pub struct RootSlice {
    pub xi: f64,
    pub eps: f64,
    pub t: Vec<f64>,
    pub tau: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub lambda_minus: Vec<Vec<f64>>,
    pub lambda_plus: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RegularizedRootTable {
    pub slices: Vec<RootSlice>,
    pub extension_mode: &'static str,
}

impl RegularizedRootTable {
    pub fn xi_grid(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.xi).collect()
    }

    /// CSV rows (t, xi, j, tau, lambda) with j counted from 1.
    pub fn rows(&self) -> Vec<(f64, f64, usize, f64, f64)> {
        let mut out = Vec::new();
        for s in &self.slices {
            for (it, &t) in s.t.iter().enumerate() {
                for j in 0..s.tau[it].len() {
                    out.push((t, s.xi, j + 1, s.tau[it][j], s.lambda[it][j]));
                }
            }
        }
        out
    }
}

pub fn regularized_slice(
    spec: &ProblemSpec,
    xi: f64,
    t_grid: &[f64],
    phi: &Mollifier,
) -> Result<RootSlice> {
    let eps = 1.0 / japanese(xi);
    let mut tau = Vec::with_capacity(t_grid.len());
    let mut lambda = Vec::with_capacity(t_grid.len());
    let mut lm = Vec::with_capacity(t_grid.len());
    let mut lp = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        tau.push(characteristic_roots(spec, t, xi)?);
        lambda.push(mollified_roots(spec, t, xi, eps, phi)?);
        lm.push(mollified_roots(spec, t - eps / 4.0, xi, eps, phi)?);
        lp.push(mollified_roots(spec, t + eps / 4.0, xi, eps, phi)?);
    }
    Ok(RootSlice {
        xi,
        eps,
        t: t_grid.to_vec(),
        tau,
        lambda,
        lambda_minus: lm,
        lambda_plus: lp,
    })
}

/// lambda_j(t, xi) = tau_j(., xi) mollified at scale 1/<xi> on a shared grid.
pub fn regularized_root_table(
    spec: &ProblemSpec,
    t_grid: &[f64],
    xi_grid: &[f64],
) -> Result<RegularizedRootTable> {
    regularized_root_table_with(&|_| Ok(spec.clone()), &|_, _| t_grid.to_vec(), xi_grid)
}

/// General form: the problem may depend on the frequency (resonant
/// witnesses) and so may the time grid (kink refinement).
pub fn regularized_root_table_with(
    spec_at: &(dyn Fn(f64) -> Result<ProblemSpec> + Sync),
    t_grid_at: &(dyn Fn(&ProblemSpec, f64) -> Vec<f64> + Sync),
    xi_grid: &[f64],
) -> Result<RegularizedRootTable> {
    let phi = standard_mollifier();
    let slices = xi_grid
        .par_iter()
        .map(|&xi| {
            let spec = spec_at(xi)?;
            let grid = t_grid_at(&spec, xi);
            regularized_slice(&spec, xi, &grid, phi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegularizedRootTable { slices, extension_mode: "clamp" })
}

#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub xi: Vec<f64>,
    /// max_t |d_t lambda| / (<xi> omega(<xi>)).
    pub r1: Vec<f64>,
    /// max_t |lambda - tau| / omega(<xi>).
    pub r2: Vec<f64>,
    pub r1_test: crate::fit::BoundedTest,
    pub r2_test: crate::fit::BoundedTest,
    pub pass: bool,
    pub note: &'static str,
}

fn bounded_or_zero(xi: &[f64], v: &[f64]) -> crate::fit::BoundedTest {
    if v.iter().all(|x| *x == 0.0) {
        return crate::fit::BoundedTest { spread: 1.0, trend: 0.0, pass: true };
    }
    crate::fit::bounded_over_all(xi, v)
}

pub fn regularity_report(table: &RegularizedRootTable, moc: &ModulusOfContinuity) -> RegularityReport {
    let mut xi = Vec::new();
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    for s in &table.slices {
        let x = japanese(s.xi);
        let om = moc.omega(x);
        let h = s.eps / 4.0;
        let mut d1 = 0.0f64;
        let mut d2 = 0.0f64;
        for it in 0..s.t.len() {
            for j in 0..s.tau[it].len() {
                let dt = (s.lambda_plus[it][j] - s.lambda_minus[it][j]) / (2.0 * h);
                d1 = d1.max(dt.abs());
                d2 = d2.max((s.lambda[it][j] - s.tau[it][j]).abs());
            }
        }
        xi.push(s.xi.abs());
        r1.push(d1 / (x * om));
        r2.push(d2 / om);
    }
    let r1_test = bounded_or_zero(&xi, &r1);
    let r2_test = bounded_or_zero(&xi, &r2);
    RegularityReport {
        pass: r1_test.pass && r2_test.pass,
        xi,
        r1,
        r2,
        r1_test,
        r2_test,
        note: "time derivatives of order >= 2 not checked",
    }
}

/// Regularized roots entering the first-order system.
///
/// The same bump at scale eps = 1/<xi> is applied as a normalized sum over
/// a uniform grid s_i (spacing eps/32, covering [-eps, T + eps] with tau
/// clamped outside [0, T]):
///   lambda(t) = sum_i tau(s_i) phi((t - s_i)/eps) / sum_i phi((t - s_i)/eps).
/// This is a smooth function of t whose derivatives are exact (jets), so
/// the first-order system built from it is exactly equivalent to the
/// scalar equation. Constants are reproduced exactly.
#[derive(Debug, Clone)]
pub struct SmoothRoots {
    pub xi: f64,
    pub eps: f64,
    pub m: usize,
    s0: f64,
    h: f64,
    /// tau at the s-grid nodes, row-major [i * m + j].
    tau: Vec<f64>,
}

/// Nodes per eps in the system mollification grid.
pub const NODES_PER_EPS: f64 = 32.0;

impl SmoothRoots {
    pub fn new(spec: &ProblemSpec, xi: f64) -> Result<Self> {
        let eps = 1.0 / japanese(xi);
        let h = eps / NODES_PER_EPS;
        let s0 = -eps - 2.0 * h;
        let n = ((spec.t_final + 2.0 * eps + 4.0 * h) / h).ceil() as usize + 1;
        let m = spec.m;
        let mut tau = Vec::with_capacity(n * m);
        // constant continuation outside [0, T]: reuse the boundary roots
        let left = characteristic_roots(spec, 0.0, xi)?;
        let right = characteristic_roots(spec, spec.t_final, xi)?;
        for i in 0..n {
            let s = s0 + i as f64 * h;
            if s <= 0.0 {
                tau.extend_from_slice(&left);
            } else if s >= spec.t_final {
                tau.extend_from_slice(&right);
            } else {
                tau.extend(characteristic_roots(spec, s, xi)?);
            }
        }
        Ok(SmoothRoots { xi, eps, m, s0, h, tau })
    }

    pub fn nodes(&self) -> usize {
        self.tau.len() / self.m
    }

    /// Taylor jets in t (order `order`) of lambda_1..lambda_m at time t.
    pub fn jets(&self, t: f64, order: usize) -> Vec<Jet> {
        let lo = ((t - self.eps - self.s0) / self.h).floor().max(0.0) as usize;
        let hi = (((t + self.eps - self.s0) / self.h).ceil() as usize).min(self.nodes() - 1);
        let inv = 1.0 / self.eps;
        if order <= 1 {
            return self.jets_first_order(t, order, lo, hi, inv);
        }
        let mut w = Jet::constant(0.0, order);
        let mut s = vec![Jet::constant(0.0, order); self.m];
        for i in lo..=hi {
            if ((t - (self.s0 + i as f64 * self.h)) * inv).abs() >= 1.0 {
                continue;
            }
            let xj = (Jet::variable(t, order) - (self.s0 + i as f64 * self.h)) * inv;
            let k = bump(xj);
            w = w + k;
            for j in 0..self.m {
                s[j] = s[j] + k * self.tau[i * self.m + j];
            }
        }
        s.into_iter().map(|sj| sj / w).collect()
    }

    /// Same sums with the bump and its first derivative written out.
    fn jets_first_order(&self, t: f64, order: usize, lo: usize, hi: usize, inv: f64) -> Vec<Jet> {
        let m = self.m;
        let (mut w, mut dw) = (0.0, 0.0);
        let mut s = [0.0; 8];
        let mut ds = [0.0; 8];
        assert!(m <= 8);
        for i in lo..=hi {
            let x = (t - (self.s0 + i as f64 * self.h)) * inv;
            let q = 1.0 - x * x;
            if q <= 0.0 {
                continue;
            }
            let g = 1.0 / q;
            let k = (-g).exp();
            // d/dt exp(-1/(1-x^2)) = -2 x g^2 k / eps
            let dk = -2.0 * x * g * g * k * inv;
            w += k;
            dw += dk;
            let row = &self.tau[i * m..(i + 1) * m];
            for j in 0..m {
                s[j] += k * row[j];
                ds[j] += dk * row[j];
            }
        }
        (0..m)
            .map(|j| {
                let v = s[j] / w;
                if order == 0 {
                    Jet::constant(v, 0)
                } else {
                    Jet::from_coeffs(&[v, (ds[j] - v * dw) / w])
                }
            })
            .collect()
    }

    /// lambda_1..lambda_m at time t.
    pub fn values(&self, t: f64) -> Vec<f64> {
        self.jets(t, 0).into_iter().map(|j| j.coeff(0)).collect()
    }
}
