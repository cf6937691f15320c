//! First-order m x m system per frequency, the explicit diagonalizer
//! H = I + T, Neumann inversion and factorization residuals.
//!
//! With D_t = -i d/dt and w_1 = u, w_{k+1} = (D_t - lambda_k) w_k, the
//! unknowns are U_k = <xi>^(m-k) w_k. Then
//!   D_t U_k = lambda_k U_k + <xi> U_{k+1}    (k < m),
//!   D_t U_m = lambda_m U_m + w_{m+1},
//! and w_{m+1} = f + sum_k r_k w_k after substituting the equation for
//! D_t^m u. This gives D_t U - A U + B U = (0, ..., 0, f) with A upper
//! bidiagonal and B supported on the last row.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::coeffs::ProblemSpec;
use crate::error::{HypError, Result};
use crate::japanese;
use crate::moduli::ModulusOfContinuity;
use crate::quad::GaussLegendre;
use crate::roots::{characteristic_roots, standard_mollifier, SmoothRoots};
use crate::taylor::Jet;

pub type CMatrix = DMatrix<Complex64>;

/// Default cutoff M of the diagonalizer.
pub const DEFAULT_CUTOFF: f64 = 16.0;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Complex-valued jet in t, used for the coefficients of the operators
/// prod (D_t - lambda_j) expanded in powers of D_t.
#[derive(Debug, Clone, Copy)]
struct CJet {
    re: Jet,
    im: Jet,
}

impl CJet {
    fn real(re: Jet) -> Self {
        CJet { im: re * 0.0, re }
    }

    /// D_t = -i d/dt. The length is kept: each application invalidates
    /// the top coefficient only, and at most m - 1 of them act on a lambda
    /// jet of order m - 1 before its value is read.
    fn d_t(self) -> Self {
        CJet { re: self.im.differentiate_padded(), im: -self.re.differentiate_padded() }
    }

    fn add(self, o: CJet) -> Self {
        CJet { re: self.re + o.re, im: self.im + o.im }
    }

    fn sub_real_mul(self, lam: Jet, p: CJet) -> Self {
        CJet { re: self.re - lam * p.re, im: self.im - lam * p.im }
    }

    fn value(&self) -> Complex64 {
        Complex64::new(self.re.coeff(0), self.im.coeff(0))
    }
}

/// Values at one time of the expansion w_j = sum_k P[j][k] D_t^k u
/// (j = 0..m-1, unit lower triangular) and of w_{m+1} = f + r . w.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub p: CMatrix,
    pub r: Vec<Complex64>,
}

/// Expands prod (D_t - lambda_j) with lambda given as jets of order >= m-1.
pub fn expand(lambda: &[Jet], c: &[f64]) -> Expansion {
    let m = lambda.len();
    let order = lambda[0].order();
    let zero = CJet::real(Jet::constant(0.0, order));
    // rows[j][k]: coefficient of D_t^k u in w_{j+1}
    let mut rows: Vec<Vec<CJet>> = vec![vec![CJet::real(Jet::constant(1.0, order))]];
    for lam in lambda.iter() {
        let prev = rows.last().unwrap();
        let n = prev.len();
        let mut next = vec![zero; n + 1];
        for k in 0..=n {
            let mut v = if k < n { prev[k].d_t() } else { zero };
            if k >= 1 {
                v = v.add(prev[k - 1]);
            }
            if k < n {
                v = v.sub_real_mul(*lam, prev[k]);
            }
            next[k] = v;
        }
        rows.push(next);
    }
    let mut p = CMatrix::zeros(m, m);
    for j in 0..m {
        for k in 0..=j {
            p[(j, k)] = rows[j][k].value();
        }
    }
    // w_{m+1} = D_t^m u + sum_{k<m} P_{m+1,k} D_t^k u, D_t^m u = sum c_k D_t^k u + f
    let q: Vec<Complex64> = (0..m).map(|k| rows[m][k].value() + c[k]).collect();
    // r^T P = q^T, P unit lower triangular
    let mut r = vec![Complex64::new(0.0, 0.0); m];
    for k in (0..m).rev() {
        let mut v = q[k];
        for j in k + 1..m {
            v -= r[j] * p[(j, k)];
        }
        r[k] = v;
    }
    Expansion { p, r }
}

/// Per-frequency first-order system built from the smooth regularized roots.
#[derive(Debug, Clone)]
pub struct FrequencySystem {
    pub spec: ProblemSpec,
    pub xi: f64,
    pub roots: SmoothRoots,
}

/// A, B and lambda at one time.
#[derive(Debug, Clone)]
pub struct SystemSlice {
    pub t: f64,
    pub lambda: Vec<Jet>,
    pub a: CMatrix,
    pub b: CMatrix,
    pub expansion: Expansion,
}

pub fn build_system(spec: &ProblemSpec, xi: f64) -> Result<FrequencySystem> {
    spec.validate()?;
    if xi == 0.0 {
        return Err(HypError::Domain("system needs |xi| > 0".into()));
    }
    Ok(FrequencySystem { spec: spec.clone(), xi, roots: SmoothRoots::new(spec, xi)? })
}

impl FrequencySystem {
    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn jx(&self) -> f64 {
        japanese(self.xi)
    }

    /// Jet order needed by B (derivatives of lambda up to m - 1) and by
    /// d_t H (first derivatives).
    pub fn jet_order(&self) -> usize {
        (self.m() - 1).max(1)
    }

    pub fn lambda_jets(&self, t: f64) -> Vec<Jet> {
        self.roots.jets(t, self.jet_order())
    }

    pub fn slice(&self, t: f64) -> SystemSlice {
        let lambda = self.lambda_jets(t);
        self.slice_with(t, lambda)
    }

    pub fn slice_with(&self, t: f64, lambda: Vec<Jet>) -> SystemSlice {
        let m = self.m();
        let x = self.jx();
        let mut a = CMatrix::zeros(m, m);
        for j in 0..m {
            a[(j, j)] = lambda[j].coeff(0).into();
            if j + 1 < m {
                a[(j, j + 1)] = x.into();
            }
        }
        let c = self.spec.reduced_coefficients(t.clamp(0.0, self.spec.t_final), self.xi);
        let expansion = expand(&lambda, &c);
        let mut b = CMatrix::zeros(m, m);
        for j in 0..m {
            b[(m - 1, j)] = -expansion.r[j] * x.powi(-((m - 1 - j) as i32));
        }
        SystemSlice { t, lambda, a, b, expansion }
    }

    /// U(0) from the Cauchy data g_k = D_t^(k-1) u(0).
    pub fn initial_state(&self, g: &[Complex64]) -> Vec<Complex64> {
        let s = self.slice(0.0);
        let m = self.m();
        let x = self.jx();
        (0..m)
            .map(|j| {
                let w: Complex64 = (0..=j).map(|k| s.expansion.p[(j, k)] * g[k]).sum();
                w * x.powi((m - 1 - j) as i32)
            })
            .collect()
    }

    /// Recovers (u, D_t u, ..., D_t^(m-1) u) from U at time t.
    pub fn reconstruct(&self, t: f64, u: &[Complex64]) -> Vec<Complex64> {
        let s = self.slice(t);
        let m = self.m();
        let x = self.jx();
        let w: Vec<Complex64> = (0..m).map(|j| u[j] * x.powi(-((m - 1 - j) as i32))).collect();
        let mut d = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..m {
            let mut v = w[j];
            for k in 0..j {
                v -= s.expansion.p[(j, k)] * d[k];
            }
            d[j] = v;
        }
        d
    }
}

/// Smooth step with phi1 = 1 on |xi| <= M and 0 on |xi| >= 2M, built from
/// the integral of the standard bump.
pub fn phi1(xi: f64, cutoff: f64) -> f64 {
    let s = (xi.abs() - cutoff) / cutoff;
    if s <= 0.0 {
        return 1.0;
    }
    if s >= 1.0 {
        return 0.0;
    }
    static RULE: std::sync::OnceLock<GaussLegendre> = std::sync::OnceLock::new();
    let rule = RULE.get_or_init(|| GaussLegendre::new(64));
    let phi = standard_mollifier();
    // integral of phi over [-1, 2s - 1]
    let b = 2.0 * s - 1.0;
    let half = (b + 1.0) / 2.0;
    let part = rule.integrate(|u| phi.phi(-1.0 + half * (u + 1.0))) * half;
    (1.0 - part).clamp(0.0, 1.0)
}

/// T, H = I + T, H^-1 and d_t H at one (t, xi).
#[derive(Debug, Clone)]
pub struct Diagonalizer {
    pub t_mat: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub hinv: DMatrix<f64>,
    pub dt_h: DMatrix<f64>,
    pub cutoff: f64,
    pub phi1: f64,
}

/// beta_{p,q} = (1 - phi1) <xi>^(q-p) / prod_{r=p}^{q-1} (lambda_q - lambda_r).
pub fn build_diagonalizer(lambda: &[Jet], t: f64, xi: f64, cutoff: f64) -> Result<Diagonalizer> {
    diagonalizer_with_phi1(lambda, t, xi, cutoff, phi1(xi, cutoff))
}

/// As [`build_diagonalizer`] with phi1(xi) supplied by the caller.
pub fn diagonalizer_with_phi1(
    lambda: &[Jet],
    t: f64,
    xi: f64,
    cutoff: f64,
    phi1_xi: f64,
) -> Result<Diagonalizer> {
    let m = lambda.len();
    let x = japanese(xi);
    for q in 0..m {
        for r in 0..q {
            if (lambda[q].coeff(0) - lambda[r].coeff(0)).abs() < 1e-8 * x {
                return Err(HypError::SeparationLost { t, xi });
            }
        }
    }
    let f = 1.0 - phi1_xi;
    let mut tm = DMatrix::<f64>::zeros(m, m);
    let mut dt = DMatrix::<f64>::zeros(m, m);
    for p in 0..m {
        for q in p + 1..m {
            let mut d = lambda[q] - lambda[p];
            for r in p + 1..q {
                d = d * (lambda[q] - lambda[r]);
            }
            let beta = Jet::constant(f * x.powi((q - p) as i32), d.order()) / d;
            tm[(p, q)] = beta.coeff(0);
            dt[(p, q)] = if beta.order() >= 1 { beta.coeff(1) } else { 0.0 };
        }
    }
    let id = DMatrix::<f64>::identity(m, m);
    let h = &id + &tm;
    // H^-1 = I + sum_{j>=1} (-T)^j, finite since T is nilpotent
    let mut hinv = id.clone();
    let mut pow = id;
    for _ in 1..m {
        pow = -(&pow * &tm);
        hinv += &pow;
    }
    Ok(Diagonalizer { t_mat: tm, h, hinv, dt_h: dt, cutoff, phi1: 1.0 - f })
}

fn to_c(m: &DMatrix<f64>) -> CMatrix {
    m.map(Complex64::from)
}

/// H^-1 A H, and Bbar = H^-1 (D_t H) + H^-1 B H - (H^-1 A H - Lambda).
#[derive(Debug, Clone)]
pub struct DiagonalizedSlice {
    pub hah: CMatrix,
    pub bbar: CMatrix,
    pub lambda: Vec<f64>,
}

pub fn diagonalize_slice(s: &SystemSlice, d: &Diagonalizer) -> DiagonalizedSlice {
    let m = s.lambda.len();
    let h = to_c(&d.h);
    let hinv = to_c(&d.hinv);
    let hah = &hinv * &s.a * &h;
    let mut defect = hah.clone();
    for j in 0..m {
        defect[(j, j)] -= Complex64::from(s.lambda[j].coeff(0));
    }
    let dth = to_c(&d.dt_h) * (-I);
    let bbar = &hinv * dth + &hinv * &s.b * &h - defect;
    DiagonalizedSlice { hah, bbar, lambda: s.lambda.iter().map(|l| l.coeff(0)).collect() }
}

/// Per-frequency diagonalization diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub xi: f64,
    /// max |(H^-1 A H)_{pq}|, p != q, divided by <xi>.
    pub sup_offdiag: f64,
    pub sup_bbar_over_omega: f64,
    pub sup_dth_over_omega: f64,
    /// max |B[m, j]| / omega.
    pub sup_b_over_omega: f64,
    /// max |lambda_j - tau_j| / omega.
    pub sup_lambda_tau_over_omega: f64,
    /// max |(T^m)_{pq}|.
    pub nilpotency: f64,
    /// max |(H H^-1 - I)_{pq}|.
    pub inverse_error: f64,
    /// max over t of the eigenvalue mismatch of A and H^-1 A H, over <xi>.
    pub eig_error: f64,
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn sorted_eigs(m: &CMatrix) -> Vec<f64> {
    // A and H^-1 A H are upper triangular up to rounding: the spectrum is
    // read from a general complex eigen-solver to avoid assuming it
    let e = m.clone().eigenvalues().map(|v| v.iter().map(|z| z.re).collect::<Vec<_>>());
    let mut e = e.unwrap_or_else(|| (0..m.nrows()).map(|j| m[(j, j)].re).collect());
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

pub fn diagonalize_system(
    sys: &FrequencySystem,
    t_grid: &[f64],
    cutoff: f64,
    moc: &ModulusOfContinuity,
) -> Result<DiagRow> {
    let x = sys.jx();
    let om = moc.omega(x);
    let m = sys.m();
    let mut row = DiagRow {
        xi: sys.xi,
        sup_offdiag: 0.0,
        sup_bbar_over_omega: 0.0,
        sup_dth_over_omega: 0.0,
        sup_b_over_omega: 0.0,
        sup_lambda_tau_over_omega: 0.0,
        nilpotency: 0.0,
        inverse_error: 0.0,
        eig_error: 0.0,
    };
    let p1 = phi1(sys.xi, cutoff);
    for &t in t_grid {
        let s = sys.slice(t);
        let d = diagonalizer_with_phi1(&s.lambda, t, sys.xi, cutoff, p1)?;
        let ds = diagonalize_slice(&s, &d);
        for p in 0..m {
            for q in 0..m {
                if p != q {
                    row.sup_offdiag = row.sup_offdiag.max(ds.hah[(p, q)].norm() / x);
                }
            }
        }
        row.sup_bbar_over_omega = row.sup_bbar_over_omega.max(max_abs(&ds.bbar) / om);
        row.sup_dth_over_omega = row.sup_dth_over_omega.max(d.dt_h.amax() / om);
        row.sup_b_over_omega = row.sup_b_over_omega.max(max_abs(&s.b) / om);
        let tau = characteristic_roots(&sys.spec, t.clamp(0.0, sys.spec.t_final), sys.xi)?;
        for j in 0..m {
            row.sup_lambda_tau_over_omega =
                row.sup_lambda_tau_over_omega.max((ds.lambda[j] - tau[j]).abs() / om);
        }
        let mut tp = DMatrix::<f64>::identity(m, m);
        for _ in 0..m {
            tp = &tp * &d.t_mat;
        }
        row.nilpotency = row.nilpotency.max(tp.amax());
        let e = &d.h * &d.hinv - DMatrix::<f64>::identity(m, m);
        row.inverse_error = row.inverse_error.max(e.amax());
        let ea = sorted_eigs(&s.a);
        let eh = sorted_eigs(&ds.hah);
        for (a, b) in ea.iter().zip(&eh) {
            row.eig_error = row.eig_error.max((a - b).abs() / x);
        }
    }
    Ok(row)
}

/// Coefficients of prod_j (tau - lambda_j) minus those of the characteristic
/// polynomial, per degree j = 0..m-1, divided by <xi>^(m-1-j) omega(<xi>).
/// lambda is the Gauss-Legendre mollification at scale 1/<xi>.
pub fn factorization_residual(
    spec: &ProblemSpec,
    moc: &ModulusOfContinuity,
    t: f64,
    xi: f64,
) -> Result<Vec<f64>> {
    let m = spec.m;
    let x = japanese(xi);
    let lam = crate::roots::mollified_roots(spec, t, xi, 1.0 / x, standard_mollifier())?;
    // prod (tau - lambda_j) = tau^m + sum_k a_k tau^(m-k), a_k = (-1)^k e_k
    let e = crate::coeffs::elementary_symmetric(&lam);
    let q = spec.principal_coefficients(t, xi);
    let om = moc.omega(x);
    Ok((0..m)
        .map(|j| {
            // degree j <-> k = m - j
            let k = m - j;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let ours = sign * e[k];
            let truth = -q[k - 1];
            (ours - truth).abs() / (x.powi((m - 1 - j) as i32) * om)
        })
        .collect())
}

/// (I + K)^-1 as sum (-K)^k.
pub fn neumann_invert(k: &CMatrix) -> Result<CMatrix> {
    let n = k.nrows();
    let norm = k.clone().singular_values().max();
    if norm >= 0.5 {
        return Err(HypError::NormTooLarge(norm));
    }
    let mut sum = CMatrix::identity(n, n);
    let mut term = CMatrix::identity(n, n);
    for _ in 0..10_000 {
        term = -(&term * k);
        let tn = term.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        sum += &term;
        if tn < 1e-14 {
            break;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::CoefficientFamily;

    fn wave(fam: CoefficientFamily, moc: ModulusOfContinuity) -> ProblemSpec {
        ProblemSpec::wave(fam, moc)
    }

    #[test]
    fn constant_wave_system() {
        let spec = wave(CoefficientFamily::constant(4.0).unwrap(), ModulusOfContinuity::lipschitz());
        let sys = build_system(&spec, 10.0).unwrap();
        let s = sys.slice(0.3);
        let e = sorted_eigs(&s.a);
        assert!((e[0] + 20.0).abs() < 1e-10 && (e[1] - 20.0).abs() < 1e-10);
        // constant coefficients: the factorization is exact and B = 0
        assert!(max_abs(&s.b) < 1e-9, "{}", s.b);
        assert_eq!(s.a[(1, 0)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn two_by_two_diagonalizer() {
        let lam = [Jet::constant(-3.0, 1), Jet::constant(5.0, 1)];
        let xi = 100.0;
        let d = build_diagonalizer(&lam, 0.0, xi, 16.0).unwrap();
        assert!((d.t_mat[(0, 1)] - japanese(xi) / 8.0).abs() < 1e-12);
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 0)] = (-3.0).into();
        a[(1, 1)] = 5.0.into();
        a[(0, 1)] = japanese(xi).into();
        let hah = to_c(&d.hinv) * a * to_c(&d.h);
        assert!(hah[(0, 1)].norm() < 1e-12 * japanese(xi));
        assert!(hah[(1, 0)].norm() < 1e-14);
    }

    #[test]
    fn cutoff_region_is_identity() {
        let lam = [Jet::constant(-3.0, 1), Jet::constant(5.0, 1)];
        let d = build_diagonalizer(&lam, 0.0, 10.0, 16.0).unwrap();
        assert_eq!(d.t_mat.amax(), 0.0);
        assert_eq!(d.h, DMatrix::<f64>::identity(2, 2));
        assert_eq!(phi1(32.0, 16.0), 0.0);
        assert!(phi1(24.0, 16.0) > 0.0 && phi1(24.0, 16.0) < 1.0);
        assert!((phi1(24.0, 16.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separation_lost() {
        let lam = [Jet::constant(1.0, 1), Jet::constant(1.0, 1)];
        assert!(matches!(
            build_diagonalizer(&lam, 0.1, 64.0, 16.0),
            Err(HypError::SeparationLost { .. })
        ));
    }

    #[test]
    fn third_order_nilpotent() {
        let lam = [Jet::constant(-7.0, 1), Jet::constant(1.5, 1), Jet::constant(9.0, 1)];
        let d = build_diagonalizer(&lam, 0.0, 64.0, 16.0).unwrap();
        let t3 = &d.t_mat * &d.t_mat * &d.t_mat;
        assert_eq!(t3.amax(), 0.0);
        let e = &d.h * &d.hinv - DMatrix::<f64>::identity(3, 3);
        assert!(e.amax() < 1e-12);
    }

    #[test]
    fn reconstruct_inverts_initial_state() {
        let spec = wave(
            CoefficientFamily::smooth(1.0, 0.3, 2.0).unwrap(),
            ModulusOfContinuity::lipschitz(),
        );
        let sys = build_system(&spec, 20.0).unwrap();
        let g = [Complex64::new(0.7, 0.1), Complex64::new(-3.0, 2.0)];
        let u0 = sys.initial_state(&g);
        let back = sys.reconstruct(0.0, &u0);
        for (a, b) in back.iter().zip(&g) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn neumann_cases() {
        let z = CMatrix::zeros(3, 3);
        assert_eq!(neumann_invert(&z).unwrap(), CMatrix::identity(3, 3));
        let mut n = CMatrix::zeros(3, 3);
        n[(0, 1)] = Complex64::new(0.2, 0.0);
        n[(1, 2)] = Complex64::new(0.0, 0.3);
        let inv = neumann_invert(&n).unwrap();
        let e = (CMatrix::identity(3, 3) + &n) * inv - CMatrix::identity(3, 3);
        assert!(max_abs(&e) < 1e-15);
        let mut big = CMatrix::zeros(2, 2);
        big[(0, 0)] = Complex64::new(0.6, 0.0);
        assert!(matches!(neumann_invert(&big), Err(HypError::NormTooLarge(_))));
    }

    #[test]
    fn factorization_constant_is_exact() {
        let spec = wave(CoefficientFamily::constant(2.0).unwrap(), ModulusOfContinuity::log_lip());
        let r = factorization_residual(&spec, &ModulusOfContinuity::log_lip(), 0.4, 256.0).unwrap();
        assert!(r.iter().all(|v| *v < 1e-10), "{r:?}");
    }
}
