//! Coefficient families with a prescribed time modulus, problem
//! specifications, hyperbolicity and modulus-seminorm checks.

use crate::error::{HypError, Result};
use crate::ids::parse_id_raw;
use crate::japanese;
use crate::moduli::ModulusOfContinuity;
use crate::roots::characteristic_roots;
use crate::weights::{WeightFunction, WeightSequence};

#[derive(Debug, Clone)]
pub enum FamilyKind {
    Constant { c: f64 },
    /// c0 + c1 sin(nu t)
    Smooth { c0: f64, c1: f64, nu: f64 },
    /// c0 + c mu(dist(t, h Z))
    Sawtooth { c0: f64, c: f64, h: f64, mu: ModulusOfContinuity },
    /// 1 + delta sin(2 xi t), delta = c mu(1/xi)
    Resonant { c: f64, xi: f64, delta: f64, mu: ModulusOfContinuity },
    /// offset + base(t)
    Shifted { base: Box<CoefficientFamily>, offset: f64 },
    /// sign * e_k(s_1(t), ..., s_m(t)), the principal coefficient built from speeds
    Symmetric { k: usize, sign: f64, speeds: Vec<CoefficientFamily> },
}

#[derive(Debug, Clone)]
pub struct CoefficientFamily {
    pub name: String,
    pub kind: FamilyKind,
    /// Modulus the family is built to satisfy (None for smooth ones).
    pub claimed_modulus: Option<ModulusOfContinuity>,
}

fn dist_to_lattice(t: f64, h: f64) -> f64 {
    let r = t.rem_euclid(h);
    r.min(h - r)
}

/// Elementary symmetric polynomials e_0..e_m of `x`.
pub fn elementary_symmetric(x: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; x.len() + 1];
    e[0] = 1.0;
    for (i, &v) in x.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            e[k] += v * e[k - 1];
        }
    }
    e
}

impl CoefficientFamily {
    pub fn constant(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(HypError::Parameter(format!("constant c = {c}")));
        }
        Ok(CoefficientFamily {
            name: format!("coeff:constant:c={c}"),
            kind: FamilyKind::Constant { c },
            claimed_modulus: None,
        })
    }

    pub fn smooth(c0: f64, c1: f64, nu: f64) -> Result<Self> {
        if !(c0 > 0.0) || c1.abs() >= c0 {
            return Err(HypError::Parameter(format!(
                "smooth family needs |c1| < c0 (c0 = {c0}, c1 = {c1})"
            )));
        }
        Ok(CoefficientFamily {
            name: format!("coeff:smooth:c0={c0},c1={c1},nu={nu}"),
            kind: FamilyKind::Smooth { c0, c1, nu },
            claimed_modulus: Some(ModulusOfContinuity::lipschitz()),
        })
    }

    pub fn sawtooth(mu: ModulusOfContinuity, c0: f64, c: f64, h: f64) -> Result<Self> {
        if !(c0 > 0.0) || c.abs() >= c0 {
            return Err(HypError::Parameter(format!(
                "sawtooth needs |c| < c0 for positivity (c0 = {c0}, c = {c})"
            )));
        }
        if !(h > 0.0 && h <= 2.0) {
            return Err(HypError::Parameter(format!("sawtooth pitch h = {h} not in (0,2]")));
        }
        Ok(CoefficientFamily {
            name: format!("coeff:sawtooth:mu={},c={c},h={h}", mu.id()),
            kind: FamilyKind::Sawtooth { c0, c, h, mu: mu.clone() },
            claimed_modulus: Some(mu),
        })
    }

    pub fn resonant(mu: ModulusOfContinuity, c: f64, xi: f64) -> Result<Self> {
        if c.abs() >= 1.0 {
            return Err(HypError::Parameter(format!("resonant needs |c| < 1, got {c}")));
        }
        if !(xi >= 1.0) {
            return Err(HypError::Parameter(format!("resonant frequency xi = {xi} < 1")));
        }
        let delta = c * mu.mu_generic(1.0 / xi);
        Ok(CoefficientFamily {
            name: format!("coeff:resonant:mu={},c={c}", mu.id()),
            kind: FamilyKind::Resonant { c, xi, delta, mu: mu.clone() },
            claimed_modulus: Some(mu),
        })
    }

    pub fn shifted(base: CoefficientFamily, offset: f64) -> Self {
        CoefficientFamily {
            name: format!("{}+{offset}", base.name),
            claimed_modulus: base.claimed_modulus.clone(),
            kind: FamilyKind::Shifted { base: Box::new(base), offset },
        }
    }

    /// Principal coefficients p_1..p_m with prod_j (tau - s_j xi) =
    /// tau^m - sum_k p_k xi^k tau^(m-k), i.e. p_k = (-1)^(k+1) e_k(s).
    pub fn from_speeds(speeds: &[CoefficientFamily]) -> Vec<CoefficientFamily> {
        (1..=speeds.len())
            .map(|k| CoefficientFamily {
                name: format!("speeds:e{k}"),
                kind: FamilyKind::Symmetric {
                    k,
                    sign: if k % 2 == 1 { 1.0 } else { -1.0 },
                    speeds: speeds.to_vec(),
                },
                claimed_modulus: speeds[0].claimed_modulus.clone(),
            })
            .collect()
    }

    /// Builds a family from a config id, e.g.
    /// `"coeff:sawtooth:mu=log-lip,c=0.1,h=0.125"`. Resonant families need
    /// the frequency `xi` they are tuned to.
    pub fn from_id(id: &str, xi: Option<f64>) -> Result<Self> {
        let (head, params) = parse_id_raw(id)?;
        let head: Vec<&str> = head.iter().map(|s| s.as_str()).collect();
        let num = |k: &str, default: Option<f64>| -> Result<f64> {
            match params.get(k) {
                Some(v) => v
                    .parse()
                    .map_err(|_| HypError::Parameter(format!("{id}: `{k}={v}` is not a number"))),
                None => default.ok_or_else(|| HypError::Parameter(format!("{id}: missing `{k}`"))),
            }
        };
        let allow = |keys: &[&str]| -> Result<()> {
            match params.keys().find(|k| !keys.contains(&k.as_str())) {
                Some(k) => Err(HypError::UnknownId(format!("{id} (parameter `{k}`)"))),
                None => Ok(()),
            }
        };
        let modulus = || -> Result<ModulusOfContinuity> {
            let m = params
                .get("mu")
                .ok_or_else(|| HypError::Parameter(format!("{id}: missing `mu`")))?;
            ModulusOfContinuity::from_id(m)
        };
        match head.as_slice() {
            ["coeff", "constant"] => {
                allow(&["c"])?;
                Self::constant(num("c", None)?)
            }
            ["coeff", "smooth"] => {
                allow(&["c0", "c1", "nu"])?;
                Self::smooth(num("c0", Some(1.0))?, num("c1", None)?, num("nu", Some(1.0))?)
            }
            ["coeff", "sawtooth"] => {
                allow(&["mu", "c0", "c", "h"])?;
                Self::sawtooth(modulus()?, num("c0", Some(1.0))?, num("c", None)?, num("h", Some(0.125))?)
            }
            ["coeff", "resonant"] => {
                allow(&["mu", "c"])?;
                let xi = xi.ok_or_else(|| {
                    HypError::Parameter(format!("{id}: resonant family needs a frequency"))
                })?;
                Self::resonant(modulus()?, num("c", Some(0.5))?, xi.abs())
            }
            _ => Err(HypError::UnknownId(id.to_string())),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            FamilyKind::Constant { c } => *c,
            FamilyKind::Smooth { c0, c1, nu } => c0 + c1 * (nu * t).sin(),
            FamilyKind::Sawtooth { c0, c, h, mu } => c0 + c * mu.mu_or_zero(dist_to_lattice(t, *h)),
            FamilyKind::Resonant { xi, delta, .. } => 1.0 + delta * (2.0 * xi * t).sin(),
            FamilyKind::Shifted { base, offset } => offset + base.eval(t),
            FamilyKind::Symmetric { k, sign, speeds } => {
                let s: Vec<f64> = speeds.iter().map(|f| f.eval(t)).collect();
                sign * elementary_symmetric(&s)[*k]
            }
        }
    }

    /// Guaranteed lower bound of a(t) over all t (None if not available).
    pub fn lower_bound(&self) -> Option<f64> {
        match &self.kind {
            FamilyKind::Constant { c } => Some(*c),
            FamilyKind::Smooth { c0, c1, .. } => Some(c0 - c1.abs()),
            FamilyKind::Sawtooth { c0, c, h, mu } => {
                Some(if *c >= 0.0 { *c0 } else { c0 + c * mu.mu_or_zero(h / 2.0) })
            }
            FamilyKind::Resonant { delta, .. } => Some(1.0 - delta.abs()),
            FamilyKind::Shifted { base, offset } => base.lower_bound().map(|b| b + offset),
            FamilyKind::Symmetric { .. } => None,
        }
    }

    /// Resonance frequency for resonant families.
    pub fn resonance(&self) -> Option<(f64, f64)> {
        match &self.kind {
            FamilyKind::Resonant { xi, delta, .. } => Some((*xi, *delta)),
            _ => None,
        }
    }
}

/// Pairs (t, t + d) used by [`modulus_seminorm`].
#[derive(Debug, Clone)]
pub struct SeminormGrid {
    pub base: Vec<f64>,
    pub lags: Vec<f64>,
    pub t_final: f64,
}

impl SeminormGrid {
    /// 1025 base points on [0, T] and 120 log-spaced lags in [1e-9, 1].
    pub fn standard(t_final: f64) -> Self {
        SeminormGrid {
            base: crate::fit::lin_grid(0.0, t_final, 1025),
            lags: crate::fit::log_grid(1e-9, 1.0, 120),
            t_final,
        }
    }
}

/// sup over grid pairs with |t - s| <= 1 of |a(t) - a(s)| / mu(|t - s|).
pub fn modulus_seminorm(fam: &CoefficientFamily, mu: &ModulusOfContinuity, grid: &SeminormGrid) -> f64 {
    let mut sup = 0.0f64;
    for &t in &grid.base {
        let at = fam.eval(t);
        for &d in &grid.lags {
            if d > 1.0 || t + d > grid.t_final + 1e-15 {
                continue;
            }
            let s = t + d;
            let diff = (fam.eval(s) - at).abs();
            sup = sup.max(diff / mu.mu_generic(s - t));
        }
    }
    sup
}

/// Spectral profile of the Cauchy data g_k = D_t^(k-1) u(0) at frequency xi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataProfile {
    /// g_1 = 1, g_k = 0 for k > 1 (both characteristic modes excited).
    Standing,
    /// g_k = tau_m(0, xi)^(k-1): a single forward mode of the frozen problem.
    Forward,
}

/// Spectral profile of the right-hand side f(t, xi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhsProfile {
    Zero,
    /// amp cos(freq t), the same at every frequency.
    Harmonic { amp: f64, freq: f64 },
}

impl RhsProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            RhsProfile::Zero => 0.0,
            RhsProfile::Harmonic { amp, freq } => amp * (freq * t).cos(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, RhsProfile::Zero)
    }
}

/// Lower-order term a_{m-j,gamma}(t) xi^gamma D_t^j u with j + gamma <= m - 1.
#[derive(Debug, Clone)]
pub struct LowerTerm {
    pub j: usize,
    pub gamma: u32,
    pub family: CoefficientFamily,
}

/// Cauchy problem D_t^m u = sum_k p_k(t) xi^k D_t^(m-k) u + lower + f.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub m: usize,
    /// p_1..p_m: coefficient of xi^k D_t^(m-k).
    pub principal: Vec<CoefficientFamily>,
    pub lower: Vec<LowerTerm>,
    pub data: DataProfile,
    pub rhs: RhsProfile,
    pub t_final: f64,
    pub nu: f64,
    pub modulus: ModulusOfContinuity,
    pub eta: Option<WeightFunction>,
    pub k_seq: Option<WeightSequence>,
    pub delta1: f64,
    pub delta2: f64,
}

impl ProblemSpec {
    /// Wave equation u_tt + a(t) xi^2 u = 0, i.e. D_t^2 u = a xi^2 u.
    pub fn wave(a: CoefficientFamily, modulus: ModulusOfContinuity) -> Self {
        let zero = CoefficientFamily::constant(0.0).expect("zero");
        ProblemSpec {
            m: 2,
            principal: vec![zero, a],
            lower: Vec::new(),
            data: DataProfile::Standing,
            rhs: RhsProfile::Zero,
            t_final: 1.0,
            nu: 0.0,
            modulus,
            eta: None,
            k_seq: None,
            delta1: 0.0,
            delta2: 0.0,
        }
    }

    /// m-th order problem whose characteristic speeds are the given families.
    pub fn from_speeds(speeds: Vec<CoefficientFamily>, modulus: ModulusOfContinuity) -> Result<Self> {
        if speeds.len() < 2 {
            return Err(HypError::Parameter("need at least two speeds".into()));
        }
        let mut spec = Self::wave(CoefficientFamily::constant(1.0)?, modulus);
        spec.m = speeds.len();
        spec.principal = CoefficientFamily::from_speeds(&speeds);
        Ok(spec)
    }

    /// Coefficients c_j(t, xi), j = 0..m-1, of D_t^m u = sum_j c_j D_t^j u + f.
    pub fn reduced_coefficients(&self, t: f64, xi: f64) -> Vec<f64> {
        let m = self.m;
        let mut c = vec![0.0; m];
        for (idx, fam) in self.principal.iter().enumerate() {
            let k = idx + 1;
            c[m - k] += fam.eval(t) * xi.powi(k as i32);
        }
        for lt in &self.lower {
            c[lt.j] += lt.family.eval(t) * xi.powi(lt.gamma as i32);
        }
        c
    }

    /// Principal part only: p_k(t) xi^k.
    pub fn principal_coefficients(&self, t: f64, xi: f64) -> Vec<f64> {
        self.principal
            .iter()
            .enumerate()
            .map(|(idx, f)| f.eval(t) * xi.powi(idx as i32 + 1))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(HypError::Parameter(format!("order m = {} < 2", self.m)));
        }
        if self.principal.len() != self.m {
            return Err(HypError::Parameter(format!(
                "expected {} principal coefficients, got {}",
                self.m,
                self.principal.len()
            )));
        }
        for lt in &self.lower {
            if lt.j + lt.gamma as usize > self.m - 1 {
                return Err(HypError::Parameter(format!(
                    "lower-order term j = {}, gamma = {} exceeds order m - 1",
                    lt.j, lt.gamma
                )));
            }
        }
        if !(self.t_final > 0.0) {
            return Err(HypError::Parameter(format!("final time T = {}", self.t_final)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HyperbolicityReport {
    /// min over the grid of (tau_{j+1} - tau_j) / <xi>.
    pub min_gap: f64,
    pub min_gap_at: (f64, f64),
    /// First failing node with its error.
    pub failure: Option<(f64, f64, HypError)>,
    pub pass: bool,
}

pub fn hyperbolicity_check(
    spec: &ProblemSpec,
    t_grid: &[f64],
    xi_grid: &[f64],
    gap_min: f64,
) -> Result<HyperbolicityReport> {
    if t_grid.is_empty() || xi_grid.is_empty() {
        return Err(HypError::InsufficientData("empty grid".into()));
    }
    let mut min_gap = f64::INFINITY;
    let mut at = (f64::NAN, f64::NAN);
    for &xi in xi_grid {
        for &t in t_grid {
            match characteristic_roots(spec, t, xi) {
                Ok(r) => {
                    for w in r.windows(2) {
                        let g = (w[1] - w[0]) / japanese(xi);
                        if g < min_gap {
                            min_gap = g;
                            at = (t, xi);
                        }
                    }
                }
                Err(e) => {
                    return Ok(HyperbolicityReport {
                        min_gap: 0.0,
                        min_gap_at: (t, xi),
                        failure: Some((t, xi, e)),
                        pass: false,
                    })
                }
            }
        }
    }
    Ok(HyperbolicityReport {
        min_gap,
        min_gap_at: at,
        failure: None,
        pass: min_gap >= gap_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_family() {
        let f = CoefficientFamily::constant(1.0).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(f.eval(t), 1.0);
        }
        assert_eq!(modulus_seminorm(&f, &ModulusOfContinuity::lipschitz(), &SeminormGrid::standard(1.0)), 0.0);
    }

    #[test]
    fn sawtooth_seminorm_is_its_amplitude() {
        let f = CoefficientFamily::from_id("coeff:sawtooth:mu=log-lip,c=0.1,h=0.125", None).unwrap();
        let s = modulus_seminorm(&f, &ModulusOfContinuity::log_lip(), &SeminormGrid::standard(1.0));
        assert!((s - 0.1).abs() < 1e-3, "{s}");
        // rounding of values near 1 over lags down to 1e-9 is about 1e-7 relative
        assert!(s <= 0.1 * (1.0 + 1e-6));
    }

    #[test]
    fn resonant_lipschitz_seminorm() {
        let f = CoefficientFamily::resonant(ModulusOfContinuity::lipschitz(), 0.25, 64.0).unwrap();
        let (_, delta) = f.resonance().unwrap();
        assert!((delta - 0.25 / 64.0).abs() < 1e-16);
        let s = modulus_seminorm(&f, &ModulusOfContinuity::lipschitz(), &SeminormGrid::standard(1.0));
        assert!((s - 0.5).abs() < 1e-6, "{s}");
    }

    #[test]
    fn identity_function_seminorm() {
        // a(t) = t on [0, 1]: Lipschitz sawtooth with pitch 2, shifted down
        let saw = CoefficientFamily::sawtooth(ModulusOfContinuity::lipschitz(), 2.0, 1.0, 2.0).unwrap();
        let f = CoefficientFamily::shifted(saw, -2.0);
        assert!((f.eval(0.3) - 0.3).abs() < 1e-15);
        let s = modulus_seminorm(&f, &ModulusOfContinuity::lipschitz(), &SeminormGrid::standard(1.0));
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn positivity_guard() {
        assert!(CoefficientFamily::sawtooth(ModulusOfContinuity::log_lip(), 0.5, 0.5, 0.125).is_err());
        assert!(CoefficientFamily::from_id("coeff:resonant:mu=log-lip,c=1.2", Some(16.0)).is_err());
        assert!(CoefficientFamily::from_id("coeff:wobbly:c=1", None).is_err());
        assert!(CoefficientFamily::from_id("coeff:sawtooth:mu=log-lip,c=0.1,q=3", None).is_err());
    }

    #[test]
    fn elementary_symmetric_of_speeds() {
        let e = elementary_symmetric(&[-2.0, 1.0, 3.0]);
        assert_eq!(e, vec![1.0, 2.0, -5.0, -6.0]);
        let speeds: Vec<_> = [-2.0, 1.0, 3.0]
            .iter()
            .map(|&s| CoefficientFamily::constant(s).unwrap())
            .collect();
        let p = CoefficientFamily::from_speeds(&speeds);
        let vals: Vec<f64> = p.iter().map(|f| f.eval(0.0)).collect();
        assert_eq!(vals, vec![2.0, 5.0, -6.0]);
    }

    #[test]
    fn wave_hyperbolicity() {
        let spec = ProblemSpec::wave(
            CoefficientFamily::smooth(0.75, 0.25, 3.0).unwrap(),
            ModulusOfContinuity::lipschitz(),
        );
        let t = crate::fit::lin_grid(0.0, 1.0, 101);
        let xi = crate::fit::dyadic(0, 10);
        let r = hyperbolicity_check(&spec, &t, &xi, 0.1).unwrap();
        assert!(r.pass);
        // gap 2 sqrt(a) |xi| / <xi> >= sqrt(2) min sqrt(a) only for |xi| >= 1
        let amin: f64 = 0.5;
        assert!(r.min_gap >= 2.0 * amin.sqrt() / 2f64.sqrt() - 1e-12);
    }

    #[test]
    fn sign_change_fails_with_witness() {
        let spec = ProblemSpec::wave(
            CoefficientFamily::shifted(CoefficientFamily::smooth(1.0, 0.5, 6.0).unwrap(), -1.0),
            ModulusOfContinuity::lipschitz(),
        );
        let t = crate::fit::lin_grid(0.0, 1.0, 64);
        let r = hyperbolicity_check(&spec, &t, &[8.0], 0.1).unwrap();
        assert!(!r.pass);
        assert!(r.failure.is_some());
    }

    #[test]
    fn speeds_gap() {
        let speeds: Vec<_> = [-2.0, 1.0, 3.0]
            .iter()
            .map(|&s| CoefficientFamily::constant(s).unwrap())
            .collect();
        let spec = ProblemSpec::from_speeds(speeds, ModulusOfContinuity::lipschitz()).unwrap();
        let r = hyperbolicity_check(&spec, &[0.0, 0.5], &[2.0], 0.1).unwrap();
        assert!((r.min_gap - 2.0 * 2.0 / japanese(2.0)).abs() < 1e-10);
    }
}
