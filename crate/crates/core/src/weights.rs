//! Weight functions, weight sequences, associated-function transforms,
//! compatibility and subadditivity certificates, and the Lambert W function.

use crate::error::{HypError, Result};
use crate::ids::parse_id;
use crate::japanese;
use crate::moduli::ModulusOfContinuity;
use crate::taylor::{Jet, Real, MAX_ORDER};

#[derive(Debug, Clone, PartialEq)]
pub enum WeightKind {
    /// s^kappa
    Power { kappa: f64 },
    /// log(s) (log^[m] s)^(1+eps) + c, with log^[m] clamped below at 1.
    LogLogM { m: u32, eps: f64, c: f64 },
    /// s (log s + 1)^(-alpha)
    SubLog { alpha: f64 },
    /// log s (not a catalog weight; used as psi = log<.> and in checks).
    Log,
    /// s (not a catalog weight; used as the linear associated function).
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    id: String,
    kind: WeightKind,
}

fn iterated_log<R: Real>(x: R, depth: u32) -> R {
    let mut y = x;
    for _ in 0..depth {
        y = y.ln();
    }
    y
}

impl WeightFunction {
    pub fn power(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(HypError::Parameter(format!("power kappa = {kappa} must be positive")));
        }
        Ok(WeightFunction {
            id: format!("eta:power:kappa={kappa}"),
            kind: WeightKind::Power { kappa },
        })
    }

    pub fn loglogm(m: u32, eps: f64) -> Result<Self> {
        if !(1..=3).contains(&m) || !(eps > 0.0) {
            return Err(HypError::Parameter(format!("loglogm m = {m}, eps = {eps}")));
        }
        Ok(WeightFunction {
            id: format!("eta:loglogm:m={m},eps={eps}"),
            kind: WeightKind::LogLogM { m, eps, c: 1.0 },
        })
    }

    pub fn sublog(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(HypError::Parameter(format!("sublog alpha = {alpha} not in (0,1)")));
        }
        Ok(WeightFunction {
            id: format!("eta:sublog:alpha={alpha}"),
            kind: WeightKind::SubLog { alpha },
        })
    }

    pub fn log() -> Self {
        WeightFunction { id: "eta:log".into(), kind: WeightKind::Log }
    }

    pub fn linear() -> Self {
        WeightFunction { id: "eta:linear".into(), kind: WeightKind::Linear }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        let (head, params) = parse_id(id)?;
        let check = |allowed: &[&str]| -> Result<()> {
            match params.keys().find(|k| !allowed.contains(&k.as_str())) {
                Some(k) => Err(HypError::UnknownId(format!("{id} (parameter `{k}`)"))),
                None => Ok(()),
            }
        };
        let get = |k: &str| -> Result<f64> {
            params
                .get(k)
                .copied()
                .ok_or_else(|| HypError::Parameter(format!("{id}: missing `{k}`")))
        };
        let head: Vec<&str> = head.iter().map(|s| s.as_str()).collect();
        match head.as_slice() {
            ["eta", "power"] => {
                check(&["kappa"])?;
                Self::power(get("kappa")?)
            }
            ["eta", "loglogm"] => {
                check(&["m", "eps"])?;
                let m = get("m")?;
                if m.fract() != 0.0 {
                    return Err(HypError::Parameter(format!("{id}: m must be an integer")));
                }
                Self::loglogm(m as u32, get("eps")?)
            }
            ["eta", "sublog"] => {
                check(&["alpha"])?;
                Self::sublog(get("alpha")?)
            }
            ["eta", "log"] => {
                check(&[])?;
                Ok(Self::log())
            }
            ["eta", "linear"] => {
                check(&[])?;
                Ok(Self::linear())
            }
            _ => Err(HypError::UnknownId(id.to_string())),
        }
    }

    pub fn catalog() -> Vec<Self> {
        vec![
            Self::power(0.6).expect("catalog"),
            Self::loglogm(2, 0.5).expect("catalog"),
            Self::sublog(0.3).expect("catalog"),
        ]
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn eval_generic<R: Real>(&self, s: R) -> R {
        match self.kind {
            WeightKind::Power { kappa } => s.powf(kappa),
            WeightKind::LogLogM { m, eps, c } => {
                let l = s.ln();
                // the iterated log is replaced by 1 below its unit crossing
                let mut switch = 1.0f64;
                for _ in 0..m {
                    switch = switch.exp();
                }
                if s.value() >= switch {
                    l * iterated_log(s, m).powf(1.0 + eps) + c
                } else {
                    l + c
                }
            }
            WeightKind::SubLog { alpha } => s * (s.ln() + 1.0).powf(-alpha),
            WeightKind::Log => s.ln(),
            WeightKind::Linear => s,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_generic(s)
    }

    pub fn derivative(&self, k: usize, s: f64) -> Result<f64> {
        if k > MAX_ORDER {
            return Err(HypError::Oracle(format!("order {k} > {MAX_ORDER}")));
        }
        Ok(self.eval_generic(Jet::variable(s, k)).derivative(k))
    }

    /// Taylor jet of s -> eta(s) at s0 (used by the pdo conjugation weights).
    pub fn jet(&self, s: Jet) -> Jet {
        self.eval_generic(s)
    }
}

/// Anything with values and derivatives on [1, inf): eta or omega.
pub trait WeightLike {
    fn name(&self) -> String;
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, k: usize, s: f64) -> Result<f64>;
}

impl WeightLike for WeightFunction {
    fn name(&self) -> String {
        self.id.clone()
    }
    fn value(&self, s: f64) -> f64 {
        self.eval(s)
    }
    fn derivative(&self, k: usize, s: f64) -> Result<f64> {
        WeightFunction::derivative(self, k, s)
    }
}

/// omega of a modulus viewed as a weight.
pub struct OmegaWeight<'a>(pub &'a ModulusOfContinuity);

impl WeightLike for OmegaWeight<'_> {
    fn name(&self) -> String {
        format!("omega[{}]", self.0.id())
    }
    fn value(&self, s: f64) -> f64 {
        self.0.omega(s)
    }
    fn derivative(&self, k: usize, s: f64) -> Result<f64> {
        self.0.omega_derivative(k, s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceKind {
    /// (p!)^(1/kappa) A^p
    Gevrey { kappa: f64, a: f64 },
    /// p^(p^2)
    Psq,
    /// ((p+1) log(e+p))^p
    LogFactor,
    /// K_p = 1
    Constant,
    /// p!
    Factorial,
    /// Explicit table of ln K_p.
    Table(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    id: String,
    kind: SequenceKind,
    pub growth_note: String,
}

fn ln_factorial(p: u64) -> f64 {
    (2..=p).map(|k| (k as f64).ln()).sum()
}

impl WeightSequence {
    pub fn gevrey(kappa: f64, a: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(a > 0.0) {
            return Err(HypError::Parameter(format!("gevrey kappa = {kappa}, A = {a}")));
        }
        Ok(WeightSequence {
            id: format!("K:gevrey:kappa={kappa},A={a}"),
            kind: SequenceKind::Gevrey { kappa, a },
            growth_note: "Gevrey: log K_p ~ (p log p)/kappa".into(),
        })
    }

    pub fn psq() -> Self {
        WeightSequence {
            id: "K:psq".into(),
            kind: SequenceKind::Psq,
            growth_note: "log K_p = p^2 log p".into(),
        }
    }

    pub fn logfactor() -> Self {
        WeightSequence {
            id: "K:logfactor".into(),
            kind: SequenceKind::LogFactor,
            growth_note: "log K_p = p log((p+1) log(e+p)), just above analytic".into(),
        }
    }

    pub fn constant() -> Self {
        WeightSequence {
            id: "K:const".into(),
            kind: SequenceKind::Constant,
            growth_note: "K_p = 1".into(),
        }
    }

    pub fn factorial() -> Self {
        WeightSequence {
            id: "K:factorial".into(),
            kind: SequenceKind::Factorial,
            growth_note: "K_p = p!, analytic class".into(),
        }
    }

    pub fn from_ln_table(name: &str, ln_values: Vec<f64>) -> Self {
        WeightSequence {
            id: name.to_string(),
            kind: SequenceKind::Table(ln_values),
            growth_note: "tabulated".into(),
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        let (head, params) = parse_id(id)?;
        let head: Vec<&str> = head.iter().map(|s| s.as_str()).collect();
        let no_params = |s: Self| -> Result<Self> {
            if let Some(k) = params.keys().next() {
                return Err(HypError::UnknownId(format!("{id} (parameter `{k}`)")));
            }
            Ok(s)
        };
        match head.as_slice() {
            ["K", "gevrey"] => {
                if let Some(k) = params.keys().find(|k| *k != "kappa" && *k != "A") {
                    return Err(HypError::UnknownId(format!("{id} (parameter `{k}`)")));
                }
                let kappa = *params
                    .get("kappa")
                    .ok_or_else(|| HypError::Parameter(format!("{id}: missing `kappa`")))?;
                Self::gevrey(kappa, params.get("A").copied().unwrap_or(1.0))
            }
            ["K", "psq"] => no_params(Self::psq()),
            ["K", "logfactor"] => no_params(Self::logfactor()),
            ["K", "const"] => no_params(Self::constant()),
            ["K", "factorial"] => no_params(Self::factorial()),
            _ => Err(HypError::UnknownId(id.to_string())),
        }
    }

    pub fn catalog() -> Vec<Self> {
        vec![
            Self::gevrey(0.6, 1.0).expect("catalog"),
            Self::psq(),
            Self::logfactor(),
        ]
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// ln K_p.
    pub fn ln_k(&self, p: u64) -> f64 {
        let pf = p as f64;
        match &self.kind {
            SequenceKind::Gevrey { kappa, a } => ln_factorial(p) / kappa + pf * a.ln(),
            SequenceKind::Psq => {
                if p == 0 {
                    0.0
                } else {
                    pf * pf * pf.ln()
                }
            }
            SequenceKind::LogFactor => pf * ((pf + 1.0) * (std::f64::consts::E + pf).ln()).ln(),
            SequenceKind::Constant => 0.0,
            SequenceKind::Factorial => ln_factorial(p),
            SequenceKind::Table(v) => v.get(p as usize).copied().unwrap_or(f64::INFINITY),
        }
    }

    pub fn k(&self, p: u64) -> f64 {
        self.ln_k(p).exp()
    }

    /// Largest index a tabulated sequence can supply.
    pub fn max_index(&self) -> Option<u64> {
        match &self.kind {
            SequenceKind::Table(v) => Some(v.len() as u64 - 1),
            _ => None,
        }
    }
}

/// max over 0 <= p <= p_max of p log t - log K_p.
pub fn associated_function(k: &WeightSequence, t: f64, p_max: u64) -> Result<f64> {
    Ok(associated_function_argmax(k, t, p_max)?.0)
}

/// As [`associated_function`], also returning the maximizing p.
pub fn associated_function_argmax(k: &WeightSequence, t: f64, p_max: u64) -> Result<(f64, u64)> {
    if !(t > 0.0) {
        return Err(HypError::Domain(format!("associated function needs t > 0, got {t}")));
    }
    if p_max < 1 {
        return Err(HypError::Domain("p_max must be >= 1".into()));
    }
    let top = k.max_index().map_or(p_max, |m| m.min(p_max));
    let lt = t.ln();
    let mut best = (f64::NEG_INFINITY, 0);
    for p in 0..=top {
        let v = p as f64 * lt - k.ln_k(p);
        if v > best.0 {
            best = (v, p);
        }
    }
    Ok(best)
}

/// Log-spaced search grid for the associated sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for TGrid {
    fn default() -> Self {
        TGrid { lo: 1e-6, hi: 1e6, n: 2001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociatedValue {
    /// ln of sup_t t^p e^{-M(t)}.
    pub ln_value: f64,
    pub t_star: f64,
    /// Grid finally searched (after adaptive extension).
    pub grid: TGrid,
}

impl AssociatedValue {
    pub fn value(&self) -> f64 {
        self.ln_value.exp()
    }
}

/// sup over t > 0 of t^p e^{-M(t)}, in log domain: grid search on a
/// log-spaced grid that is extended while the argmax sits on its boundary,
/// followed by one Newton step in u = ln t at the grid argmax.
pub fn associated_sequence(m_fun: &WeightFunction, p: u64, grid: TGrid) -> Result<AssociatedValue> {
    if grid.n < 3 || !(grid.lo > 0.0) || !(grid.hi > grid.lo) {
        return Err(HypError::Domain(format!("bad t grid {grid:?}")));
    }
    let pf = p as f64;
    let g = |u: f64| pf * u - m_fun.eval(u.exp());
    let mut g_lo = grid.lo.ln();
    let mut g_hi = grid.hi.ln();
    let (mut best_u, mut best_v);
    loop {
        let mut idx = 0;
        best_u = g_lo;
        best_v = f64::NEG_INFINITY;
        for i in 0..grid.n {
            let u = g_lo + (g_hi - g_lo) * i as f64 / (grid.n - 1) as f64;
            let v = g(u);
            if v > best_v {
                best_v = v;
                best_u = u;
                idx = i;
            }
        }
        let width = g_hi - g_lo;
        if idx == grid.n - 1 && g_hi < 600.0 {
            g_hi += width;
            continue;
        }
        if idx == 0 && g_lo > -650.0 {
            g_lo = (g_lo - width).max(-690.0);
            continue;
        }
        break;
    }
    // One Newton step on g'(u) = p - M'(t) t, g''(u) = -(M''(t) t^2 + M'(t) t).
    let t = best_u.exp();
    let d1 = m_fun.derivative(1, t)?;
    let d2 = m_fun.derivative(2, t)?;
    let gp = pf - d1 * t;
    let gpp = -(d2 * t * t + d1 * t);
    let (mut ln_value, mut u_star) = (best_v, best_u);
    if gpp < 0.0 && gp.is_finite() {
        let u_new = best_u - gp / gpp;
        let v_new = g(u_new);
        if v_new > best_v {
            ln_value = v_new;
            u_star = u_new;
        }
    }
    Ok(AssociatedValue {
        ln_value,
        t_star: u_star.exp(),
        grid: TGrid { lo: g_lo.exp(), hi: g_hi.exp(), n: grid.n },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityReport {
    pub delta0: f64,
    /// ln C (C itself may overflow).
    pub log_c: f64,
    pub c: f64,
    pub grid: Vec<f64>,
    pub p_max: u64,
    /// First grid xi from which the inequality holds with C = 1.
    pub threshold: Option<f64>,
    pub pass: bool,
}

/// Certificate for inf_p K_p / <xi>^p <= C e^{-delta0 eta(<xi>)} on the grid.
///
/// With M(xi) = -min_p (log K_p - p log<xi>), the certificate line is
/// anchored at the first grid point: delta0 is the largest slope for which
/// M_i >= M_0 + delta0 (eta_i - eta_0) at every grid point, and
/// ln C = delta0 eta_0 - M_0 is then the smallest admissible constant.
pub fn compatibility_check(
    k: &WeightSequence,
    eta: &WeightFunction,
    xi_grid: &[f64],
    p_max: u64,
) -> Result<CompatibilityReport> {
    if xi_grid.len() < 2 {
        return Err(HypError::InsufficientData("compatibility grid needs >= 2 points".into()));
    }
    let mut m = Vec::with_capacity(xi_grid.len());
    let mut e = Vec::with_capacity(xi_grid.len());
    for &xi in xi_grid {
        let s = japanese(xi);
        m.push(associated_function(k, s, p_max)?);
        e.push(eta.eval(s));
    }
    let mut delta0 = f64::INFINITY;
    for i in 1..m.len() {
        let de = e[i] - e[0];
        let dm = m[i] - m[0];
        if de > 0.0 {
            delta0 = delta0.min(dm / de);
        } else if dm < 0.0 {
            delta0 = f64::NEG_INFINITY;
        }
    }
    let finite = delta0.is_finite();
    let log_c = delta0 * e[0] - m[0];
    let holds = finite
        && (0..m.len()).all(|i| -m[i] <= log_c - delta0 * e[i] + 1e-12 * (1.0 + m[i].abs()));
    let threshold = if finite && delta0 > 0.0 {
        let mut thr = None;
        for start in 0..m.len() {
            if (start..m.len()).all(|i| m[i] >= delta0 * e[i]) {
                thr = Some(xi_grid[start]);
                break;
            }
        }
        thr
    } else {
        None
    };
    Ok(CompatibilityReport {
        delta0,
        log_c,
        c: log_c.exp(),
        grid: xi_grid.to_vec(),
        p_max,
        threshold,
        pass: holds && delta0 > 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: String,
    /// (k, C_k) for k = 1..=k_max.
    pub c_k: Vec<(usize, f64)>,
    /// Smallest grid value above which all pairs are subadditive.
    pub subadditive_threshold: Option<f64>,
    pub subadditive_everywhere: bool,
    /// Violating pair with the largest smaller element, if any.
    pub witness: Option<(f64, f64)>,
    pub grid_range: (f64, f64),
}

/// Fits C_k = max |w^(k)(s)| s^k / w(s) over the grid and checks
/// w(<xi + zeta>) <= w(<xi>) + w(<zeta>) over all grid pairs.
pub fn weight_property_check(w: &dyn WeightLike, k_max: usize, grid: &[f64]) -> Result<PropertyReport> {
    if grid.is_empty() {
        return Err(HypError::InsufficientData("empty grid".into()));
    }
    let mut c_k = Vec::new();
    for k in 1..=k_max {
        let mut c = 0.0f64;
        for &s in grid {
            let d = w.derivative(k, s)?;
            c = c.max(d.abs() * s.powi(k as i32) / w.value(s));
        }
        c_k.push((k, c));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let vals: Vec<f64> = sorted.iter().map(|&x| w.value(japanese(x))).collect();
    let mut worst: Option<(f64, f64)> = None;
    for i in 0..sorted.len() {
        for j in i..sorted.len() {
            let lhs = w.value(japanese(sorted[i] + sorted[j]));
            if lhs > vals[i] + vals[j] + 1e-12 * lhs.abs() {
                let better = match worst {
                    None => true,
                    Some((a, _)) => sorted[i] > a,
                };
                if better {
                    worst = Some((sorted[i], sorted[j]));
                }
            }
        }
    }
    let threshold = match worst {
        None => Some(sorted[0]),
        Some((a, _)) => sorted.iter().copied().find(|&x| x > a),
    };
    Ok(PropertyReport {
        name: w.name(),
        c_k,
        subadditive_threshold: threshold,
        subadditive_everywhere: worst.is_none(),
        witness: worst,
        grid_range: (sorted[0], *sorted.last().unwrap()),
    })
}

/// Principal branch of Lambert W by Halley iteration.
///
/// Initial guess: ln(1 + x) for x <= e, and L1 - L2 + L2/L1 with
/// L1 = ln x, L2 = ln L1 above.
pub fn lambert_w(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(HypError::Domain(format!("lambert_w needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = if x <= std::f64::consts::E {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let dw = f / denom;
        w -= dw;
        if dw.abs() <= 4.0 * f64::EPSILON * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(w)
}

/// Closed form M(xi) = (x/2) e^{W(x sqrt(e)/2) - 1/2}, x = log<xi>, as
/// stated for the associated function of K_p = p^(p^2).
pub fn psq_dual_closed_form(xi: f64) -> Result<f64> {
    if !(xi >= 1.0) {
        return Err(HypError::Domain(format!("psq_dual_closed_form needs xi >= 1, got {xi}")));
    }
    let x = japanese(xi).ln();
    let w = lambert_w(x * 0.5f64.exp() / 2.0)?;
    Ok(0.5 * x * (w - 0.5).exp())
}

/// Exact maximum of p x - p^2 log p over real p > 0 (x = log<xi>):
/// p* = e^{W(x sqrt(e)/2) - 1/2}, value (x p* + p*^2)/2.
pub fn psq_dual_continuous(xi: f64) -> Result<f64> {
    if !(xi >= 1.0) {
        return Err(HypError::Domain(format!("psq_dual_closed_form needs xi >= 1, got {xi}")));
    }
    let x = japanese(xi).ln();
    let p = (lambert_w(x * 0.5f64.exp() / 2.0)? - 0.5).exp();
    Ok(0.5 * (x * p + p * p))
}
