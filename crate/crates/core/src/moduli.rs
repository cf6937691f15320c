//! Moduli of continuity: catalog, evaluation, validation and strong/weak
//! classification.

use std::fmt;
use std::sync::Arc;

use crate::error::{HypError, Result};
use crate::ids::parse_id;
use crate::taylor::{richardson_derivative, Jet, Real, MAX_ORDER};

#[derive(Clone)]
pub enum ModulusKind {
    Lipschitz,
    LogLip,
    /// Iterated-log modulus with depth `m` (2 or 3).
    LogLogLip { m: u32 },
    Holder { alpha: f64 },
    /// `(log(1/s) + 1)^(-alpha)`.
    LogInv { alpha: f64 },
    /// User supplied `mu`; derivatives fall back to finite differences.
    Custom {
        name: String,
        mu: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ModulusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModulusKind::Custom { name, .. } => write!(f, "Custom({name})"),
            ModulusKind::Lipschitz => write!(f, "Lipschitz"),
            ModulusKind::LogLip => write!(f, "LogLip"),
            ModulusKind::LogLogLip { m } => write!(f, "LogLogLip(m={m})"),
            ModulusKind::Holder { alpha } => write!(f, "Holder(alpha={alpha})"),
            ModulusKind::LogInv { alpha } => write!(f, "LogInv(alpha={alpha})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Strong,
    Weak,
    Indeterminate,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Class::Strong => "Strong",
            Class::Weak => "Weak",
            Class::Indeterminate => "Indeterminate",
        };
        f.write_str(s)
    }
}

/// Tangent-line continuation used by the iterated-log and inverse-log
/// entries past the point where the table formula stops being concave.
#[derive(Debug, Clone, Copy)]
struct Tangent {
    s0: f64,
    value: f64,
    slope: f64,
}

#[derive(Debug, Clone)]
pub struct ModulusOfContinuity {
    id: String,
    kind: ModulusKind,
    tangent: Option<Tangent>,
    norm: f64,
}

fn iterated_log<R: Real>(x: R, depth: u32) -> R {
    let mut y = x;
    for _ in 0..depth {
        y = y.ln();
    }
    y
}

impl ModulusOfContinuity {
    pub fn lipschitz() -> Self {
        Self::build("lipschitz".into(), ModulusKind::Lipschitz)
    }

    pub fn log_lip() -> Self {
        Self::build("log-lip".into(), ModulusKind::LogLip)
    }

    pub fn log_log_lip(m: u32) -> Result<Self> {
        if !(2..=3).contains(&m) {
            return Err(HypError::Parameter(format!(
                "log-log-lip depth m = {m} not supported (use 2 or 3)"
            )));
        }
        Ok(Self::build(format!("log-log-lip:m={m}"), ModulusKind::LogLogLip { m }))
    }

    pub fn holder(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(HypError::Parameter(format!("holder alpha = {alpha} not in (0,1)")));
        }
        Ok(Self::build(format!("holder:alpha={alpha}"), ModulusKind::Holder { alpha }))
    }

    pub fn log_inv(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(HypError::Parameter(format!("log alpha = {alpha} must be positive")));
        }
        Ok(Self::build(format!("log:alpha={alpha}"), ModulusKind::LogInv { alpha }))
    }

    pub fn custom(name: &str, mu: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::build(
            name.to_string(),
            ModulusKind::Custom {
                name: name.to_string(),
                mu: Arc::new(mu),
            },
        )
    }

    /// Parses a config id such as `"holder:alpha=0.5"`.
    pub fn from_id(id: &str) -> Result<Self> {
        let (head, params) = parse_id(id)?;
        let expect_keys = |allowed: &[&str]| -> Result<()> {
            for k in params.keys() {
                if !allowed.contains(&k.as_str()) {
                    return Err(HypError::UnknownId(format!("{id} (parameter `{k}`)")));
                }
            }
            Ok(())
        };
        let get = |k: &str, default: Option<f64>| -> Result<f64> {
            match params.get(k) {
                Some(v) => Ok(*v),
                None => default.ok_or_else(|| HypError::Parameter(format!("{id}: missing `{k}`"))),
            }
        };
        match head.as_slice() {
            [h] if h == "lipschitz" => {
                expect_keys(&[])?;
                Ok(Self::lipschitz())
            }
            [h] if h == "log-lip" => {
                expect_keys(&[])?;
                Ok(Self::log_lip())
            }
            [h] if h == "log-log-lip" => {
                expect_keys(&["m"])?;
                let m = get("m", Some(2.0))?;
                if m.fract() != 0.0 {
                    return Err(HypError::Parameter(format!("{id}: m must be an integer")));
                }
                Self::log_log_lip(m as u32)
            }
            [h] if h == "holder" => {
                expect_keys(&["alpha"])?;
                Self::holder(get("alpha", None)?)
            }
            [h] if h == "log" => {
                expect_keys(&["alpha"])?;
                Self::log_inv(get("alpha", None)?)
            }
            _ => Err(HypError::UnknownId(id.to_string())),
        }
    }

    /// The five shipped catalog entries.
    pub fn catalog() -> Vec<Self> {
        vec![
            Self::lipschitz(),
            Self::log_lip(),
            Self::log_log_lip(2).expect("catalog"),
            Self::holder(0.5).expect("catalog"),
            Self::log_inv(0.5).expect("catalog"),
        ]
    }

    fn build(id: String, kind: ModulusKind) -> Self {
        let mut moc = ModulusOfContinuity {
            id,
            kind,
            tangent: None,
            norm: 1.0,
        };
        let s0 = match moc.kind {
            ModulusKind::LogLogLip { m } => {
                // log^[m](1/s) = 1  <=>  log(1/s) = exp^[m-1](1)
                let mut l0 = 1.0f64;
                for _ in 0..(m - 1) {
                    l0 = l0.exp();
                }
                Some((-l0).exp())
            }
            ModulusKind::LogInv { alpha } => Some((-alpha).exp()),
            _ => None,
        };
        if let Some(s0) = s0 {
            let j = moc.raw(Jet::variable(s0, 1));
            let t = Tangent {
                s0,
                value: j.coeff(0),
                slope: j.coeff(1),
            };
            moc.tangent = Some(t);
            let at_one = t.value + t.slope * (1.0 - s0);
            if matches!(moc.kind, ModulusKind::LogLogLip { .. }) {
                moc.norm = at_one.max(1.0);
            }
        }
        moc
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &ModulusKind {
        &self.kind
    }

    /// Raw table formula (no continuation, no normalization).
    fn raw<R: Real>(&self, s: R) -> R {
        match &self.kind {
            ModulusKind::Lipschitz => s,
            ModulusKind::LogLip => s * (-s.ln() + 1.0),
            ModulusKind::LogLogLip { m } => {
                let l = -s.ln();
                s * (l + 1.0) * iterated_log(l, m - 1)
            }
            ModulusKind::Holder { alpha } => s.powf(*alpha),
            ModulusKind::LogInv { alpha } => (-s.ln() + 1.0).powf(-*alpha),
            ModulusKind::Custom { mu, .. } => s.lift(mu(s.value())),
        }
    }

    /// Generic evaluation of mu (no domain check).
    pub fn mu_generic<R: Real>(&self, s: R) -> R {
        let v = match self.tangent {
            Some(t) if s.value() > t.s0 => (s - t.s0) * t.slope + t.value,
            _ => self.raw(s),
        };
        v / self.norm
    }

    /// omega(r) = r mu(1/r), generic.
    pub fn omega_generic<R: Real>(&self, r: R) -> R {
        r * self.mu_generic(r.recip())
    }

    /// mu extended by mu(0) = 0, for internal use on distances.
    pub fn mu_or_zero(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            self.mu_generic(s.min(1.0))
        }
    }

    /// Natural log of omega(e^L), evaluated without forming e^L, so the
    /// classifier can probe very small s = e^{-L}.
    pub fn ln_omega_at_exp(&self, l: f64) -> f64 {
        let ln_norm = self.norm.ln();
        let tangent_l = self.tangent.map(|t| -t.s0.ln()).unwrap_or(0.0);
        let in_formula = l >= tangent_l;
        match &self.kind {
            ModulusKind::Lipschitz => 0.0,
            ModulusKind::LogLip => (l + 1.0).ln(),
            ModulusKind::LogLogLip { m } if in_formula => {
                (l + 1.0).ln() + iterated_log(l, m - 1).ln() - ln_norm
            }
            ModulusKind::Holder { alpha } => (1.0 - alpha) * l,
            ModulusKind::LogInv { alpha } if in_formula => l - alpha * (l + 1.0).ln(),
            _ => {
                let s = (-l).exp();
                self.mu_generic(s).ln() + l
            }
        }
    }

    /// Natural log of mu(e^{-L}) without underflow.
    pub fn ln_mu_at_exp(&self, l: f64) -> f64 {
        let tangent_l = self.tangent.map(|t| -t.s0.ln()).unwrap_or(0.0);
        let in_formula = l >= tangent_l;
        match &self.kind {
            ModulusKind::Lipschitz => -l,
            ModulusKind::LogLip => -l + (l + 1.0).ln(),
            ModulusKind::LogLogLip { m } if in_formula => {
                -l + (l + 1.0).ln() + iterated_log(l, m - 1).ln() - self.norm.ln()
            }
            ModulusKind::Holder { alpha } => -alpha * l,
            ModulusKind::LogInv { alpha } if in_formula => -alpha * (l + 1.0).ln(),
            _ => self.mu_generic((-l).exp()).ln(),
        }
    }

    pub fn eval_mu(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(HypError::Domain(format!("mu argument s = {s} not in (0,1]")));
        }
        Ok(self.mu_generic(s))
    }

    pub fn omega_of(&self, r: f64) -> Result<f64> {
        if !(r >= 1.0) {
            return Err(HypError::Domain(format!("omega argument r = {r} < 1")));
        }
        Ok(self.omega_generic(r))
    }

    /// omega without the domain check (callers guarantee r >= 1).
    pub fn omega(&self, r: f64) -> f64 {
        self.omega_generic(r)
    }

    /// d^k omega / dr^k at r, k <= 8.
    pub fn omega_derivative(&self, k: usize, r: f64) -> Result<f64> {
        if k > MAX_ORDER {
            return Err(HypError::Oracle(format!("order {k} > {MAX_ORDER}")));
        }
        if r < 1.0 {
            return Err(HypError::Domain(format!("omega argument r = {r} < 1")));
        }
        match self.kind {
            ModulusKind::Custom { .. } => {
                if k > 4 {
                    return Err(HypError::Oracle(format!(
                        "finite-difference oracle limited to order 4, asked {k}"
                    )));
                }
                let f = |x: f64| self.omega_generic(x);
                Ok(richardson_derivative(&f, k, r, 0.05 * r.min(8.0)))
            }
            _ => Ok(self.omega_generic(Jet::variable(r, k)).derivative(k)),
        }
    }

    pub fn classify(&self) -> Class {
        classify_sequence(&classification_ratios(self))
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

/// Sample points L = log(1/s) used by the classifier: 60 points with ln L
/// evenly spaced from ln(10 ln 2) to 700.
pub fn classification_points() -> Vec<f64> {
    let a = (10.0 * std::f64::consts::LN_2).ln();
    let b = 700.0;
    (0..60)
        .map(|i| (a + (b - a) * i as f64 / 59.0).exp())
        .collect()
}

/// ln of mu(s)/(s log(1/s)) at the classification points.
pub fn classification_ratios(moc: &ModulusOfContinuity) -> Vec<f64> {
    classification_points()
        .into_iter()
        .map(|l| moc.ln_omega_at_exp(l) - l.ln())
        .filter(|v| v.is_finite())
        .collect()
}

const WEAK_CUTOFF: f64 = 0.05;
const TAIL: usize = 10;

/// Strong: ratio bounded (non-increasing over the tail). Weak: reciprocal
/// strictly decreasing over the tail and below the cutoff at the end.
pub fn classify_sequence(log_ratios: &[f64]) -> Class {
    if log_ratios.len() < TAIL + 1 {
        return Class::Indeterminate;
    }
    let tail = &log_ratios[log_ratios.len() - TAIL..];
    let non_increasing = tail.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    if non_increasing {
        return Class::Strong;
    }
    let strictly_increasing = tail.windows(2).all(|w| w[1] > w[0]);
    let last = *tail.last().unwrap();
    if strictly_increasing && -last < WEAK_CUTOFF.ln() {
        return Class::Weak;
    }
    Class::Indeterminate
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: &'static str,
    pub pass: bool,
    /// Witnessing grid point(s) on failure.
    pub witness: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub id: String,
    pub entries: Vec<CheckEntry>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// 1025-point grid of (0,1]: s_i = i/1025.
pub fn unit_grid() -> Vec<f64> {
    (1..=1025).map(|i| i as f64 / 1025.0).collect()
}

fn validate(moc: &ModulusOfContinuity) -> ValidationReport {
    let grid = unit_grid();
    let mu: Vec<f64> = grid.iter().map(|&s| moc.mu_generic(s)).collect();

    let mut mono = CheckEntry { name: "monotone", pass: true, witness: None };
    for i in 1..grid.len() {
        if mu[i] < mu[i - 1] - 1e-15 {
            mono.pass = false;
            mono.witness = Some((grid[i - 1], grid[i]));
            break;
        }
    }
    // also along the dyadic tail toward 0
    if mono.pass {
        let mut prev = f64::INFINITY;
        for k in 10..=40 {
            let s = 2f64.powi(-k);
            let v = moc.mu_generic(s);
            if v > prev + 1e-15 {
                mono.pass = false;
                mono.witness = Some((s, 2.0 * s));
                break;
            }
            prev = v;
        }
    }

    let mut conc = CheckEntry { name: "concave", pass: true, witness: None };
    'outer: for i in 0..grid.len() {
        for j in (i + 2)..grid.len() {
            let mid = moc.mu_generic(0.5 * (grid[i] + grid[j]));
            if mid < 0.5 * (mu[i] + mu[j]) - 1e-12 {
                conc.pass = false;
                conc.witness = Some((grid[i], grid[j]));
                break 'outer;
            }
        }
    }

    let s_small = 2f64.powi(-40);
    let near_zero = moc.mu_generic(s_small) <= 1e-3
        || moc.ln_mu_at_exp(1e300) <= 1e-3f64.ln();
    let zero = CheckEntry {
        name: "vanishes_at_zero",
        pass: near_zero,
        witness: if near_zero { None } else { Some((s_small, moc.mu_generic(s_small))) },
    };

    let at_one = moc.mu_generic(1.0);
    let one = CheckEntry {
        name: "bounded_at_one",
        pass: at_one <= 1.0 + 1e-12 && at_one > 0.0,
        witness: if at_one <= 1.0 + 1e-12 { None } else { Some((1.0, at_one)) },
    };

    ValidationReport {
        id: moc.id.clone(),
        entries: vec![mono, conc, zero, one],
    }
}
