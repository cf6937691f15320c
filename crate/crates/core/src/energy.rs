//! Per-frequency time integration, log-domain weighted norms, the Garding
//! margin, loss-of-derivatives fits and a-priori estimate checks.
//!
//! The integrated state is the diagonalized unknown U^ = H^-1 U, which
//! satisfies D_t U^ = Lambda U^ - Bbar U^ + H^-1 F. It is advanced in the
//! interaction picture U^ = e^{i theta} V with theta' = lambda, so the
//! integrator only sees the slow coupling -i e^{-i theta} Bbar e^{i theta}.
//! |V| = |U^|, and logE = log |U^|^2 carries a running log offset so large
//! growth never overflows.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::coeffs::{DataProfile, ProblemSpec};
use crate::error::{HypError, Result};
use crate::fit::{bounded_over_all, bounded_over_octaves, ols, BoundedTest, TOP_OCTAVES};
use crate::japanese;
use crate::moduli::{Class, ModulusOfContinuity};
use crate::ode::{dopri5, OdeOptions};
use crate::reduction::{build_system, diagonalize_slice, diagonalizer_with_phi1, phi1, FrequencySystem};
use crate::roots::characteristic_roots;
use crate::weights::WeightFunction;

/// Diagonalizer cutoff used by the energy integration; the whole default
/// frequency grid |xi| >= 16 then lies beyond 2M.
pub const ENERGY_CUTOFF: f64 = 4.0;

/// Problem depending on the frequency (resonant witnesses are tuned to xi).
pub type SpecAt<'a> = dyn Fn(f64) -> Result<ProblemSpec> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Step cap in units of 1/<xi>.
    pub step_cap: f64,
    pub cutoff: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { rtol: 1e-10, atol: 1e-12, step_cap: 0.25, cutoff: ENERGY_CUTOFF, max_steps: 50_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub xi: f64,
    pub times: Vec<f64>,
    /// log |U^(t)|^2.
    pub log_e: Vec<f64>,
    /// d logE / dt = 2 Re <U^', U^> / |U^|^2 from the right-hand side.
    pub rate: Vec<f64>,
    /// ln |D_t^j u(t)|, j = 0..m-1, reconstructed from the state.
    pub log_du: Vec<Vec<f64>>,
    /// Accepted steps up to each output time.
    pub steps: Vec<usize>,
    pub rejected: usize,
    pub rtol: f64,
    pub atol: f64,
}

/// Cauchy data g_k = D_t^(k-1) u(0) of the spectral profile at xi.
pub fn cauchy_data(spec: &ProblemSpec, xi: f64) -> Result<Vec<Complex64>> {
    match spec.data {
        DataProfile::Standing => {
            let mut g = vec![Complex64::new(0.0, 0.0); spec.m];
            g[0] = 1.0.into();
            Ok(g)
        }
        DataProfile::Forward => {
            let tau = characteristic_roots(spec, 0.0, xi)?;
            let top = tau[spec.m - 1];
            Ok((0..spec.m).map(|k| Complex64::new(top.powi(k as i32), 0.0)).collect())
        }
    }
}

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn cis(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, x)
}

/// Integrates the diagonalized system at one frequency from U(0) = `u0`.
pub fn integrate_frequency(
    sys: &FrequencySystem,
    u0: &[Complex64],
    t_out: &[f64],
    opts: &SolverOptions,
) -> Result<EnergyTrace> {
    let m = sys.m();
    let xi = sys.xi;
    let x = sys.jx();
    let p1 = phi1(xi, opts.cutoff);
    let spec = &sys.spec;
    if u0.iter().all(|z| z.norm() == 0.0) {
        return Err(HypError::Parameter("initial state is zero".into()));
    }
    let d0 = diagonalizer_with_phi1(&sys.lambda_jets(0.0), 0.0, xi, opts.cutoff, p1)?;
    let hat0: Vec<Complex64> = (0..m)
        .map(|i| (0..m).map(|j| u0[j] * d0.hinv[(i, j)]).sum())
        .collect();
    let n0 = hat0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    // y = [Re V, Im V, theta]; V scaled by e^{-offset}
    let mut y0 = vec![0.0; 3 * m];
    for j in 0..m {
        y0[j] = hat0[j].re / n0;
        y0[m + j] = hat0[j].im / n0;
    }
    let offset_cell = std::cell::Cell::new(n0.ln());
    let failure: std::cell::RefCell<Option<HypError>> = std::cell::RefCell::new(None);

    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let lam = sys.lambda_jets(t);
        let d = match diagonalizer_with_phi1(&lam, t, xi, opts.cutoff, p1) {
            Ok(d) => d,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                dy.iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
        };
        let s = sys.slice_with(t, lam);
        let ds = diagonalize_slice(&s, &d);
        let ph: Vec<Complex64> = (0..m).map(|j| cis(y[2 * m + j])).collect();
        let hat: Vec<Complex64> = (0..m).map(|j| ph[j] * Complex64::new(y[j], y[m + j])).collect();
        let f = spec.rhs.eval(t.clamp(0.0, spec.t_final));
        let scale = (-offset_cell.get()).exp();
        for i in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..m {
                acc -= ds.bbar[(i, j)] * hat[j];
            }
            if f != 0.0 {
                acc += d.hinv[(i, m - 1)] * f * scale;
            }
            let dv = I * ph[i].conj() * acc;
            dy[i] = dv.re;
            dy[m + i] = dv.im;
            dy[2 * m + i] = ds.lambda[i];
        }
    };

    let n_out = t_out.len();
    let mut log_e = vec![0.0; n_out];
    let mut rate = vec![0.0; n_out];
    let mut steps = vec![0; n_out];
    let mut states: Vec<Vec<Complex64>> = vec![Vec::new(); n_out];
    let mut output = |k: usize, _t: f64, y: &[f64], dy: &[f64], st: crate::ode::OdeStats| {
        let mut n2 = 0.0;
        let mut dot = 0.0;
        for j in 0..m {
            n2 += y[j] * y[j] + y[m + j] * y[m + j];
            dot += dy[j] * y[j] + dy[m + j] * y[m + j];
        }
        log_e[k] = 2.0 * offset_cell.get() + n2.ln();
        rate[k] = 2.0 * dot / n2;
        steps[k] = st.steps;
        let hat: Vec<Complex64> = (0..m)
            .map(|j| cis(y[2 * m + j]) * Complex64::new(y[j], y[m + j]))
            .collect();
        states[k] = hat;
    };
    let mut renorm = |y: &mut [f64], dy: &mut [f64]| {
        let n2: f64 = (0..m).map(|j| y[j] * y[j] + y[m + j] * y[m + j]).sum();
        if !(1e-100..=1e100).contains(&n2) && n2 > 0.0 {
            let s = n2.sqrt();
            for j in 0..2 * m {
                y[j] /= s;
                dy[j] /= s;
            }
            offset_cell.set(offset_cell.get() + s.ln());
        }
    };
    let ode = OdeOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        h_max: opts.step_cap / x,
        max_steps: opts.max_steps,
    };
    let res = dopri5(&mut rhs, 0.0, &y0, t_out, &ode, &mut output, &mut renorm);
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    let stats = res.map_err(|s| HypError::StepFailure { xi, t: s.t })?;
    // ln |D_t^j u| from U = H U^, with the log offset folded back in
    let mut log_du = Vec::with_capacity(n_out);
    for (k, &t) in t_out.iter().enumerate() {
        let d = diagonalizer_with_phi1(&sys.lambda_jets(t), t, xi, opts.cutoff, p1)?;
        let hat = &states[k];
        let n = hat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let u: Vec<Complex64> = (0..m)
            .map(|i| (0..m).map(|j| hat[j] * d.h[(i, j)]).sum::<Complex64>() / n)
            .collect();
        let du = sys.reconstruct(t, &u);
        log_du.push(du.iter().map(|z| z.norm().ln() + 0.5 * log_e[k]).collect());
    }
    Ok(EnergyTrace {
        xi,
        times: t_out.to_vec(),
        log_e,
        rate,
        log_du,
        steps,
        rejected: stats.rejected,
        rtol: opts.rtol,
        atol: opts.atol,
    })
}

/// Builds the system for `spec` at `xi`, its data and integrates it.
pub fn solve(spec: &ProblemSpec, xi: f64, t_out: &[f64], opts: &SolverOptions) -> Result<EnergyTrace> {
    let sys = build_system(spec, xi)?;
    let g = cauchy_data(spec, xi)?;
    let u0 = sys.initial_state(&g);
    integrate_frequency(&sys, &u0, t_out, opts)
}

/// Independent frequencies in parallel; output in grid order.
pub fn sweep(spec_at: &SpecAt, xi_grid: &[f64], t_out: &[f64], opts: &SolverOptions) -> Result<Vec<EnergyTrace>> {
    xi_grid
        .par_iter()
        .map(|&xi| solve(&spec_at(xi)?, xi, t_out, opts))
        .collect()
}

/// Weight in the a-priori estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// e^{-kappa t omega}
    Strong,
    /// e^{kappa (T* + t0 - t) omega} on the slab starting at t0.
    Weak { t_star: f64, t0: f64 },
}

fn interp(ts: &[f64], vs: &[f64], t: f64) -> Result<f64> {
    let (a, b) = (ts[0], ts[ts.len() - 1]);
    if t < a - 1e-12 || t > b + 1e-12 {
        return Err(HypError::Domain(format!("t = {t} outside trace range [{a}, {b}]")));
    }
    let i = ts.partition_point(|&s| s < t);
    if i == 0 {
        return Ok(vs[0]);
    }
    if i >= ts.len() {
        return Ok(vs[ts.len() - 1]);
    }
    if ts[i] == t {
        return Ok(vs[i]);
    }
    let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
    Ok(vs[i - 1] * (1.0 - w) + vs[i] * w)
}

/// 1/2 logE(t) + nu log<xi> -+ weight, in the log domain.
pub fn weighted_log_norm(
    trace: &EnergyTrace,
    nu: f64,
    kappa: f64,
    moc: &ModulusOfContinuity,
    t: f64,
    mode: WeightMode,
) -> Result<f64> {
    let x = japanese(trace.xi);
    let le = interp(&trace.times, &trace.log_e, t)?;
    let om = moc.omega(x);
    let w = match mode {
        WeightMode::Strong => -kappa * t * om,
        WeightMode::Weak { t_star, t0 } => kappa * (t_star + t0 - t) * om,
    };
    Ok(0.5 * le + nu * x.ln() + w)
}

/// Least-squares slope of 1/2 logE against t.
pub fn growth_rate(trace: &EnergyTrace) -> f64 {
    let y: Vec<f64> = trace.log_e.iter().map(|v| 0.5 * v).collect();
    ols(&trace.times, &y).map(|f| f.slope).unwrap_or(f64::NAN)
}

/// Largest 1/2 (logE(t) - logE(0)) over the trace.
pub fn sup_growth(trace: &EnergyTrace) -> f64 {
    trace
        .log_e
        .iter()
        .map(|v| 0.5 * (v - trace.log_e[0]))
        .fold(f64::MIN, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    NoLoss,
    FiniteLoss,
    InfiniteLoss,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::NoLoss => "NoLoss",
            Regime::FiniteLoss => "FiniteLoss",
            Regime::InfiniteLoss => "InfiniteLoss",
        })
    }
}

/// Slope of sup growth against log<xi> at or below which there is no loss.
pub const NO_LOSS_SLOPE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub family: String,
    pub omega_id: String,
    /// Slope of 1/2 (logE(t) - logE(0)) against t omega(<xi>), pooled.
    pub kappa_hat: f64,
    /// Power of growth_rate against <xi> over the top octaves.
    pub exponent_hat: f64,
    pub r2: f64,
    pub regime: Regime,
    /// Slope of sup growth against log<xi>.
    pub growth_slope: f64,
    /// (xi, growth_rate) per trace.
    pub rates: Vec<(f64, f64)>,
}

pub fn loss_fit(traces: &[EnergyTrace], moc: &ModulusOfContinuity, family: &str) -> Result<FitReport> {
    let mut xs: Vec<f64> = traces.iter().map(|t| t.xi.abs()).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    if xs.len() < 8 {
        return Err(HypError::InsufficientData(format!(
            "loss fit needs >= 8 frequencies, got {}",
            xs.len()
        )));
    }
    let mut px = Vec::new();
    let mut py = Vec::new();
    for tr in traces {
        let om = moc.omega(japanese(tr.xi));
        for (t, le) in tr.times.iter().zip(&tr.log_e) {
            px.push(t * om);
            py.push(0.5 * (le - tr.log_e[0]));
        }
    }
    let pooled = ols(&px, &py).ok_or_else(|| HypError::InsufficientData("degenerate pooled fit".into()))?;
    let lx: Vec<f64> = traces.iter().map(|t| japanese(t.xi).ln()).collect();
    let sg: Vec<f64> = traces.iter().map(sup_growth).collect();
    let growth_slope = ols(&lx, &sg).map(|f| f.slope).unwrap_or(f64::NAN);
    let rates: Vec<(f64, f64)> = traces.iter().map(|t| (t.xi, growth_rate(t))).collect();
    let exponent_hat = power_fit(&rates);
    let regime = if growth_slope <= NO_LOSS_SLOPE || pooled.slope <= 0.0 {
        Regime::NoLoss
    } else {
        match moc.classify() {
            Class::Strong => Regime::FiniteLoss,
            _ => Regime::InfiniteLoss,
        }
    };
    Ok(FitReport {
        family: family.to_string(),
        omega_id: moc.id().to_string(),
        kappa_hat: pooled.slope,
        exponent_hat,
        r2: pooled.r2,
        regime,
        growth_slope,
        rates,
    })
}

/// Slope of ln(rate) against ln<xi> over the top octaves (NaN when a rate
/// there is not positive).
pub fn power_fit(rates: &[(f64, f64)]) -> f64 {
    let xmax = rates.iter().map(|r| r.0.abs()).fold(0.0, f64::max);
    let lo = xmax / 2f64.powf(TOP_OCTAVES) * (1.0 - 1e-12);
    let top: Vec<&(f64, f64)> = rates.iter().filter(|r| r.0.abs() >= lo).collect();
    if top.iter().any(|r| !(r.1 > 0.0)) {
        return f64::NAN;
    }
    let lx: Vec<f64> = top.iter().map(|r| japanese(r.0).ln()).collect();
    let ly: Vec<f64> = top.iter().map(|r| r.1.ln()).collect();
    ols(&lx, &ly).map(|f| f.slope).unwrap_or(f64::NAN)
}

/// Per-frequency growth rate over omega with the shared boundedness test.
pub fn rate_over_omega(rates: &[(f64, f64)], moc: &ModulusOfContinuity) -> (Vec<f64>, BoundedTest) {
    let xi: Vec<f64> = rates.iter().map(|r| r.0.abs()).collect();
    let v: Vec<f64> = rates.iter().map(|r| r.1 / moc.omega(japanese(r.0))).collect();
    let test = bounded_over_octaves(&xi, &v);
    (v, test)
}

/// Row-sum bound of the Hermitian part of -i Bbar: an upper bound for
/// d/dt (1/2 log |U^|^2) at (t, xi).
pub fn bbar_row_bound(sys: &FrequencySystem, t: f64, cutoff: f64) -> Result<f64> {
    let m = sys.m();
    let lam = sys.lambda_jets(t);
    let d = diagonalizer_with_phi1(&lam, t, sys.xi, cutoff, phi1(sys.xi, cutoff))?;
    let s = sys.slice_with(t, lam);
    let ds = diagonalize_slice(&s, &d);
    let g = ds.bbar.map(|z| -I * z);
    let mut best = 0.0f64;
    for i in 0..m {
        let row: f64 = (0..m).map(|j| (0.5 * (g[(i, j)] + g[(j, i)].conj())).norm()).sum();
        best = best.max(row);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakGate {
    pub t_star: f64,
    pub delta0: f64,
    pub kappa_t_star: f64,
    pub t_star_c_b: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub c_b: f64,
    pub kappa: f64,
    /// min over the grid of (kappa omega - row bound) / omega.
    pub min_margin: f64,
    pub witness: (f64, f64),
    pub weak: Option<WeakGate>,
    pub pass: bool,
}

/// C_B = sup over the grid of row bound / omega, margin = kappa omega - row
/// bound. `kappa = None` uses kappa = 2 C_B. With `weak = Some((T*, delta0))`
/// the gate additionally needs kappa T* < delta0 and T* C_B < 1.
pub fn garding_margin(
    spec_at: &SpecAt,
    moc: &ModulusOfContinuity,
    xi_grid: &[f64],
    t_grid: &[f64],
    kappa: Option<f64>,
    cutoff: f64,
    weak: Option<(f64, f64)>,
) -> Result<MarginReport> {
    let rows: Vec<Vec<f64>> = xi_grid
        .par_iter()
        .map(|&xi| {
            let sys = build_system(&spec_at(xi)?, xi)?;
            let om = moc.omega(sys.jx());
            t_grid
                .iter()
                .map(|&t| bbar_row_bound(&sys, t, cutoff).map(|b| b / om))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let c_b = rows.iter().flatten().cloned().fold(0.0, f64::max);
    let kappa = kappa.unwrap_or(2.0 * c_b);
    let mut min_margin = f64::INFINITY;
    let mut witness = (f64::NAN, f64::NAN);
    for (ix, r) in rows.iter().enumerate() {
        for (it, v) in r.iter().enumerate() {
            let mg = kappa - v;
            if mg < min_margin {
                min_margin = mg;
                witness = (t_grid[it], xi_grid[ix]);
            }
        }
    }
    let weak = weak.map(|(t_star, delta0)| {
        let kt = kappa * t_star;
        let tc = t_star * c_b;
        WeakGate { t_star, delta0, kappa_t_star: kt, t_star_c_b: tc, pass: kt < delta0 && tc < 1.0 }
    });
    let pass = min_margin >= 0.0 && weak.as_ref().map_or(true, |w| w.pass);
    Ok(MarginReport { c_b, kappa, min_margin, witness, weak, pass })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log of int_a^b e^{w(s)} |f(s)| ds by the trapezoid rule in log form.
fn log_rhs_integral(spec: &ProblemSpec, a: f64, b: f64, w: &dyn Fn(f64) -> f64) -> f64 {
    if spec.rhs.is_zero() || b <= a {
        return f64::NEG_INFINITY;
    }
    let n = 1024;
    let h = (b - a) / n as f64;
    let terms: Vec<f64> = (0..=n)
        .map(|i| {
            let s = a + h * i as f64;
            let wt = if i == 0 || i == n { 0.5 * h } else { h };
            w(s) + (spec.rhs.eval(s).abs() * wt).ln()
        })
        .collect();
    log_sum_exp(&terms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlabReport {
    pub t0: f64,
    pub t1: f64,
    /// max over (t, xi) of LHS / RHS.
    pub c: f64,
    /// Per-frequency sup of LHS / RHS.
    pub c_per_xi: Vec<f64>,
    pub test: BoundedTest,
    /// Remaining weight budget (eta units) at the start of the slab.
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriReport {
    pub mode: WeightMode,
    pub slabs: Vec<SlabReport>,
    /// Largest constant over all slabs.
    pub c: f64,
    pub pass: bool,
}

/// Verifies the a-priori estimate on the traces (which must come from
/// `spec` or from `spec_at(xi)`, with their data and right-hand side).
///
/// LHS(t) = sum_j <xi>^(nu+m-1-j) W(t) |D_t^j u(t)|,
/// RHS(t) = sum_k <xi>^(nu+m-k) W(t0) |D_t^(k-1) u(t0)|
///          + int_t0^t <xi>^nu W(s) |f(s)| ds,
/// with W = e^{-kappa t omega} (strong, one slab [0, T]) or
/// W = e^{kappa (T* + t0 - t) omega} on slabs [t0, t0 + T*] (weak). In weak
/// mode the weight budget delta_{k+1} = delta_k - kappa T* max(omega / eta)
/// starts from `spec.delta1` and must stay positive. With `c_max`, any ratio
/// above it is an `InequalityViolated` error.
pub fn apriori_check(
    traces: &[EnergyTrace],
    spec_at: &SpecAt,
    moc: &ModulusOfContinuity,
    mode: WeightMode,
    kappa: f64,
    c_max: Option<f64>,
) -> Result<AprioriReport> {
    if traces.is_empty() {
        return Err(HypError::InsufficientData("no traces".into()));
    }
    let times = &traces[0].times;
    let t_end = *times.last().unwrap();
    let slabs: Vec<(f64, f64)> = match mode {
        WeightMode::Strong => vec![(times[0], t_end)],
        WeightMode::Weak { t_star, .. } => {
            if !(t_star > 0.0) {
                return Err(HypError::Parameter(format!("T* = {t_star}")));
            }
            let mut v = Vec::new();
            let mut a = times[0];
            while a < t_end - 1e-12 {
                let b = (a + t_star).min(t_end);
                v.push((a, b));
                a = b;
            }
            v
        }
    };
    let specs: Vec<ProblemSpec> = traces.iter().map(|tr| spec_at(tr.xi)).collect::<Result<_>>()?;
    let spec0 = &specs[0];
    let m = spec0.m;
    let nu = spec0.nu;
    let eta_ratio = match (&mode, &spec0.eta) {
        (WeightMode::Weak { .. }, Some(eta)) => Some(max_omega_over_eta(traces, moc, eta)),
        (WeightMode::Weak { .. }, None) => {
            return Err(HypError::Parameter("weak mode needs a weight function eta".into()))
        }
        _ => None,
    };
    let mut budget = spec0.delta1;
    let mut out = Vec::new();
    for &(t0, t1) in &slabs {
        let i0 = times
            .iter()
            .position(|&t| (t - t0).abs() <= 1e-12)
            .ok_or_else(|| HypError::InsufficientData(format!("slab start {t0} is not an output time")))?;
        let mut c_per_xi = Vec::with_capacity(traces.len());
        for (tr, spec) in traces.iter().zip(&specs) {
            let x = japanese(tr.xi);
            let lx = x.ln();
            let om = moc.omega(x);
            let w = |t: f64| -> f64 {
                match mode {
                    WeightMode::Strong => -kappa * t * om,
                    WeightMode::Weak { t_star, .. } => kappa * (t_star + t0 - t) * om,
                }
            };
            let data: Vec<f64> = if i0 == 0 {
                let g = cauchy_data(spec, tr.xi)?;
                (0..m).map(|k| (nu + (m - 1 - k) as f64) * lx + g[k].norm().ln()).collect()
            } else {
                (0..m).map(|k| (nu + (m - 1 - k) as f64) * lx + tr.log_du[i0][k]).collect()
            };
            let data = log_sum_exp(&data) + w(t0);
            let mut sup = f64::NEG_INFINITY;
            for (i, &t) in times.iter().enumerate() {
                if t < t0 - 1e-12 || t > t1 + 1e-12 {
                    continue;
                }
                let lhs: Vec<f64> = (0..m)
                    .map(|j| (nu + (m - 1 - j) as f64) * lx + tr.log_du[i][j])
                    .collect();
                let lhs = log_sum_exp(&lhs) + w(t);
                let f_int = log_rhs_integral(spec, t0, t, &|s| nu * lx + w(s));
                let rhs = log_sum_exp(&[data, f_int]);
                let ratio = lhs - rhs;
                if let Some(cm) = c_max {
                    if ratio > cm.ln() {
                        return Err(HypError::InequalityViolated {
                            t,
                            xi: tr.xi,
                            detail: format!("LHS/RHS = {:.6e} > {cm}", ratio.exp()),
                        });
                    }
                }
                sup = sup.max(ratio);
            }
            c_per_xi.push(sup.exp());
        }
        let xi: Vec<f64> = traces.iter().map(|t| t.xi.abs()).collect();
        let test = bounded_over_all(&xi, &c_per_xi);
        let c = c_per_xi.iter().cloned().fold(0.0, f64::max);
        out.push(SlabReport { t0, t1, c, c_per_xi, test, budget });
        if let (Some(r), WeightMode::Weak { t_star, .. }) = (eta_ratio, mode) {
            budget -= kappa * t_star * r;
        }
    }
    let c = out.iter().map(|s| s.c).fold(0.0, f64::max);
    let weak = matches!(mode, WeightMode::Weak { .. });
    let pass = out.iter().all(|s| s.test.pass && s.c.is_finite() && (!weak || s.budget > 0.0));
    Ok(AprioriReport { mode, slabs: out, c, pass })
}

fn max_omega_over_eta(traces: &[EnergyTrace], moc: &ModulusOfContinuity, eta: &WeightFunction) -> f64 {
    traces
        .iter()
        .map(|t| {
            let x = japanese(t.xi);
            moc.omega(x) / eta.eval(x)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::CoefficientFamily;

    fn synthetic(xi: f64, kappa0: f64, moc: &ModulusOfContinuity) -> EnergyTrace {
        let times = crate::fit::lin_grid(0.0, 1.0, 33);
        let om = moc.omega(japanese(xi));
        EnergyTrace {
            xi,
            log_e: times.iter().map(|t| 2.0 * kappa0 * t * om).collect(),
            rate: vec![2.0 * kappa0 * om; times.len()],
            log_du: vec![vec![0.0, 0.0]; times.len()],
            steps: vec![0; times.len()],
            rejected: 0,
            rtol: 1e-10,
            atol: 1e-12,
            times,
        }
    }

    #[test]
    fn synthetic_round_trip() {
        let moc = ModulusOfContinuity::log_lip();
        let traces: Vec<_> = crate::fit::dyadic(4, 14).iter().map(|&x| synthetic(x, 0.3, &moc)).collect();
        let r = loss_fit(&traces, &moc, "synthetic").unwrap();
        assert!((r.kappa_hat - 0.3).abs() < 0.003, "{}", r.kappa_hat);
        assert_eq!(r.regime, Regime::FiniteLoss);
        let holder = ModulusOfContinuity::holder(0.5).unwrap();
        let traces: Vec<_> = crate::fit::dyadic(4, 14).iter().map(|&x| synthetic(x, 0.1, &holder)).collect();
        let r = loss_fit(&traces, &holder, "synthetic").unwrap();
        assert_eq!(r.regime, Regime::InfiniteLoss);
        assert!((r.exponent_hat - 0.5).abs() < 1e-3, "{}", r.exponent_hat);
    }

    #[test]
    fn insufficient_frequencies() {
        let moc = ModulusOfContinuity::lipschitz();
        let traces: Vec<_> = crate::fit::dyadic(4, 8).iter().map(|&x| synthetic(x, 0.0, &moc)).collect();
        assert!(matches!(loss_fit(&traces, &moc, "x"), Err(HypError::InsufficientData(_))));
    }

    #[test]
    fn weighted_norm_is_log_domain() {
        let moc = ModulusOfContinuity::holder(0.5).unwrap();
        let tr = synthetic(16384.0, 0.0, &moc);
        let om = moc.omega(japanese(16384.0));
        let kappa = 10.0 / om;
        let v = weighted_log_norm(&tr, 1.0, kappa, &moc, 1.0, WeightMode::Strong).unwrap();
        assert!(v.is_finite());
        assert!((v - (japanese(16384.0).ln() - 10.0)).abs() < 1e-12);
        let v0 = weighted_log_norm(&tr, 0.0, 0.0, &moc, 0.5, WeightMode::Strong).unwrap();
        assert_eq!(v0, 0.0);
        let a = weighted_log_norm(&tr, 0.0, 0.1, &moc, 0.5, WeightMode::Strong).unwrap();
        let b = weighted_log_norm(&tr, 0.0, 0.2, &moc, 0.5, WeightMode::Strong).unwrap();
        assert!(b < a);
        assert!(weighted_log_norm(&tr, 0.0, 0.2, &moc, 1.5, WeightMode::Strong).is_err());
    }

    #[test]
    fn constant_wave_conserves_energy() {
        let spec = ProblemSpec::wave(CoefficientFamily::constant(1.0).unwrap(), ModulusOfContinuity::lipschitz());
        let t = crate::fit::lin_grid(0.0, 1.0, 5);
        let tr = solve(&spec, 64.0, &t, &SolverOptions::default()).unwrap();
        assert!((tr.log_e[4] - tr.log_e[0]).abs() <= 1e-8);
    }
}
