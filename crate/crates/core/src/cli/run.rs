//! Experiment runners: each returns the tables it wrote and a pass flag.

use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::energy::{
    apriori_check, garding_margin, loss_fit, rate_over_omega, sweep, EnergyTrace, WeightMode,
};
use crate::fit::{dyadic, log_grid};
use crate::ids::parse_id;
use crate::japanese;
use crate::moduli::ModulusOfContinuity;
use crate::pdo::{chi_bound, expansion_residual_report, operator_from_symbol, Multiplier, SymbolMeta};
use crate::reduction::{build_system, diagonalize_system};
use crate::roots::{refined_t_grid, regularity_report, regularized_root_table_with, spec_kinks};
use crate::weights::{
    associated_function, compatibility_check, psq_dual_closed_form, lambert_w, WeightFunction, WeightSequence,
};

use super::config::{Experiment, ExperimentConfig, ResolvedProblem};
use super::CliError;

/// Rows of one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Shortest round-trip formatting keeps outputs byte-stable.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub experiment: Experiment,
    pub pass: bool,
    pub summary: String,
    pub tables: Vec<Table>,
    /// Markdown body of the results section.
    pub markdown: String,
}

fn lab(e: crate::HypError) -> CliError {
    CliError::Lab(e.to_string())
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let problems = cfg.resolve()?;
    match cfg.experiment {
        Experiment::Classify => classify(cfg),
        Experiment::WeightsCheck => weights_check(cfg),
        Experiment::RootsCheck => roots_check(cfg, &problems),
        Experiment::PdoCheck => pdo_check(cfg),
        Experiment::DiagCheck => diag_check(cfg, &problems),
        Experiment::Solve => solve(cfg, &problems),
        Experiment::LossFit => loss_fit_run(cfg, &problems),
        Experiment::Apriori => apriori(cfg, &problems),
    }
}

fn pass_str(p: bool) -> String {
    if p { "pass" } else { "fail" }.to_string()
}

fn classify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mocs = match &cfg.problem.modulus {
        Some(id) => vec![ModulusOfContinuity::from_id(id).map_err(lab)?],
        None => ModulusOfContinuity::catalog(),
    };
    let mut t = Table::new("classify.csv", &["id", "class", "valid"]);
    let mut md = String::from("| modulus | class | valid |\n|---|---|---|\n");
    let mut pass = true;
    for m in &mocs {
        let valid = m.validate().all_pass();
        pass &= valid;
        let class = m.classify();
        t.push(vec![m.id().to_string(), class.to_string(), pass_str(valid)]);
        md += &format!("| {} | {} | {} |\n", m.id(), class, pass_str(valid));
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        pass,
        summary: format!("classified {} moduli", mocs.len()),
        tables: vec![t],
        markdown: md,
    })
}

/// Named weight checks: (name, value, threshold, pass).
pub fn weight_checks(p_max: u64) -> crate::Result<Vec<(String, f64, f64, bool)>> {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for &x in &log_grid(1e-6, 1e12, 200) {
        let w = lambert_w(x)?;
        worst = worst.max((w * w.exp() - x).abs() / x);
    }
    out.push(("lambert_w_identity".into(), worst, 1e-12, worst <= 1e-12));
    let psq = WeightSequence::psq();
    let mut worst = 0.0f64;
    for &s in &log_grid(1e2, 1e6, 41) {
        let xi = (s * s - 1.0).sqrt();
        let closed = psq_dual_closed_form(xi)?;
        let brute = associated_function(&psq, s, p_max)?;
        worst = worst.max((closed - brute).abs() / brute);
    }
    out.push(("psq_closed_form_vs_bruteforce".into(), worst, 0.01, worst <= 0.01));
    let grid = log_grid(16.0, 1e6, 40);
    let g = compatibility_check(&WeightSequence::gevrey(0.6, 1.0)?, &WeightFunction::power(0.6)?, &grid, 5000)?;
    out.push(("gevrey_compatibility_delta0".into(), g.delta0, 0.0, g.pass && g.delta0 > 0.0));
    let l = compatibility_check(&WeightSequence::logfactor(), &WeightFunction::sublog(0.3)?, &grid, 400_000)?;
    out.push(("logfactor_compatibility_delta0".into(), l.delta0, 0.0, l.pass && l.delta0 > 0.0));
    Ok(out)
}

fn weights_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let checks = weight_checks(cfg.check.p_max).map_err(lab)?;
    let mut t = Table::new("weights.csv", &["check", "value", "threshold", "pass"]);
    let mut md = String::from("| check | value | threshold | result |\n|---|---|---|---|\n");
    for (n, v, th, p) in &checks {
        t.push(vec![n.clone(), num(*v), num(*th), pass_str(*p)]);
        md += &format!("| {n} | {v:.6e} | {th} | {} |\n", pass_str(*p));
    }
    let failed = checks.iter().filter(|c| !c.3).count();
    Ok(Outcome {
        experiment: cfg.experiment,
        pass: failed == 0,
        summary: format!("{} weight checks, {failed} failed", checks.len()),
        tables: vec![t],
        markdown: md,
    })
}

fn roots_check(cfg: &ExperimentConfig, problems: &[ResolvedProblem]) -> Result<Outcome, CliError> {
    let xi = cfg.xi_grid();
    let base = cfg.t_grid();
    let mut tables = vec![];
    let mut md = String::from("| problem | R1 spread | R2 spread | result |\n|---|---|---|---|\n");
    let mut pass = true;
    for (k, p) in problems.iter().enumerate() {
        let table = regularized_root_table_with(
            &|x| p.spec_at(x),
            &|spec, x| refined_t_grid(&base, &spec_kinks(spec), 1.0 / japanese(x), spec.t_final),
            &xi,
        )
        .map_err(lab)?;
        let rep = regularity_report(&table, &p.modulus);
        pass &= rep.pass;
        let mut rows = Table::new(&indexed("roots", k, problems.len()), &["t", "xi", "j", "tau", "lambda"]);
        for (t, x, j, tau, lam) in table.rows() {
            rows.push(vec![num(t), num(x), j.to_string(), num(tau), num(lam)]);
        }
        let mut reg = Table::new(&indexed("regularity", k, problems.len()), &["xi", "r1", "r2"]);
        for i in 0..rep.xi.len() {
            reg.push(vec![num(rep.xi[i]), num(rep.r1[i]), num(rep.r2[i])]);
        }
        md += &format!(
            "| {} | {:.3} | {:.3} | {} |\n",
            p.label,
            rep.r1_test.spread,
            rep.r2_test.spread,
            pass_str(rep.pass)
        );
        tables.push(rows);
        tables.push(reg);
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        pass,
        summary: format!("regularized roots for {} problem(s)", problems.len()),
        tables,
        markdown: md,
    })
}

fn indexed(stem: &str, k: usize, n: usize) -> String {
    if n == 1 {
        format!("{stem}.csv")
    } else {
        format!("{stem}_{k}.csv")
    }
}

/// Generating functions accepted by pdo-check.
pub fn pdo_symbol(id: &str) -> Result<Box<dyn Fn(f64) -> Complex64 + Send + Sync>, String> {
    match id {
        "2+sin" => Ok(Box::new(|x: f64| Complex64::new(2.0 + x.sin(), 0.0))),
        "exp-ix" => Ok(Box::new(|x: f64| Complex64::from_polar(1.0, x))),
        _ => {
            let (head, params) = parse_id(id).map_err(|e| e.to_string())?;
            match (head.as_slice(), params.get("rho")) {
                ([h], Some(&rho)) if h == "poisson" && params.len() == 1 && rho > 0.0 && rho < 1.0 => {
                    Ok(Box::new(move |x: f64| {
                        Complex64::new((1.0 - rho * rho) / (1.0 - 2.0 * rho * x.cos() + rho * rho), 0.0)
                    }))
                }
                _ => Err(format!("unknown symbol `{id}`")),
            }
        }
    }
}

/// Tolerance on the per-term improvement of the remainder decay exponent.
pub const TERM_GAIN_TOL: f64 = 0.2;

fn pdo_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let c = &cfg.check;
    let a_x = pdo_symbol(&c.pdo_symbol).map_err(CliError::Config)?;
    let psi = WeightFunction::from_id(&c.psi).map_err(lab)?;
    let op = operator_from_symbol(a_x.as_ref(), Multiplier::One, c.pdo_n, SymbolMeta { order: 0.0, omega: None })
        .map_err(lab)?;
    let mut rem = Table::new("pdo_remainder.csv", &["n_terms", "mode", "residual"]);
    let mut dec = Table::new("pdo_decay.csv", &["n_terms", "decay", "decay_raw", "required", "pass"]);
    let mut md = String::from("| N | decay (psi^N removed) | raw decay | required | one-sided |\n|---|---|---|---|---|\n");
    let mut raw = vec![];
    let mut pass = true;
    for nt in 1..=c.max_terms {
        let r = expansion_residual_report(&op, &psi, c.lam, nt).map_err(lab)?;
        for (m, v) in r.modes.iter().zip(&r.residual) {
            rem.push(vec![nt.to_string(), num(*m), num(*v)]);
        }
        let opt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "exact".into());
        dec.push(vec![nt.to_string(), opt(r.decay), opt(r.decay_raw), num(r.required), pass_str(r.pass)]);
        md += &format!("| {nt} | {} | {} | {:.2} | {} |\n", opt(r.decay), opt(r.decay_raw), r.required, pass_str(r.pass));
        pass &= r.pass;
        raw.push(r.decay_raw);
    }
    let mut gains = vec![];
    for w in raw.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            let g = b - a;
            pass &= (g - 1.0).abs() <= TERM_GAIN_TOL;
            gains.push(g);
        }
    }
    md += &format!("\nper-term gain of the raw decay exponent: {gains:.3?} (target 1 +- {TERM_GAIN_TOL})\n");
    let mut chi = Table::new("pdo_chi.csv", &["gamma", "xi", "constant"]);
    md += "\n| gamma | chi bound spread | non-increasing |\n|---|---|---|\n";
    for g in 1..c.max_terms {
        let b = chi_bound(&psi, c.lam, g, &dyadic(3, 14)).map_err(lab)?;
        for (x, v) in b.xi.iter().zip(&b.constants) {
            chi.push(vec![g.to_string(), num(*x), num(*v)]);
        }
        pass &= b.spread <= crate::fit::MAX_SPREAD;
        md += &format!("| {g} | {:.3e} | {} |\n", b.spread, b.non_increasing);
    }
    let mut tables = vec![rem, dec, chi];
    if c.export_matrix {
        let cj = crate::pdo::conjugate_exact(&op, &psi, c.lam).map_err(lab)?;
        let mut m = Table::new("pdo_matrix.csv", &["row", "col", "re", "im"]);
        for k in cj.modes() {
            for l in cj.modes() {
                let z = cj.entry(k, l);
                m.push(vec![k.to_string(), l.to_string(), num(z.re), num(z.im)]);
            }
        }
        tables.push(m);
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        pass,
        summary: format!("conjugation calculus, N = {}, terms 1..{}", c.pdo_n, c.max_terms),
        tables,
        markdown: md,
    })
}

/// Thresholds of the diagonalization check.
pub const OFFDIAG_TOL: f64 = 1e-10;
pub const ALGEBRA_TOL: f64 = 1e-12;

fn diag_check(cfg: &ExperimentConfig, problems: &[ResolvedProblem]) -> Result<Outcome, CliError> {
    use rayon::prelude::*;
    let xi = cfg.xi_grid();
    let t = cfg.t_grid();
    let m_cut = cfg.check.diag_cutoff;
    let mut tables = vec![];
    let mut pass = true;
    let mut md = String::from("| problem | max offdiag/<xi> | max T^m | max HH^-1 - I | result |\n|---|---|---|---|---|\n");
    for (k, p) in problems.iter().enumerate() {
        let rows = xi
            .par_iter()
            .map(|&x| diagonalize_system(&build_system(&p.spec_at(x)?, x)?, &t, m_cut, &p.modulus))
            .collect::<crate::Result<Vec<_>>>()
            .map_err(lab)?;
        let mut tab = Table::new(
            &indexed("diag", k, problems.len()),
            &["xi", "sup_offdiag", "sup_Bbar_over_omega", "sup_dtH_over_omega"],
        );
        let (mut off, mut nil, mut inv) = (0.0f64, 0.0f64, 0.0f64);
        for r in &rows {
            tab.push(vec![num(r.xi), num(r.sup_offdiag), num(r.sup_bbar_over_omega), num(r.sup_dth_over_omega)]);
            if r.xi.abs() >= 2.0 * m_cut {
                off = off.max(r.sup_offdiag);
            }
            nil = nil.max(r.nilpotency);
            inv = inv.max(r.inverse_error);
        }
        let ok = off <= OFFDIAG_TOL && nil <= ALGEBRA_TOL && inv <= ALGEBRA_TOL;
        pass &= ok;
        md += &format!("| {} | {off:.3e} | {nil:.3e} | {inv:.3e} | {} |\n", p.label, pass_str(ok));
        tables.push(tab);
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        pass,
        summary: format!("diagonalization over {} frequencies", xi.len()),
        tables,
        markdown: md,
    })
}

fn traces_for(cfg: &ExperimentConfig, p: &ResolvedProblem, t_out: &[f64]) -> Result<Vec<EnergyTrace>, CliError> {
    sweep(&|x| p.spec_at(x), &cfg.xi_grid(), t_out, &cfg.solver_options()).map_err(lab)
}

fn trace_table(name: &str, traces: &[EnergyTrace]) -> Table {
    let mut t = Table::new(name, &["xi", "t", "logE", "steps"]);
    for tr in traces {
        for i in 0..tr.times.len() {
            t.push(vec![num(tr.xi), num(tr.times[i]), num(tr.log_e[i]), tr.steps[i].to_string()]);
        }
    }
    t
}

fn solve(cfg: &ExperimentConfig, problems: &[ResolvedProblem]) -> Result<Outcome, CliError> {
    let t_out = cfg.t_grid();
    let mut tables = vec![];
    let mut md = String::from("| problem | xi | logE(T) - logE(0) |\n|---|---|---|\n");
    for (k, p) in problems.iter().enumerate() {
        let traces = traces_for(cfg, p, &t_out)?;
        for tr in &traces {
            md += &format!("| {} | {} | {:.6e} |\n", p.label, tr.xi, tr.log_e.last().unwrap() - tr.log_e[0]);
        }
        tables.push(trace_table(&indexed("trace", k, problems.len()), &traces));
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        pass: true,
        summary: format!("solved {} problem(s) on {} frequencies", problems.len(), cfg.xi_grid().len()),
        tables,
        markdown: md,
    })
}

fn loss_fit_run(cfg: &ExperimentConfig, problems: &[ResolvedProblem]) -> Result<Outcome, CliError> {
    let t_out = cfg.t_grid();
    let mut fit = Table::new("fit.csv", &["family", "omega_id", "kappa_hat", "exponent_hat", "r2", "regime"]);
    let mut rates = Table::new("rates.csv", &["family", "xi", "rate", "rate_over_omega"]);
    let mut tables = vec![];
    let mut md = String::from(
        "| family | omega | kappa_hat | exponent_hat | R^2 | regime | expected | rate/omega spread |\n|---|---|---|---|---|---|---|---|\n",
    );
    let mut pass = true;
    for (k, p) in problems.iter().enumerate() {
        let traces = traces_for(cfg, p, &t_out)?;
        let r = loss_fit(&traces, &p.modulus, &p.label).map_err(lab)?;
        let (ro, test) = rate_over_omega(&r.rates, &p.modulus);
        fit.push(vec![
            r.family.clone(),
            r.omega_id.clone(),
            num(r.kappa_hat),
            num(r.exponent_hat),
            num(r.r2),
            r.regime.to_string(),
        ]);
        for ((x, rate), q) in r.rates.iter().zip(&ro) {
            rates.push(vec![p.label.clone(), num(*x), num(*rate), num(*q)]);
        }
        let expected = cfg.check.expect_regime.get(k).cloned();
        if let Some(e) = &expected {
            pass &= *e == r.regime.to_string();
        }
        md += &format!(
            "| {} | {} | {:.4} | {:.4} | {:.4} | {} | {} | {:.3} |\n",
            r.family,
            r.omega_id,
            r.kappa_hat,
            r.exponent_hat,
            r.r2,
            r.regime,
            expected.unwrap_or_else(|| "-".into()),
            test.spread
        );
        tables.push(trace_table(&indexed("trace", k, problems.len()), &traces));
    }
    tables.insert(0, rates);
    tables.insert(0, fit);
    Ok(Outcome {
        experiment: cfg.experiment,
        pass,
        summary: format!("loss fit for {} famil(ies)", problems.len()),
        tables,
        markdown: md,
    })
}

fn apriori(cfg: &ExperimentConfig, problems: &[ResolvedProblem]) -> Result<Outcome, CliError> {
    let xi = cfg.xi_grid();
    let mut margin_t = Table::new(
        "margin.csv",
        &["problem", "c_b", "kappa", "min_margin", "witness_t", "witness_xi", "pass"],
    );
    let mut slab_t = Table::new("apriori.csv", &["problem", "mode", "t0", "t1", "c", "spread", "budget", "pass"]);
    let mut md = String::from("| problem | mode | C_B | kappa | slabs | max C | result |\n|---|---|---|---|---|---|---|\n");
    let mut pass = true;
    for p in problems {
        let spec_at = |x: f64| p.spec_at(x);
        let t_margin = cfg.t_grid();
        let first =
            garding_margin(&spec_at, &p.modulus, &xi, &t_margin, None, cfg.solver.cutoff, None).map_err(lab)?;
        let kappa = cfg.check.kappa_factor * first.c_b;
        let (mode, weak, t_out, delta1) = match cfg.check.t_star_factor {
            None => (WeightMode::Strong, None, cfg.t_grid(), p.base.delta1),
            Some(f) => {
                let t_star = f / first.c_b;
                let eta = p.base.eta.as_ref().expect("resolved");
                let k_seq = p.base.k_seq.as_ref().expect("resolved");
                let grid = log_grid(16.0, 2f64.powi(cfg.grids.xi_max_exp).max(32.0), 40);
                let comp = compatibility_check(k_seq, eta, &grid, 5000).map_err(lab)?;
                let mut t_out = cfg.t_grid();
                let mut s = t_star;
                while s < cfg.problem.t_final - 1e-12 {
                    t_out.push(s);
                    s += t_star;
                }
                t_out.sort_by(|a, b| a.partial_cmp(b).unwrap());
                t_out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
                let d1 = cfg.problem.delta1.unwrap_or(comp.delta0);
                (WeightMode::Weak { t_star, t0: 0.0 }, Some((t_star, comp.delta0)), t_out, d1)
            }
        };
        let margin = garding_margin(&spec_at, &p.modulus, &xi, &t_margin, Some(kappa), cfg.solver.cutoff, weak)
            .map_err(lab)?;
        let mut q = p.clone();
        q.base.delta1 = delta1;
        let traces = sweep(&|x| q.spec_at(x), &xi, &t_out, &cfg.solver_options()).map_err(lab)?;
        let rep = apriori_check(&traces, &|x| q.spec_at(x), &p.modulus, mode, kappa, cfg.check.c_max).map_err(lab)?;
        let ok = margin.pass && rep.pass;
        pass &= ok;
        margin_t.push(vec![
            p.label.clone(),
            num(margin.c_b),
            num(margin.kappa),
            num(margin.min_margin),
            num(margin.witness.0),
            num(margin.witness.1),
            pass_str(margin.pass),
        ]);
        let mode_s = match mode {
            WeightMode::Strong => "strong",
            WeightMode::Weak { .. } => "weak",
        };
        for s in &rep.slabs {
            slab_t.push(vec![
                p.label.clone(),
                mode_s.into(),
                num(s.t0),
                num(s.t1),
                num(s.c),
                num(s.test.spread),
                num(s.budget),
                pass_str(s.test.pass && (mode_s == "strong" || s.budget > 0.0)),
            ]);
        }
        md += &format!(
            "| {} | {mode_s} | {:.4} | {:.4} | {} | {:.4} | {} |\n",
            p.label,
            margin.c_b,
            kappa,
            rep.slabs.len(),
            rep.c,
            pass_str(ok)
        );
    }
    Ok(Outcome {
        experiment: cfg.experiment,
        pass,
        summary: format!("a-priori estimate for {} problem(s)", problems.len()),
        tables: vec![margin_t, slab_t],
        markdown: md,
    })
}

/// Writes every table plus `summary.md` and `metadata.toml` into `dir`.
pub fn emit(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |p: &Path, e: &dyn std::fmt::Display| CliError::Io { path: p.display().to_string(), detail: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let mut written = vec![];
    for t in &outcome.tables {
        let path = dir.join(&t.name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, &e))?;
        w.write_record(&t.header).map_err(|e| io(&path, &e))?;
        for r in &t.rows {
            w.write_record(r).map_err(|e| io(&path, &e))?;
        }
        w.flush().map_err(|e| io(&path, &e))?;
        written.push(path);
    }
    let meta = format!(
        "# hyplab {} resolved configuration (defaults included)\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_toml()
    );
    let path = dir.join("metadata.toml");
    std::fs::write(&path, &meta).map_err(|e| io(&path, &e))?;
    written.push(path);
    let md = format!(
        "# {:?} run\n\nResult: **{}**. {}\n\n{}\n## Configuration\n\n```toml\n{}```\n",
        outcome.experiment,
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.summary,
        outcome.markdown,
        cfg.to_toml()
    );
    let path = dir.join("summary.md");
    std::fs::write(&path, md).map_err(|e| io(&path, &e))?;
    written.push(path);
    Ok(written)
}
