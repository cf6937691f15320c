//! Experiment configuration: TOML with sections, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientFamily, DataProfile, ProblemSpec, RhsProfile};
use crate::energy::SolverOptions;
use crate::fit::{dyadic, lin_grid};
use crate::ids::parse_id_raw;
use crate::moduli::ModulusOfContinuity;
use crate::weights::{WeightFunction, WeightSequence};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Classify,
    WeightsCheck,
    RootsCheck,
    PdoCheck,
    DiagCheck,
    Solve,
    LossFit,
    Apriori,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Coefficient family ids; one problem per entry (wave equation
    /// u_tt + a(t) xi^2 u = 0 with a from the family).
    pub families: Vec<String>,
    /// Characteristic speed family ids; when set, a single problem of order
    /// len(speeds) replaces `families`.
    pub speeds: Vec<String>,
    /// Modulus id; defaults to the `mu` parameter of each family.
    pub modulus: Option<String>,
    /// "standing" or "forward".
    pub data: String,
    pub rhs_amp: f64,
    pub rhs_freq: f64,
    pub t_final: f64,
    pub nu: f64,
    pub eta: Option<String>,
    pub k_seq: Option<String>,
    pub delta1: Option<f64>,
    pub delta2: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            families: vec!["coeff:constant:c=1".into()],
            speeds: vec![],
            modulus: None,
            data: "standing".into(),
            rhs_amp: 0.0,
            rhs_freq: 0.0,
            t_final: 1.0,
            nu: 0.0,
            eta: None,
            k_seq: None,
            delta1: None,
            delta2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Frequencies 2^xi_min_exp .. 2^xi_max_exp.
    pub xi_min_exp: i32,
    pub xi_max_exp: i32,
    /// Also run the negative frequencies.
    pub signed: bool,
    /// Output times: t_points evenly spaced points of [0, T].
    pub t_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { xi_min_exp: 4, xi_max_exp: 14, signed: false, t_points: 33 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub step_cap: f64,
    pub cutoff: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            rtol: d.rtol,
            atol: d.atol,
            step_cap: d.step_cap,
            cutoff: d.cutoff,
            max_steps: d.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Diagonalizer cutoff M for diag-check.
    pub diag_cutoff: f64,
    /// kappa = kappa_factor * C_B in apriori.
    pub kappa_factor: f64,
    /// Weak mode with T* = t_star_factor / C_B when set.
    pub t_star_factor: Option<f64>,
    /// Optional hard bound on every LHS/RHS ratio.
    pub c_max: Option<f64>,
    /// Search bound for associated functions.
    pub p_max: u64,
    /// pdo-check: generating function ("2+sin", "exp-ix", "poisson:rho=R").
    pub pdo_symbol: String,
    pub pdo_n: usize,
    pub psi: String,
    pub lam: f64,
    pub max_terms: usize,
    pub export_matrix: bool,
    /// loss-fit: expected regime per family ("NoLoss", "FiniteLoss",
    /// "InfiniteLoss"); empty skips the comparison.
    pub expect_regime: Vec<String>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            diag_cutoff: crate::reduction::DEFAULT_CUTOFF,
            kappa_factor: 2.0,
            t_star_factor: None,
            c_max: None,
            p_max: 200,
            pdo_symbol: "2+sin".into(),
            pdo_n: crate::pdo::DEFAULT_N,
            psi: "eta:log".into(),
            lam: 1.0,
            max_terms: 4,
            export_matrix: false,
            expect_regime: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Recorded in the metadata; every experiment is deterministic.
    pub seed: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into(), seed: 0 }
    }
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io { path: path.display().to_string(), detail: e.to_string() })?;
        Self::from_str(&text)
    }

    /// Full config with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            rtol: self.solver.rtol,
            atol: self.solver.atol,
            step_cap: self.solver.step_cap,
            cutoff: self.solver.cutoff,
            max_steps: self.solver.max_steps,
        }
    }

    pub fn xi_grid(&self) -> Vec<f64> {
        let pos = dyadic(self.grids.xi_min_exp, self.grids.xi_max_exp);
        if self.grids.signed {
            let mut v: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
            v.extend(pos);
            v
        } else {
            pos
        }
    }

    pub fn t_grid(&self) -> Vec<f64> {
        lin_grid(0.0, self.problem.t_final, self.grids.t_points)
    }

    /// Checks every id and numeric field without running anything.
    pub fn resolve(&self) -> Result<Vec<ResolvedProblem>, CliError> {
        let bad = |key: &str, msg: String| CliError::Key { key: key.to_string(), msg };
        let g = &self.grids;
        if g.xi_min_exp < 0 || g.xi_max_exp < g.xi_min_exp || g.xi_max_exp > 30 {
            return Err(bad("grids.xi_max_exp", format!("bad exponent range {}..{}", g.xi_min_exp, g.xi_max_exp)));
        }
        if g.t_points < 2 {
            return Err(bad("grids.t_points", "need at least 2 output times".into()));
        }
        let s = &self.solver;
        if !(s.rtol > 0.0 && s.atol > 0.0 && s.step_cap > 0.0 && s.cutoff >= 0.0) {
            return Err(bad("solver", "tolerances and step cap must be positive".into()));
        }
        let p = &self.problem;
        if !(p.t_final > 0.0) {
            return Err(bad("problem.t_final", format!("{} is not positive", p.t_final)));
        }
        let data = match p.data.as_str() {
            "standing" => DataProfile::Standing,
            "forward" => DataProfile::Forward,
            other => return Err(bad("problem.data", format!("unknown profile `{other}`"))),
        };
        let eta = p
            .eta
            .as_deref()
            .map(WeightFunction::from_id)
            .transpose()
            .map_err(|e| bad("problem.eta", e.to_string()))?;
        let k_seq = p
            .k_seq
            .as_deref()
            .map(WeightSequence::from_id)
            .transpose()
            .map_err(|e| bad("problem.k_seq", e.to_string()))?;
        let explicit = p
            .modulus
            .as_deref()
            .map(ModulusOfContinuity::from_id)
            .transpose()
            .map_err(|e| bad("problem.modulus", e.to_string()))?;
        let rhs = if p.rhs_amp == 0.0 {
            RhsProfile::Zero
        } else {
            RhsProfile::Harmonic { amp: p.rhs_amp, freq: p.rhs_freq }
        };
        let base = BaseProblem {
            data,
            rhs,
            t_final: p.t_final,
            nu: p.nu,
            eta,
            k_seq,
            delta1: p.delta1.unwrap_or(0.0),
            delta2: p.delta2,
        };
        let needs_problem = !matches!(
            self.experiment,
            Experiment::Classify | Experiment::WeightsCheck | Experiment::PdoCheck
        );
        let groups: Vec<(String, Vec<String>, &str)> = if !needs_problem {
            vec![]
        } else if p.speeds.is_empty() {
            if p.families.is_empty() {
                return Err(bad("problem.families", "no coefficient family given".into()));
            }
            p.families.iter().map(|f| (f.clone(), vec![f.clone()], "problem.families")).collect()
        } else {
            vec![(p.speeds.join("|"), p.speeds.clone(), "problem.speeds")]
        };
        let mut out = Vec::new();
        for (label, ids, key) in groups {
            let modulus = match &explicit {
                Some(m) => m.clone(),
                None => {
                    let (_, params) = parse_id_raw(&ids[0]).map_err(|e| bad(key, e.to_string()))?;
                    let mu = params.get("mu").ok_or_else(|| {
                        bad("problem.modulus", format!("`{}` has no `mu`; set problem.modulus", ids[0]))
                    })?;
                    ModulusOfContinuity::from_id(mu).map_err(|e| bad(key, e.to_string()))?
                }
            };
            let rp = ResolvedProblem { label, ids, modulus, base: base.clone() };
            // resonant families are tuned per frequency: probe one
            rp.spec_at(16.0).map_err(|e| bad(key, e.to_string()))?;
            out.push(rp);
        }
        if self.experiment == Experiment::PdoCheck {
            super::run::pdo_symbol(&self.check.pdo_symbol).map(|_| ()).map_err(|e| bad("check.pdo_symbol", e))?;
            WeightFunction::from_id(&self.check.psi).map_err(|e| bad("check.psi", e.to_string()))?;
            if self.check.pdo_n < 8 {
                return Err(bad("check.pdo_n", "need at least 8 modes".into()));
            }
            if !(2..=crate::pdo::MAX_GAMMA + 1).contains(&self.check.max_terms) {
                return Err(bad("check.max_terms", format!("not in 2..={}", crate::pdo::MAX_GAMMA + 1)));
            }
        }
        for r in &self.check.expect_regime {
            if !["NoLoss", "FiniteLoss", "InfiniteLoss"].contains(&r.as_str()) {
                return Err(bad("check.expect_regime", format!("unknown regime `{r}`")));
            }
        }
        if !self.check.expect_regime.is_empty() && self.check.expect_regime.len() != out.len() {
            return Err(bad("check.expect_regime", "one entry per family expected".into()));
        }
        if self.check.t_star_factor.is_some() && (self.problem.eta.is_none() || self.problem.k_seq.is_none()) {
            return Err(bad("check.t_star_factor", "weak mode needs problem.eta and problem.k_seq".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct BaseProblem {
    pub data: DataProfile,
    pub rhs: RhsProfile,
    pub t_final: f64,
    pub nu: f64,
    pub eta: Option<WeightFunction>,
    pub k_seq: Option<WeightSequence>,
    pub delta1: f64,
    pub delta2: f64,
}

/// One problem of the config with its modulus; built per frequency.
#[derive(Debug, Clone)]
pub struct ResolvedProblem {
    pub label: String,
    pub ids: Vec<String>,
    pub modulus: ModulusOfContinuity,
    pub base: BaseProblem,
}

impl ResolvedProblem {
    pub fn spec_at(&self, xi: f64) -> crate::Result<ProblemSpec> {
        let fams: Vec<CoefficientFamily> = self
            .ids
            .iter()
            .map(|id| CoefficientFamily::from_id(id, Some(xi)))
            .collect::<crate::Result<_>>()?;
        let mut spec = if fams.len() == 1 {
            ProblemSpec::wave(fams.into_iter().next().unwrap(), self.modulus.clone())
        } else {
            ProblemSpec::from_speeds(fams, self.modulus.clone())?
        };
        let b = &self.base;
        spec.data = b.data;
        spec.rhs = b.rhs;
        spec.t_final = b.t_final;
        spec.nu = b.nu;
        spec.eta = b.eta.clone();
        spec.k_seq = b.k_seq.clone();
        spec.delta1 = b.delta1;
        spec.delta2 = b.delta2;
        spec.validate()?;
        Ok(spec)
    }
}
