//! Structural invariants as property tests.

use std::path::PathBuf;
use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;

use hyplab::cli::ExperimentConfig;
use hyplab::coeffs::{hyperbolicity_check, modulus_seminorm, CoefficientFamily, ProblemSpec, SeminormGrid};
use hyplab::energy::{bbar_row_bound, solve, SolverOptions, ENERGY_CUTOFF};
use hyplab::fit::{dyadic, lin_grid};
use hyplab::moduli::ModulusOfContinuity;
use hyplab::pdo::{chi_bound, compose, conjugate_exact, operator_from_symbol, Multiplier, SymbolMeta, TruncatedOperator};
use hyplab::reduction::{build_system, diagonalize_system, DEFAULT_CUTOFF};
use hyplab::roots::{characteristic_roots, mollified_roots, mollify, regularity_report, regularized_root_table, standard_mollifier};
use hyplab::weights::{
    associated_function, associated_sequence, compatibility_check, lambert_w, TGrid, WeightFunction, WeightSequence,
};

fn three_speeds() -> ProblemSpec {
    let moc = ModulusOfContinuity::log_lip();
    let saw = CoefficientFamily::sawtooth(moc.clone(), 1.0, 0.2, 0.25).unwrap();
    let speeds = vec![
        CoefficientFamily::shifted(saw.clone(), -2.5),
        CoefficientFamily::constant(0.0).unwrap(),
        saw,
    ];
    ProblemSpec::from_speeds(speeds, moc).unwrap()
}

fn linear_dual_table() -> &'static WeightSequence {
    static TABLE: OnceLock<WeightSequence> = OnceLock::new();
    TABLE.get_or_init(|| {
        let m = WeightFunction::linear();
        let ln: Vec<f64> = (0..=1000u64)
            .map(|p| associated_sequence(&m, p, TGrid::default()).unwrap().ln_value)
            .collect();
        WeightSequence::from_ln_table("dual:linear", ln)
    })
}

fn trig_operator(c: [f64; 3], mult: Multiplier, n: usize) -> TruncatedOperator {
    let a = move |x: f64| Complex64::new(c[0] + c[1] * x.cos(), c[2] * (2.0 * x).sin());
    operator_from_symbol(&a, mult, n, SymbolMeta { order: 0.0, omega: None }).unwrap()
}

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_non_decreasing(r1 in 1.0f64..16384.0, r2 in 1.0f64..16384.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        for m in ModulusOfContinuity::catalog() {
            prop_assert!(m.omega(lo) <= m.omega(hi) * (1.0 + 1e-12), "{} at {lo}, {hi}", m.id());
        }
    }

    #[test]
    fn lambert_w_inverts(x in 1e-3f64..1e6) {
        let w = lambert_w(x).unwrap();
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x);
    }

    #[test]
    fn duality_round_trip_of_linear_weight(t in 10.0f64..500.0) {
        let got = associated_function(linear_dual_table(), t, 1000).unwrap();
        prop_assert!((got - t).abs() <= 1.0 / (8.0 * t) + 1e-8 * t, "t {t}: {got}");
    }

    #[test]
    fn factorial_dual_is_stirling(n in 10u32..400) {
        let t = n as f64;
        let got = associated_function(&WeightSequence::factorial(), t, 2000).unwrap();
        let want = t - 0.5 * (2.0 * std::f64::consts::PI * t).ln();
        prop_assert!((got - want).abs() <= 1.0 / (12.0 * t) + 1e-9, "t {t}: {got} vs {want}");
    }

    #[test]
    fn compatibility_monotone_in_pmax(p1 in 20u64..200, dp in 0u64..200) {
        let k = WeightSequence::gevrey(0.6, 1.0).unwrap();
        let eta = WeightFunction::power(0.6).unwrap();
        let grid = [16.0, 64.0, 256.0, 1024.0];
        let a = compatibility_check(&k, &eta, &grid, p1).unwrap();
        let b = compatibility_check(&k, &eta, &grid, p1 + dp).unwrap();
        for xi in grid {
            let s = hyplab::japanese(xi);
            let fa = associated_function(&k, s, p1).unwrap();
            let fb = associated_function(&k, s, p1 + dp).unwrap();
            prop_assert!(fb >= fa);
        }
        prop_assert!(a.delta0.is_finite() && b.delta0.is_finite());
    }

    #[test]
    fn resonant_seminorm_bounded(xi in 16.0f64..16384.0, c in 0.05f64..0.9) {
        let grid = SeminormGrid::standard(1.0);
        for m in [
            ModulusOfContinuity::log_lip(),
            ModulusOfContinuity::holder(0.5).unwrap(),
            ModulusOfContinuity::log_log_lip(2).unwrap(),
        ] {
            let fam = CoefficientFamily::resonant(m.clone(), c, xi).unwrap();
            let s = modulus_seminorm(&fam, &m, &grid);
            prop_assert!(s <= 2.0 * c * (1.0 + 1e-9), "{} xi {xi}: {s}", m.id());
        }
    }

    #[test]
    fn mollify_is_linear_and_exact_on_constants(
        a in -5.0f64..5.0, b in -5.0f64..5.0, t in 0.0f64..1.0, eps in 1e-4f64..0.1, k in -3.0f64..3.0,
    ) {
        let phi = standard_mollifier();
        let f = |s: f64| s.sin();
        let g = |s: f64| (3.0 * s).cos() + s * s;
        let lhs = mollify(&|s| a * f(s) + b * g(s), t, eps, phi);
        let rhs = a * mollify(&f, t, eps, phi) + b * mollify(&g, t, eps, phi);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()));
        prop_assert!((mollify(&|_| k, t, eps, phi) - k).abs() <= 1e-13 * (1.0 + k.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mollified_roots_sorted_with_gap(xi in 16.0f64..4096.0, t in 0.0f64..1.0) {
        let spec = three_speeds();
        let eps = 1.0 / hyplab::japanese(xi);
        let lam = mollified_roots(&spec, t, xi, eps, standard_mollifier()).unwrap();
        let tau = characteristic_roots(&spec, t, xi).unwrap();
        // every tau gap here is at least xi
        let min_tau_gap = tau.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assert!(min_tau_gap >= xi * (1.0 - 1e-12));
        for w in lam.windows(2) {
            prop_assert!(w[1] - w[0] >= 0.5 * xi, "lambda {lam:?}");
        }
    }

    #[test]
    fn diagonalization_preserves_eigenvalues(xi in 32.0f64..4096.0) {
        let spec = three_speeds();
        let sys = build_system(&spec, xi).unwrap();
        let row = diagonalize_system(&sys, &lin_grid(0.0, 1.0, 9), DEFAULT_CUTOFF, &spec.modulus).unwrap();
        prop_assert!(row.eig_error <= 1e-8, "xi {xi}: {}", row.eig_error);
        prop_assert!(row.nilpotency <= 1e-12 && row.inverse_error <= 1e-12);
    }

    #[test]
    fn energy_rate_below_row_bound(xi in 16.0f64..2048.0) {
        let moc = ModulusOfContinuity::log_lip();
        let spec = ProblemSpec::wave(CoefficientFamily::resonant(moc.clone(), 0.25, xi).unwrap(), moc);
        let t = lin_grid(0.0, 1.0, 65);
        let tr = solve(&spec, xi, &t, &SolverOptions::default()).unwrap();
        let sys = build_system(&spec, xi).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            let bound = bbar_row_bound(&sys, ti, ENERGY_CUTOFF).unwrap();
            prop_assert!(0.5 * tr.rate[i] <= bound * (1.0 + 1e-9) + 1e-12, "t {ti}: {} > {bound}", 0.5 * tr.rate[i]);
        }
    }

    #[test]
    fn composition_is_associative(
        ca in prop::array::uniform3(-1.0f64..1.0),
        cb in prop::array::uniform3(-1.0f64..1.0),
        cc in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let n = 16;
        let a = trig_operator(ca, Multiplier::JapanesePower(0.5), n);
        let b = trig_operator(cb, Multiplier::One, n);
        let c = trig_operator(cc, Multiplier::Omega(ModulusOfContinuity::log_lip()), n);
        let (ab, _) = compose(&a, &b, 1).unwrap();
        let (bc, _) = compose(&b, &c, 1).unwrap();
        let (l, _) = compose(&ab, &c, 1).unwrap();
        let (r, _) = compose(&a, &bc, 1).unwrap();
        let scale = l.entries.iter().map(|z| z.norm()).fold(1.0, f64::max);
        prop_assert!((&l.entries - &r.entries).iter().all(|z| z.norm() <= 1e-12 * scale));
    }

    #[test]
    fn conjugation_is_multiplicative(
        ca in prop::array::uniform3(-1.0f64..1.0),
        cb in prop::array::uniform3(-1.0f64..1.0),
        lam in 0.1f64..2.0,
    ) {
        let n = 16;
        let psi = WeightFunction::log();
        let a = trig_operator(ca, Multiplier::One, n);
        let b = trig_operator(cb, Multiplier::JapanesePower(1.0), n);
        let (ab, _) = compose(&a, &b, 1).unwrap();
        let lhs = conjugate_exact(&ab, &psi, lam).unwrap();
        let (rhs, _) = compose(&conjugate_exact(&a, &psi, lam).unwrap(), &conjugate_exact(&b, &psi, lam).unwrap(), 1).unwrap();
        let scale = lhs.entries.iter().map(|z| z.norm()).fold(1.0, f64::max);
        prop_assert!((&lhs.entries - &rhs.entries).iter().all(|z| z.norm() <= 1e-10 * scale));
    }

    #[test]
    fn chi_first_order_constants_non_increasing(lam in 0.1f64..2.0) {
        let b = chi_bound(&WeightFunction::log(), lam, 1, &dyadic(3, 14)).unwrap();
        prop_assert!(b.non_increasing, "{:?}", b.constants);
    }
}

#[test]
fn smooth_family_root_regularity_bounded() {
    let moc = ModulusOfContinuity::lipschitz();
    let spec = ProblemSpec::wave(CoefficientFamily::smooth(1.0, 0.5, 3.0).unwrap(), moc.clone());
    let table = regularized_root_table(&spec, &lin_grid(0.0, 1.0, 33), &dyadic(4, 12)).unwrap();
    let rep = regularity_report(&table, &moc);
    assert!(rep.r1_test.pass, "R1 {:?}", rep.r1);
    assert!(rep.r1.iter().all(|v| v.is_finite() && *v < 10.0));
}

#[test]
fn shipped_configs_strictly_hyperbolic() {
    let mut n = 0;
    for entry in std::fs::read_dir(config_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        for p in cfg.resolve().unwrap() {
            for xi in [16.0, 256.0, 4096.0] {
                let spec = p.spec_at(xi).unwrap();
                let rep = hyperbolicity_check(&spec, &lin_grid(0.0, spec.t_final, 65), &[xi], 0.1).unwrap();
                assert!(rep.pass, "{}: {} gap {}", path.display(), p.label, rep.min_gap);
                n += 1;
            }
        }
    }
    assert!(n > 0);
}
