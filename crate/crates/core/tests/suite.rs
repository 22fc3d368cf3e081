use gyromodal::spectral::modal_basis;
use gyromodal::verify::{
    integrate_reference, random_system, run_invariant_suite, run_invariant_suite_with_basis,
    standard_ensemble, RandomSystemSpec, ToleranceProfile,
};
use gyromodal::{StateVector, SystemMatrices};
use nalgebra::{dmatrix, DMatrix, DVector};

fn gyro2() -> SystemMatrices {
    let i2 = DMatrix::identity(2, 2);
    SystemMatrices::new(i2.clone(), dmatrix![0.0, 1.5; -1.5, 0.0], i2, 1e-10).unwrap()
}

#[test]
fn seeded_ensemble_passes_every_invariant() {
    let tol = ToleranceProfile::default();
    let mut failures = Vec::new();
    for spec in standard_ensemble(100) {
        let report = run_invariant_suite(&random_system(&spec).unwrap(), &tol);
        for c in report.failures() {
            failures.push(format!("seed {}: {} = {:e} (bound {:e})", spec.seed, c.name, c.residual, c.bound));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn classical_ensemble_passes_every_invariant() {
    let tol = ToleranceProfile::default();
    for spec in standard_ensemble(24) {
        let spec = RandomSystemSpec { b_scale: 0.0, ..spec };
        let report = run_invariant_suite(&random_system(&spec).unwrap(), &tol);
        assert!(report.passed, "seed {}: {:?}", spec.seed, report.failures().collect::<Vec<_>>());
        assert!(report.check("classical_reduction").unwrap().passed);
    }
}

#[test]
fn flipped_partner_sign_fails_orthonormality_and_pair_equations() {
    let sys = gyro2();
    let mut basis = modal_basis(&sys).unwrap();
    basis[0].v = -basis[0].v.clone();
    let report = run_invariant_suite_with_basis(&sys, &basis, &ToleranceProfile::default());
    assert!(!report.passed);
    assert!(!report.check("pair_equations").unwrap().passed);
    // orthonormality survives a sign flip; the partner relation and the
    // (x, λy), (y, -λx) shape do not
    assert!(report.check("basis_orthonormality").unwrap().passed);
    assert!(!report.check("round_trip").unwrap().passed);
}

#[test]
fn scaled_vector_fails_orthonormality() {
    let sys = gyro2();
    let mut basis = modal_basis(&sys).unwrap();
    basis[1].u *= 1.001;
    let report = run_invariant_suite_with_basis(&sys, &basis, &ToleranceProfile::default());
    assert!(!report.check("basis_orthonormality").unwrap().passed);
    assert!(!report.check("pair_equations").unwrap().passed);
}

#[test]
fn seed_42_frequencies_match_schur_eigenvalues() {
    let sys = random_system(&RandomSystemSpec { n: 6, seed: 42, condition_cap: 1e4, b_scale: 1.0 }).unwrap();
    let report = run_invariant_suite(&sys, &ToleranceProfile::default());
    let check = report.check("eigenvalue_consistency").unwrap();
    assert!(check.passed && check.residual <= 1e-10, "{check:?}");
}

fn max_deviation(sys: &SystemMatrices, ic: &StateVector, t_end: f64, dt: f64) -> f64 {
    use gyromodal::spectral::build_gram;
    use gyromodal::trajectory::{evaluate_state, mode_shapes, project_initial_conditions};
    let basis = modal_basis(sys).unwrap();
    let shapes = mode_shapes(&basis).unwrap();
    let params = project_initial_conditions(&build_gram(sys).unwrap(), &basis, ic).unwrap();
    let run = integrate_reference(sys, ic, t_end, dt).unwrap();
    run.times
        .iter()
        .zip(&run.states)
        .map(|(&t, s)| (s.stacked() - evaluate_state(&shapes, &params, t).stacked()).amax())
        .fold(0.0, f64::max)
}

#[test]
fn halving_the_step_cuts_the_error_sixteenfold() {
    let sys = gyro2();
    let ic = StateVector::new(DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 0.5])).unwrap();
    let e1 = max_deviation(&sys, &ic, 20.0, 0.1);
    let e2 = max_deviation(&sys, &ic, 20.0, 0.05);
    let order = (e1 / e2).log2();
    assert!((3.5..=4.5).contains(&order), "observed order {order}");
}

#[test]
fn shortened_last_step_lands_on_t_end() {
    let sys = gyro2();
    let ic = StateVector::new(DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2)).unwrap();
    let run = integrate_reference(&sys, &ic, 1.05, 0.1).unwrap();
    assert_eq!(run.times.len(), 12);
    assert_eq!(*run.times.last().unwrap(), 1.05);
    assert!(max_deviation(&sys, &ic, 1.05, 0.1) < 1e-4);
}

#[test]
fn tolerance_profile_reads_environment() {
    std::env::set_var(ToleranceProfile::ENV_VAR, "residual=3e-8");
    let p = ToleranceProfile::from_env().unwrap();
    std::env::remove_var(ToleranceProfile::ENV_VAR);
    assert_eq!(p.residual, 3e-8);
    assert_eq!(p.ortho, ToleranceProfile::default().ortho);
}

#[test]
fn report_round_trips_through_json() {
    let report = run_invariant_suite(&gyro2(), &ToleranceProfile::default());
    assert!(report.passed);
    let json = serde_json::to_string(&report).unwrap();
    let back: gyromodal::InvariantReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.checks.len(), report.checks.len());
    assert!(json.contains("\"comparator\":\"<=\""));
}

#[test]
fn unevaluated_checks_survive_json() {
    let sys = gyro2();
    let report = run_invariant_suite_with_basis(&sys, &[], &ToleranceProfile::default());
    assert!(!report.passed);
    let json = serde_json::to_string(&report).unwrap();
    let back: gyromodal::InvariantReport = serde_json::from_str(&json).unwrap();
    assert!(back.check("basis_size").unwrap().residual.is_nan());
}
