use gyromodal::complexmode::{
    complex_basis, complex_to_real, is_classical_mode, kernel_family, real_to_complex, KERNEL_TOL,
};
use gyromodal::spectral::{build_evolution_operator, build_gram, gram_of_basis, modal_basis, pair_residual};
use gyromodal::system::{linearize_at_equilibrium, DEFAULT_FD_STEP};
use gyromodal::trajectory::{energy, evaluate_state, mode_shapes, project_initial_conditions};
use gyromodal::verify::{random_system, RandomSystemSpec};
use gyromodal::{EquilibriumPoint, FnModel, HarmonicParams, StateVector, SystemMatrices};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
    (0.3..2.0f64, -1.0..1.0f64, 0.3..2.0f64).prop_map(|(l11, l21, l22)| {
        let l = DMatrix::from_row_slice(2, 2, &[l11, 0.0, l21, l22]);
        &l * l.transpose()
    })
}

fn ensemble_spec() -> impl Strategy<Value = RandomSystemSpec> {
    (1usize..=6, any::<u64>(), 0.0..2.5f64).prop_map(|(n, seed, b_scale)| RandomSystemSpec {
        n,
        seed,
        condition_cap: 1e3,
        b_scale,
    })
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // det(C - ω²A - iωB) for n = 2 is a quadratic in s = ω²:
    // (a11a22 - a12²) s² - (c11a22 + c22a11 - 2c12a12 + b²) s + (c11c22 - c12²)
    #[test]
    fn two_dof_frequencies_solve_the_characteristic_quadratic(a in spd2(), c in spd2(), b in -3.0..3.0f64) {
        let bm = DMatrix::from_row_slice(2, 2, &[0.0, b, -b, 0.0]);
        let sys = SystemMatrices::new(a.clone(), bm, c.clone(), 1e-10).unwrap();
        let p = a[(0, 0)] * a[(1, 1)] - a[(0, 1)].powi(2);
        let q = c[(0, 0)] * a[(1, 1)] + c[(1, 1)] * a[(0, 0)] - 2.0 * c[(0, 1)] * a[(0, 1)] + b * b;
        let r = c[(0, 0)] * c[(1, 1)] - c[(0, 1)].powi(2);
        let big = (q + (q * q - 4.0 * p * r).max(0.0).sqrt()) / (2.0 * p);
        let small = r / (p * big);
        let basis = modal_basis(&sys).unwrap();
        prop_assert!((basis[0].omega - small.sqrt()).abs() <= 1e-9 * small.sqrt());
        prop_assert!((basis[1].omega - big.sqrt()).abs() <= 1e-9 * big.sqrt());
    }

    #[test]
    fn modal_basis_is_g_orthonormal_partner_pairs(spec in ensemble_spec()) {
        let sys = random_system(&spec).unwrap();
        let basis = modal_basis(&sys).unwrap();
        let g = build_gram(&sys).unwrap();
        let op = build_evolution_operator(&sys).unwrap();
        let n = sys.dim();
        let dev = (gram_of_basis(&g, &basis) - DMatrix::identity(2 * n, 2 * n)).amax();
        prop_assert!(dev <= 1e-9, "gram deviation {dev}");
        for p in &basis {
            prop_assert!(pair_residual(&op, p) <= 1e-9);
        }
        prop_assert!(basis.windows(2).all(|w| w[0].omega <= w[1].omega));
    }

    #[test]
    fn real_complex_real_round_trip(spec in ensemble_spec()) {
        let sys = random_system(&spec).unwrap();
        for p in modal_basis(&sys).unwrap() {
            let back = complex_to_real(&sys, &real_to_complex(&p).unwrap()).unwrap();
            let scale = p.u.amax().max(p.v.amax());
            prop_assert!((&back.u - &p.u).amax() <= 1e-10 * scale);
            prop_assert!((&back.v - &p.v).amax() <= 1e-10 * scale);
        }
    }

    #[test]
    fn complex_modes_are_sesq_orthonormal(spec in ensemble_spec()) {
        let sys = random_system(&spec).unwrap();
        let family = kernel_family(&sys, KERNEL_TOL).unwrap();
        prop_assert_eq!(family.total_dim(), sys.dim());
        let modes = family.modes();
        for (i, zi) in modes.iter().enumerate() {
            for (j, zj) in modes.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((family.inner(&zi.z, &zj.z) - expected).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn fitted_trajectory_reproduces_ic_and_conserves_energy(
        spec in ensemble_spec(),
        raw in prop::collection::vec(-1.0..1.0f64, 12),
        t in 0.0..50.0f64,
    ) {
        let sys = random_system(&spec).unwrap();
        let n = sys.dim();
        let x0 = DVector::from_fn(2 * n, |i, _| raw[i]);
        prop_assume!(x0.amax() > 1e-3);
        let ic = StateVector::from_stacked(&x0);
        let basis = modal_basis(&sys).unwrap();
        let shapes = mode_shapes(&basis).unwrap();
        let params = project_initial_conditions(&build_gram(&sys).unwrap(), &basis, &ic).unwrap();
        let at0 = evaluate_state(&shapes, &params, 0.0).stacked();
        prop_assert!((at0 - &x0).amax() <= 1e-9 * x0.amax());
        let e0 = energy(&sys, &ic);
        let e1 = energy(&sys, &evaluate_state(&shapes, &params, t));
        prop_assert!((e1 - e0).abs() <= 1e-9 * e0);
    }

    #[test]
    fn without_gyroscopic_coupling_every_mode_is_classical(
        spec in ensemble_spec().prop_map(|s| RandomSystemSpec { b_scale: 0.0, ..s })
    ) {
        let sys = random_system(&spec).unwrap();
        for m in complex_basis(&sys).unwrap() {
            prop_assert!(is_classical_mode(&sys, &m, 1e-8));
        }
        for p in modal_basis(&sys).unwrap() {
            prop_assert!(is_classical_mode(&sys, &real_to_complex(&p).unwrap(), 1e-8));
        }
    }

    #[test]
    fn harmonic_params_reproduce_modal_coordinates(chi in -5.0..5.0f64, psi in -5.0..5.0f64) {
        let p = HarmonicParams::from_modal_coordinates(&[chi], &[psi]);
        let (a, phi) = (p.amplitudes[0], p.phases[0]);
        prop_assert!(a >= 0.0);
        prop_assert!(phi > -std::f64::consts::PI && phi <= std::f64::consts::PI);
        prop_assert!((a * phi.cos() - chi).abs() <= 1e-12);
        prop_assert!((a * phi.sin() - psi).abs() <= 1e-12);
    }

    #[test]
    fn random_systems_have_the_requested_structure(spec in ensemble_spec()) {
        let sys = random_system(&spec).unwrap();
        prop_assert_eq!(&sys, &random_system(&spec).unwrap());
        let target = spec.b_scale * (spectral_norm(sys.a()) * spectral_norm(sys.c())).sqrt();
        if spec.n > 1 {
            prop_assert!((spectral_norm(sys.b()) - target).abs() <= 1e-9 * target.max(1e-300));
        }
        for m in [sys.a(), sys.c()] {
            let e = m.clone().symmetric_eigen().eigenvalues;
            prop_assert!(e.max() / e.min() <= spec.condition_cap * (1.0 + 1e-9));
        }
    }
}

fn matrix(n: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| vals[i * n + j])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // L₀ = -½ (q - q*)ᵀ C (q - q*), b(q) = D q, Q = J q̇ with J antisymmetric and
    // constant metric A give the linearization (A, D - Dᵀ - J, C) exactly.
    #[test]
    fn linearization_of_quadratic_models_is_exact(
        n in 1usize..=4,
        raw in prop::collection::vec(-1.0..1.0f64, 5 * 16 + 4),
    ) {
        let block = |k: usize| matrix(n, &raw[k * 16..k * 16 + n * n]);
        let (ra, rc, d, jr) = (block(0), block(1), block(2), block(3));
        let a = &ra * ra.transpose() + DMatrix::identity(n, n);
        let c = &rc * rc.transpose() + DMatrix::identity(n, n);
        let j = &jr - jr.transpose();
        let q_star = DVector::from_fn(n, |i, _| raw[64 + i]);

        let (c2, qs, a2, d2, j2) = (c.clone(), q_star.clone(), a.clone(), d.clone(), j.clone());
        let model = FnModel::new(n, move |q| {
            let e = q - &qs;
            -0.5 * e.dot(&(&c2 * &e))
        })
        .with_kinetic_metric(move |_| a2.clone())
        .with_linear_coefficients(move |q| &d2 * q)
        .with_generalized_force(move |_, qdot| &j2 * qdot);

        let eq = EquilibriumPoint(q_star);
        let sys = linearize_at_equilibrium(&model, &eq, DEFAULT_FD_STEP, 1e-8).unwrap();
        let expected_b = &d - d.transpose() - &j;
        let rel = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).amax() / y.amax().max(1.0);
        prop_assert!(rel(sys.a(), &a) <= 1e-8);
        prop_assert!(rel(sys.b(), &expected_b) <= 1e-8);
        prop_assert!(rel(sys.c(), &c) <= 1e-8);
    }
}
