//! Spectra, generators and derivatives checked against independent dense
//! oracles.

use fosi::analysis::{effective_preconditioner_diagonal, effective_preconditioner_identity};
use fosi::objective::check_derivatives;
use fosi::problems::{
    gen_appendix_e_quadratic, gen_fbzeta_quadratic, gen_random_spd, gen_spectrum_quadratic, LogisticProblem,
    QuadraticProblem,
};
use fosi::spectral::ese;
use fosi::{Matrix, Objective, Vector};
use proptest::prelude::*;

fn sorted_desc(v: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut x: Vec<f64> = v.into_iter().collect();
    x.sort_by(|a, b| b.total_cmp(a));
    x
}

fn dense_oracle(m: &Matrix) -> Vec<f64> {
    sorted_desc(m.clone().symmetric_eigen().eigenvalues.iter().copied())
}

#[test]
fn ese_recovers_constructed_spectrum_at_n_200() {
    let q = gen_spectrum_quadratic(200, 200.0, 4).unwrap();
    let est = ese(&q, q.theta0(), 10, 0, 9).unwrap();
    for i in 0..10 {
        let want = q.eigenvalues()[i];
        assert!((est.values[i] - want).abs() <= 1e-6 * want, "eigenvalue {i}: {} vs {want}", est.values[i]);
        let (a, b) = (est.vectors.column(i), q.eigenvectors().column(i));
        assert!((a - b).norm().min((a + b).norm()) <= 1e-4);
    }
}

#[test]
fn ese_matches_dense_oracle_when_krylov_space_is_full() {
    // 4(k + ℓ) = n, so the Lanczos space covers everything.
    for seed in 0..5 {
        let q = gen_random_spd(20, seed).unwrap();
        let est = ese(&q, q.theta0(), 3, 2, seed).unwrap();
        let oracle = dense_oracle(&q.dense_hessian());
        let want = [oracle[0], oracle[1], oracle[2], oracle[18], oracle[19]];
        for (got, want) in est.values.iter().zip(want) {
            assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
        }
    }
}

#[test]
fn generator_spectra_match_dense_eigensolver() {
    let problems = [
        gen_spectrum_quadratic(60, 20.0, 1).unwrap(),
        gen_fbzeta_quadratic(1.14, 40, 2).unwrap(),
        gen_appendix_e_quadratic(3).unwrap(),
        gen_random_spd(50, 4).unwrap(),
    ];
    for q in &problems {
        let oracle = dense_oracle(&q.dense_hessian());
        for (a, b) in oracle.iter().zip(q.eigenvalues().iter()) {
            assert!((a - b).abs() <= 1e-10 * q.lambda_max(), "{a} vs {b}");
        }
    }
}

#[test]
fn structured_hvp_matches_dense_product() {
    let probe = |n: usize, s: f64| Vector::from_fn(n, |i, _| ((i as f64 + 1.0) * s).sin());
    for q in [gen_spectrum_quadratic(150, 5.0, 0).unwrap(), gen_fbzeta_quadratic(1.16, 90, 0).unwrap()] {
        let v = probe(q.dim(), 0.37);
        let dense = q.dense_hessian() * &v;
        assert!((q.hvp(q.theta0(), &v) - &dense).norm() <= 1e-10 * dense.norm());
    }
    // Above the dense limit the operator is applied through the eigenbasis.
    let q = gen_spectrum_quadratic(260, 5.0, 0).unwrap();
    let v = probe(260, 0.11);
    let oracle = q.eigenvectors() * Matrix::from_diagonal(q.eigenvalues()) * q.eigenvectors().transpose() * &v;
    assert!((q.hvp(q.theta0(), &v) - &oracle).norm() <= 1e-10 * oracle.norm());
}

#[test]
fn fbzeta_rotation_changes_neither_spectrum_nor_start_value() {
    for b in [1.12, 1.16] {
        let qs: Vec<QuadraticProblem> = [0, 50, 90].iter().map(|&z| gen_fbzeta_quadratic(b, z, 7).unwrap()).collect();
        let f0 = qs[0].value(qs[0].theta0());
        for q in &qs[1..] {
            assert!((q.value(q.theta0()) - f0).abs() <= 1e-10 * f0.abs().max(1.0));
            assert!((q.eigenvalues() - qs[0].eigenvalues()).amax() <= 1e-10);
        }
    }
}

#[test]
fn small_logistic_derivatives_match_finite_differences() {
    let p = LogisticProblem::synthetic(10, 3, 5, 0.0).unwrap();
    for theta in [Vector::zeros(3), Vector::from_vec(vec![0.8, -1.1, 0.4])] {
        let r = check_derivatives(&p, &theta, 20, 1).unwrap();
        assert!(r.gradient_error <= 1e-6, "{r:?}");
        assert!(r.symmetry_error <= 1e-10 && r.linearity_error <= 1e-10, "{r:?}");
    }
}

#[test]
fn logistic_is_convex_along_random_lines() {
    let p = LogisticProblem::synthetic(300, 15, 2, 0.0).unwrap();
    for s in 0..10 {
        let a = Vector::from_fn(15, |i, _| ((i + s) as f64 * 0.9).sin());
        let b = Vector::from_fn(15, |i, _| ((i * s) as f64 * 0.3).cos());
        for t in [0.1, 0.5, 0.9] {
            let mid = p.value(&(&a * t + &b * (1.0 - t)));
            assert!(mid <= t * p.value(&a) + (1.0 - t) * p.value(&b) + 1e-12);
        }
        assert!(a.dot(&p.hvp(&b, &a)) >= -1e-12);
    }
}

#[test]
fn diagonal_hessian_spectrum_is_permuted_q_times_lambda() {
    let d = [0.3, 5.0, 1.2, 0.05, 2.5, 0.8, 3.7, 0.12];
    let q = QuadraticProblem::diagonal(&d, Vector::from_element(8, 1.0)).unwrap();
    let h = q.dense_hessian();
    let qd = Vector::from_vec(vec![0.7, 1.9, 0.4, 2.2, 1.1, 0.6, 1.5, 0.9]);
    let (k, l, alpha, eta) = (2, 1, 1.0, 0.05);
    let report = effective_preconditioner_diagonal(&h, &qd, k, l, alpha, eta).unwrap();
    // Each V̂ column is an axis; its index gives the permutation.
    let covered: Vec<usize> = report.v_hat.column_iter().map(|c| c.iamax()).collect();
    let mut want: Vec<f64> = vec![alpha; k + l];
    want.extend((0..8).filter(|i| !covered.contains(i)).map(|i| eta * qd[i] * d[i]));
    let want = sorted_desc(want);
    for (got, want) in report.effective_eigenvalues.iter().zip(&want) {
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn unit_q_reduces_to_identity_case(n in 8usize..40, seed in 0u64..500, k in 1usize..4, l in 0usize..3) {
        let q = gen_random_spd(n, seed).unwrap();
        let h = q.dense_hessian();
        let a = effective_preconditioner_identity(&h, k, l, 1.0, 0.02).unwrap();
        let b = effective_preconditioner_diagonal(&h, &Vector::from_element(n, 1.0), k, l, 1.0, 0.02).unwrap();
        prop_assert!((&a.p_inv - &b.p_inv).amax() <= 1e-10);
        prop_assert!((&a.effective_eigenvalues - &b.effective_eigenvalues).amax() <= 1e-10);
        prop_assert_eq!(a.case(), b.case());
    }

    #[test]
    fn quadratic_derivatives_pass_finite_difference_checks(seed in 0u64..500, n in 2usize..60) {
        let q = gen_random_spd(n, seed).unwrap();
        let theta = q.theta0() + Vector::from_element(n, 0.25);
        let r = check_derivatives(&q, &theta, 5, seed).unwrap();
        prop_assert!(r.passes(1e-5, 1e-10), "{:?}", r);
    }
}
