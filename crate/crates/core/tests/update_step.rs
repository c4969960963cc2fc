//! Properties of the FOSI update on quadratics with exact or estimated
//! spectra.

use fosi::analysis::{identity_inverse_preconditioner, normalized_inverse_preconditioner, preconditioner_within_bounds};
use fosi::fosi::{optimize, run_base, Warmup};
use fosi::problems::{gen_random_spd, QuadraticProblem};
use fosi::spectral::EPS_DIV;
use fosi::{BaseOptimizer, Fosi, FosiConfig, Objective, SpectrumEstimate, StoppingRule, Vector};
use proptest::prelude::*;

fn exact_spectrum(q: &QuadraticProblem, k: usize, l: usize) -> SpectrumEstimate {
    let n = q.dim();
    let picks: Vec<usize> = (0..k).chain(n - l..n).collect();
    let lam = q.eigenvalues();
    let values = Vector::from_iterator(k + l, picks.iter().map(|&i| lam[i]));
    SpectrumEstimate::from_eigenpairs(values, q.eigenvectors().select_columns(&picks), k, l, lam[n - 1], lam[0])
}

fn base_of(kind: u8, q: &QuadraticProblem) -> BaseOptimizer {
    let lr = 1.0 / q.lambda_max();
    match kind {
        0 => BaseOptimizer::gd(lr),
        1 => BaseOptimizer::heavy_ball(lr / 2.0, 0.9),
        _ => BaseOptimizer::adam(0.01),
    }
}

fn off_span(spec: &SpectrumEstimate, x: &Vector) -> f64 {
    (x - spec.project(x)).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn branches_are_orthogonal_and_in_their_subspaces(
        n in 12usize..40,
        seed in 0u64..1000,
        kind in 0u8..3,
        k in 1usize..4,
        l in 0usize..3,
    ) {
        let q = gen_random_spd(n, seed).unwrap();
        let mut cfg = FosiConfig::new(k, l);
        cfg.seed = seed;
        let mut fosi = Fosi::new(cfg, base_of(kind, &q), n).unwrap();
        let mut theta = q.theta0().clone();
        for t in 0..6 {
            if t % 3 == 0 {
                fosi.refresh(&q, &theta, t).unwrap();
            }
            let g = q.gradient(&theta);
            let p = fosi.update_parts(&theta, &g).unwrap();
            let spec = fosi.spectrum().unwrap();
            prop_assert!(p.g1.dot(&p.g2).abs() <= 1e-8 * g.norm_squared());
            prop_assert!(p.d1.dot(&p.d2).abs() <= 1e-8 * p.d1.norm() * p.d2.norm() + 1e-300);
            prop_assert!(off_span(spec, &p.d1) <= 1e-10 * p.d1.norm());
            prop_assert!(spec.project(&p.d2).norm() <= 1e-10 * p.d2.norm().max(1e-300));
            prop_assert!((&p.d1 + &p.d2 + &theta - &p.theta).norm() <= 1e-14 * p.theta.norm().max(1.0));
            theta = p.theta;
        }
    }

    #[test]
    fn exact_newton_step_zeroes_projected_gradient(n in 12usize..60, seed in 0u64..1000, k in 1usize..6, kind in 0u8..3) {
        let q = gen_random_spd(n, seed).unwrap();
        let mut fosi = Fosi::new(FosiConfig::new(k, 0), base_of(kind, &q), n).unwrap();
        fosi.set_spectrum(exact_spectrum(&q, k, 0)).unwrap();
        let theta1 = fosi.update_step(q.theta0(), &q.gradient(q.theta0())).unwrap();
        let v = &fosi.spectrum().unwrap().vectors;
        prop_assert!(v.tr_mul(&q.gradient(&theta1)).norm() <= 1e-8);
    }

    #[test]
    fn warmup_beyond_budget_reproduces_base_bitwise(seed in 0u64..1000, kind in 0u8..3, iters in 1usize..40, extra in 0usize..5) {
        let q = gen_random_spd(20, seed).unwrap();
        let mut cfg = FosiConfig::new(3, 1);
        cfg.warmup = Warmup::Iterations(iters + extra);
        let stop = StoppingRule::iterations(iters);
        let a = optimize(&q, q.theta0(), &cfg, base_of(kind, &q), &stop).unwrap();
        let b = run_base(&q, q.theta0(), base_of(kind, &q), &stop).unwrap();
        prop_assert!(a.trace.same_numbers(&b.trace));
        prop_assert!(a.theta.iter().zip(b.theta.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.trace.ese_events.is_empty());
    }
}

#[test]
fn heavy_ball_momentum_splits_across_branches() {
    let q = gen_random_spd(30, 3).unwrap();
    let eta = 0.05;
    let mut cfg = FosiConfig::new(4, 2);
    cfg.clip = 1.0;
    let mut fosi = Fosi::new(cfg, BaseOptimizer::heavy_ball(eta, 0.9), 30).unwrap();
    fosi.set_spectrum(exact_spectrum(&q, 4, 2)).unwrap();
    assert_eq!(fosi.lr_effective(), eta);
    let mut theta = q.theta0().clone();
    for _ in 0..25 {
        let p = fosi.update_parts(&theta, &q.gradient(&theta)).unwrap();
        let spec = fosi.spectrum().unwrap();
        // The base buffer only ever saw g₂, so it reconstructs ḡ₂ = ḡ − ḡ₁.
        let g_bar_2 = -&p.d_base / eta;
        let gap = (spec.project(&p.g_bar) + g_bar_2 - &p.g_bar).norm();
        assert!(gap <= 1e-10 * p.g_bar.norm(), "gap {gap:e}");
        theta = p.theta;
    }
}

#[test]
fn gd_step_equals_identity_preconditioned_step() {
    for seed in 0..5 {
        let q = gen_random_spd(25, seed).unwrap();
        let (k, l, eta) = (3, 2, 0.07);
        let spec = exact_spectrum(&q, k, l);
        let p_inv = identity_inverse_preconditioner(&spec.vectors, &spec.values, 1.0, eta);
        let mut cfg = FosiConfig::new(k, l);
        cfg.clip = 1.0;
        let mut fosi = Fosi::new(cfg, BaseOptimizer::gd(eta), 25).unwrap();
        fosi.set_spectrum(spec).unwrap();
        let theta = q.theta0() + Vector::from_fn(25, |i, _| (i as f64).cos());
        let g = q.gradient(&theta);
        let got = fosi.update_step(&theta, &g).unwrap();
        let want = &theta - p_inv * &g;
        assert!((got - &want).amax() <= 1e-10 * want.amax().max(1.0));
    }
}

/// Along FOSI-Adam and FOSI-GD runs, the normalized inverse preconditioner
/// stays within `[1/z, 1/ε]` with `z` bounding both the Hessian and the
/// observed gradients.
#[test]
fn inverse_preconditioner_stays_bounded_along_runs() {
    for (seed, kind) in [(0u64, 0u8), (1, 2), (2, 2), (3, 1)] {
        let q = gen_random_spd(40, seed).unwrap();
        let mut cfg = FosiConfig::new(3, 1);
        cfg.interval = fosi::RefreshInterval::Fixed(10);
        cfg.seed = seed;
        let mut fosi = Fosi::new(cfg, base_of(kind, &q), 40).unwrap();
        let mut theta = q.theta0().clone();
        let mut g_max = 0.0f64;
        for t in 0..60 {
            if fosi.should_refresh(t) {
                fosi.refresh(&q, &theta, t).unwrap();
            }
            let g = q.gradient(&theta);
            g_max = g_max.max(g.amax());
            let q_diag = fosi.base().inverse_preconditioner_diag(&g).unwrap();
            let p_inv = normalized_inverse_preconditioner(fosi.spectrum().unwrap(), &q_diag);
            let z = q.lambda_max().max(g_max + 1e-8) * (1.0 + 1e-9);
            let (ok, lo, hi) = preconditioner_within_bounds(&p_inv, z, EPS_DIV).unwrap();
            assert!(ok, "seed {seed} t {t}: eigenvalues in [{lo:e}, {hi:e}], z = {z:e}");
            theta = fosi.update_step(&theta, &g).unwrap();
        }
    }
}
