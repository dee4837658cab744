//! Invariants checked over random inputs.

mod common;

use common::*;
use heavyq_core::base_solver::{solve_base, solve_base_with, BaseOptions, RationalLST};
use heavyq_core::correction::Analysis;
use heavyq_core::heavytail::{abate_whitt, AbateWhitt, HeavyTail, SharedTail};
use heavyq_core::perturbation::{perturb, Variant};
use heavyq_core::polyalg::{c, cr, linsolve, partial_fractions, poly_roots, Poly, RationalFn, RootSet, C};
use heavyq_core::symbolic_kernel::{xi_polys, Kernel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use std::sync::Arc;

fn cplx() -> impl Strategy<Value = C> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| c(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn partial_fractions_reconstruct(
        num in prop::collection::vec(cplx(), 1..=8),
        poles in prop::collection::vec((cplx(), 1usize..=2), 1..=4),
        points in prop::collection::vec(cplx(), 20),
    ) {
        // keep poles apart so the expansion is well conditioned
        let mut den: Vec<(C, usize)> = Vec::new();
        for (p, m) in poles {
            if den.iter().all(|(q, _)| (q - p).norm() > 0.3) {
                den.push((p, m));
            }
        }
        let den = RootSet::new(den);
        let mut num = num;
        num.truncate(den.degree() + 1);
        let f = RationalFn::new(Poly::new(num), den.clone());
        let pf = partial_fractions(&f).unwrap();
        for s in points {
            if den.roots.iter().any(|(r, _)| (s - r).norm() < 0.2) {
                continue;
            }
            let want = f.eval(s);
            prop_assert!((pf.eval(s) - want).norm() <= 1e-9 * want.norm().max(1.0));
        }
    }

    #[test]
    fn roots_of_a_product_are_recovered(roots in prop::collection::vec(cplx(), 1..=7)) {
        let mut distinct: Vec<C> = Vec::new();
        for r in roots {
            if distinct.iter().all(|q| (q - r).norm() > 0.2) {
                distinct.push(r);
            }
        }
        let p = Poly::from_roots(&RootSet::simple(&distinct));
        let found = poly_roots(&p, 1e-6).unwrap();
        prop_assert_eq!(found.degree(), distinct.len());
        for r in &distinct {
            prop_assert!(found.roots.iter().any(|(f, _)| (f - r).norm() < 1e-7));
        }
    }

    #[test]
    fn real_polynomials_have_conjugate_closed_roots(coeffs in prop::collection::vec(-5.0..5.0f64, 2..=8)) {
        let mut coeffs = coeffs;
        *coeffs.last_mut().unwrap() = 1.0;
        let found = poly_roots(&Poly::from_real(&coeffs), 1e-6).unwrap();
        for (r, m) in &found.roots {
            if r.im.abs() > 1e-8 {
                let partner = found.roots.iter().find(|(q, _)| (q - r.conj()).norm() < 1e-6);
                prop_assert!(partner.is_some_and(|(_, mq)| mq == m));
            }
        }
    }

    #[test]
    fn linsolve_residual_is_small(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let a = DMatrix::<C>::from_fn(n, n, |i, j| {
            c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)) + if i == j { cr(n as f64) } else { cr(0.0) }
        });
        let x = DVector::<C>::from_fn(n, |_, _| c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
        let b = &a * &x;
        let got = linsolve(&a, &b).unwrap();
        prop_assert!((&a * &got - &b).norm() <= 1e-12 * b.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn model_invariants(seed in any::<u64>(), n in 1usize..=5) {
        let m = random_model(&mut rng(seed), n);
        prop_assert!((m.pi.sum() - 1.0).abs() < 1e-12);
        prop_assert!(m.pi.iter().all(|&p| p > 0.0));
        let resid = (m.pi.transpose() * &m.trans - m.pi.transpose()).norm();
        prop_assert!(resid < 1e-12);
        for i in 0..n {
            prop_assert!((m.trans.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!((m.omega[i] - m.real_flow().row(i).sum() * m.rates[i]).abs() < 1e-12
                || m.omega[i] >= 0.0);
        }
        prop_assert!(m.real_fraction() > 0.0 && m.real_fraction() <= 1.0);
    }

    #[test]
    fn adjugate_identity(seed in any::<u64>(), n in 1usize..=5, s in cplx(), g in cplx()) {
        let m = random_model(&mut rng(seed), n);
        let k = Kernel::new(&m).unwrap();
        let det = k.det_e();
        let adj = k.adjoint();
        let e = k.e_matrix(s, g);
        let a = DMatrix::<C>::from_fn(n, n, |i, j| adj[i][j].eval(s, g));
        let resid = &a * &e - DMatrix::<C>::identity(n, n) * det.eval(s, g);
        prop_assert!(resid.norm() <= 1e-9 * a.norm() * e.norm());
    }

    #[test]
    fn base_solution_is_a_distribution(seed in any::<u64>(), n in 1usize..=4) {
        let (m, pt) = random_system(&mut rng(seed), n);
        let sol = solve_base(&m, &pt).unwrap();
        prop_assert!((sol.transform(cr(0.0)) - 1.0).norm() < 1e-8);
        prop_assert!(sol.orthogonality_residual() < 1e-8);
        let atom = sol.atom();
        prop_assert!(atom > 0.0 && atom < 1.0);
        let tmax = sol.horizon(1e-6);
        let mut prev = sol.survival(0.0);
        prop_assert!((prev - (1.0 - atom)).abs() < 1e-7, "S(0) = {prev}, 1 − atom = {}, Ŵ(0) = {}", 1.0 - atom, sol.transform(cr(0.0)));
        for i in 1..=40 {
            let v = sol.survival(tmax * i as f64 / 40.0);
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v));
            prop_assert!(v <= prev + 1e-9);
            prev = v;
        }
    }

    #[test]
    fn u_is_invariant_under_column_choice(seed in any::<u64>(), n in 2usize..=4) {
        let (m, pt) = random_system(&mut rng(seed), n);
        let a = solve_base(&m, &pt).unwrap();
        for col in 0..n {
            let opts = BaseOptions { column: Some(col), ..Default::default() };
            // a column can vanish at a root; the solver then reports it
            if let Ok(b) = solve_base_with(&m, &pt, opts) {
                prop_assert!((&a.u - &b.u).norm() <= 1e-7 * a.u.norm());
            }
        }
    }

    #[test]
    fn root_shift_formulas_agree(seed in any::<u64>(), n in 1usize..=4, kappa in 1.5..4.0f64) {
        let (m, pt) = random_system(&mut rng(seed), n);
        let sol = solve_base(&m, &pt).unwrap();
        let xi = xi_polys(&sol.kernel, &sol.det, &sol.adj, &pt, sol.r);
        let ht = AbateWhitt::new(kappa).unwrap();
        for v in [Variant::Replace, Variant::Discard] {
            let pd = perturb(&m, &sol, &xi, &ht, v).unwrap();
            prop_assert!(pd.delta_disagreement() <= 1e-7);
        }
    }
}

/// A phase-type law presented as the heavy tail.
#[derive(Debug)]
struct PhaseAsTail(RationalLST);

impl HeavyTail for PhaseAsTail {
    fn mean(&self) -> f64 {
        self.0.mean
    }
    fn excess_lst(&self, s: C) -> C {
        self.0.excess(s)
    }
    fn excess_survival(&self, t: f64) -> f64 {
        self.0.excess_law().unwrap().survival(t)
    }
    fn describe(&self) -> String {
        "phase".into()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn identical_laws_give_no_correction(seed in any::<u64>(), n in 1usize..=3) {
        let (m, pt) = random_system(&mut rng(seed), n);
        let ht: SharedTail = Arc::new(PhaseAsTail(pt.clone()));
        let a = Analysis::new(&m, &pt, ht).unwrap();
        prop_assert!(a.replace.z.norm() < 1e-10);
        let grid = [0.0, 0.5, 1.0, 2.0, 5.0];
        let out = a.approximate(0.05, &grid, Variant::Replace, false).unwrap();
        for v in out.theta1.iter().chain(out.theta2.as_ref().unwrap()) {
            prop_assert!(v.abs() < 1e-7);
        }
    }

    #[test]
    fn corrected_equals_base_at_zero_eps(seed in any::<u64>(), n in 1usize..=3) {
        let (m, pt) = random_system(&mut rng(seed), n);
        let a = Analysis::new(&m, &pt, abate_whitt(2.0).unwrap()).unwrap();
        let grid = [0.0, 0.3, 1.0, 4.0];
        for v in [Variant::Replace, Variant::Discard] {
            let out = a.approximate(0.0, &grid, v, false).unwrap();
            prop_assert_eq!(out.corrected.as_ref().unwrap(), &out.base);
        }
    }
}

/// Erlang-2 service with r = 4: eight roots of the cleared polynomial ring the
/// double service pole, and the expanded polynomial has coefficients near 1e9.
#[test]
fn root_ring_around_service_pole() {
    let (m, pt) = random_system(&mut rng(19), 4);
    let sol = solve_base(&m, &pt).unwrap();
    assert_eq!(sol.r, 4);
    assert!((sol.transform(cr(0.0)) - 1.0).norm() < 1e-10);
    let oracle = oracle_roots(&m, &pt, sol.r, 8.0);
    for (z, _) in &sol.den_roots.roots {
        assert!(oracle.iter().any(|w| (w - z).norm() < 1e-7 * z.norm()), "{z} not confirmed");
    }
}
