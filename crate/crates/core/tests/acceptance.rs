//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always visible; exits nonzero when a
//! gating criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use heavyq_core::base_solver::{solve_base, RationalLST};
use heavyq_core::correction::Analysis;
use heavyq_core::heavytail::{abate_whitt, closed_form_discrepancy, AbateWhitt, VERIFY_TIMES};
use heavyq_core::inversion::EulerParams;
use heavyq_core::model::stability_report;
use heavyq_core::oracle::{exact_solve, invert, simulate_replications, SimConfig};
use heavyq_core::perturbation::{perturb, Variant};
use heavyq_core::polyalg::{c, cr, Poly, C};
use heavyq_core::symbolic_kernel::{xi_polys, Kernel};
use nalgebra::DMatrix;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pk_reduction() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let lam = r.gen_range(0.1..2.0);
        let nu = lam / r.gen_range(0.1..0.95);
        let sol = match solve_base(&poisson(lam), &RationalLST::exponential(nu).unwrap()) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("λ={lam} ν={nu}: {e}")),
        };
        for i in 0..=200 {
            let t = i as f64 * 0.05;
            let want = lam / nu * (-(nu - lam) * t).exp();
            worst = worst.max((sol.survival(t) - want).abs());
        }
    }
    outcome(worst < 1e-8, format!("sup error {worst:.2e} over 40 random (λ, ν), limit 1e-8"))
}

fn running_example() -> Outcome {
    let lam = 1.0;
    let k = Kernel::new(&erlang2(lam)).unwrap();
    let det = k.det_e();
    let adj = k.adjoint();
    let sml = Poly::linear(cr(lam));
    let mut gap = 0.0f64;
    let mut diff = |a: &Poly, b: &Poly| gap = gap.max((a - b).norm_inf());
    diff(&det.coeff(0), &sml.pow(2));
    diff(&det.coeff(1), &Poly::constant(cr(-lam * lam)));
    diff(&adj[0][0].coeff(0), &sml);
    diff(&adj[1][1].coeff(0), &sml);
    diff(&adj[0][1].coeff(0), &Poly::constant(cr(-lam)));
    diff(&adj[1][0].coeff(0), &Poly::zero());
    diff(&adj[1][0].coeff(1), &Poly::constant(cr(-lam)));
    let degrees_ok = det.g_degree() == 1
        && adj[0][0].g_degree() == 0
        && adj[0][1].g_degree() == 0
        && adj[1][1].g_degree() == 0
        && adj[1][0].g_degree() == 1;

    let eb = 1.0 / 3.0;
    let sol = solve_base(&erlang2(lam), &RationalLST::exponential(3.0).unwrap()).unwrap();
    let rho2 = sol.rho[1];
    let f = 1.0 - lam * eb / 2.0;
    let u_gap = (sol.u[0] - (1.0 - lam / rho2) * f).norm().max((sol.u[1] - lam / rho2 * f).norm());
    let rho_gap = (rho2 - (-1.0 + 21f64.sqrt()) / 2.0).norm();
    let worst = gap.max(u_gap).max(rho_gap);
    outcome(
        degrees_ok && worst < 1e-12,
        format!("coefficient gap {gap:.1e}, u gap {u_gap:.1e}, ρ₂ = {:.6} (gap {rho_gap:.1e}), limit 1e-12", rho2.re),
    )
}

fn loads() -> Outcome {
    // load of the mixture at ε = 0.01
    let mean = (1.0 - EPS) / NU + EPS / KAPPA;
    let l2 = stability_report(&mmpp2(), mean).unwrap().load;
    let l5 = stability_report(&mmpp5(), mean).unwrap().load;
    let pass = (l2 - 0.908336).abs() <= 1e-5 && (l5 - 0.812845).abs() <= 1e-5;
    outcome(pass, format!("MMPP(2) {l2:.7} (want 0.908336), MMPP(5) {l5:.7} (want 0.812845), tol 1e-5"))
}

fn analysis(m: &heavyq_core::model::MarpModel) -> Analysis {
    Analysis::new(m, &exp_service(), abate_whitt(KAPPA).unwrap()).unwrap()
}

fn gap_bounds() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m, lim_r, lim_d) in [("MMPP(2)", mmpp2(), 0.0015, 0.0070), ("MMPP(5)", mmpp5(), 0.0010, 0.0025)] {
        let a = analysis(&m);
        let grid = a.default_grid();
        for (v, lim) in [(Variant::Replace, lim_r), (Variant::Discard, lim_d)] {
            let g = a.approximate(EPS, &grid, v, false).unwrap().simplification_gap().unwrap();
            pass &= g <= lim;
            parts.push(format!("{name} {} {g:.5} ≤ {lim}", v.name()));
        }
    }
    outcome(pass, parts.join(", "))
}

/// Grid points where the replace base survival lies in [1e−5, 1e−2].
fn tail_grid(a: &Analysis) -> Vec<f64> {
    let lo = a.base.horizon(1e-2);
    let hi = a.base.horizon(1e-5);
    (0..40).map(|i| lo * (hi / lo).powf(i as f64 / 39.0)).collect()
}

fn tail_errors() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m, lim) in [("MMPP(2)", mmpp2(), 0.12), ("MMPP(5)", mmpp5(), 0.09)] {
        let a = analysis(&m);
        let grid = tail_grid(&a);
        let exact = exact_solve(&m, &a.base, a.ht.clone(), EPS, None).unwrap().survival_grid(&grid).unwrap();
        let rel = |approx: &[f64]| {
            approx.iter().zip(&exact).map(|(x, e)| ((x - e) / e).abs()).fold(0.0, f64::max)
        };
        for v in [Variant::Replace, Variant::Discard] {
            let out = a.approximate(EPS, &grid, v, false).unwrap();
            let (rc, rs) = (rel(out.corrected.as_ref().unwrap()), rel(&out.simplified));
            pass &= rc < lim && rs < lim;
            parts.push(format!("{name} {} {:.1}%/{:.1}%", v.name(), 100.0 * rc, 100.0 * rs));
        }
    }
    outcome(pass, format!("corrected/simplified: {} (limits 12%, 9%)", parts.join(", ")))
}

fn dual_delta() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for i in 0..30 {
        let n = r.gen_range(1..=4);
        let (m, pt) = random_system(&mut r, n);
        let ht = AbateWhitt::new(r.gen_range(1.5..4.0)).unwrap();
        let res = solve_base(&m, &pt).and_then(|sol| {
            let xi = xi_polys(&sol.kernel, &sol.det, &sol.adj, &pt, sol.r);
            perturb(&m, &sol, &xi, &ht, Variant::Replace)
        });
        match res {
            Ok(pd) => worst = worst.max(pd.delta_disagreement()),
            Err(e) => failures.push(format!("model {i} (N={n}): {e}")),
        }
    }
    outcome(
        failures.is_empty() && worst <= 1e-7,
        format!("worst relative disagreement {worst:.1e} over 30 models, limit 1e-7; {} failures {failures:?}", failures.len()),
    )
}

fn scaling() -> Outcome {
    let m = mmpp2();
    let a = analysis(&m);
    let grid = a.default_grid();
    let mut sups = Vec::new();
    for eps in [0.02, 0.01, 0.005] {
        let exact = exact_solve(&m, &a.base, a.ht.clone(), eps, None).unwrap().survival_grid(&grid).unwrap();
        let out = a.approximate(eps, &grid, Variant::Replace, false).unwrap();
        let corr = out.corrected.unwrap();
        // (exact − base)/ε − Θ = (exact − corrected)/ε
        let sup = exact.iter().zip(&corr).map(|(e, x)| (e - x).abs() / eps).fold(0.0, f64::max);
        sups.push(sup);
    }
    let ratios: Vec<f64> = sups.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|&q| (1.4..=3.5).contains(&q));
    outcome(pass, format!("sups {sups:.4?}, ratios {ratios:.3?}, allowed [1.4, 3.5]"))
}

fn adjoint_identity() -> Outcome {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let n = r.gen_range(1..=5);
        let m = random_model(&mut r, n);
        let k = Kernel::new(&m).unwrap();
        let det = k.det_e();
        let adj = k.adjoint();
        for _ in 0..5 {
            let s = c(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
            let g = c(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let e = k.e_matrix(s, g);
            let a = DMatrix::<C>::from_fn(n, n, |i, j| adj[i][j].eval(s, g));
            let resid = &a * &e - DMatrix::<C>::identity(n, n) * det.eval(s, g);
            worst = worst.max(resid.norm() / (a.norm() * e.norm()));
        }
    }
    outcome(worst <= 1e-9, format!("worst relative residual {worst:.1e} over 30 models × 5 points, limit 1e-9"))
}

fn inversion_self_test() -> Outcome {
    let mut worst = 0.0f64;
    for &t in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
        let e = invert(|s| cr(2.0) / (s + 2.0), t).unwrap();
        worst = worst.max((e - (-2.0 * t).exp()).abs());
        // M/M/1, λ = 1, ν = 3
        let w = invert(|s| s * (2.0 / 3.0) / (s - 1.0 + 3.0 / (s + 3.0)), t).unwrap();
        worst = worst.max((w - (-2.0 * t).exp() / 3.0).abs());
    }
    let aw = AbateWhitt::new(KAPPA).unwrap();
    let tail_gap = closed_form_discrepancy(&aw, &VERIFY_TIMES, EulerParams::default()).unwrap();
    outcome(
        worst < 1e-8 && tail_gap < 1e-7,
        format!("closed forms {worst:.1e} (limit 1e-8), heavy-tail excess {tail_gap:.1e} (limit 1e-7)"),
    )
}

fn monte_carlo() -> Outcome {
    let m = mmpp2();
    let a = analysis(&m);
    let hi = a.base.horizon(1e-3);
    let grid: Vec<f64> = (1..=10).map(|i| hi * i as f64 / 11.0).collect();
    let corr = a.approximate(EPS, &grid, Variant::Replace, false).unwrap().corrected.unwrap();
    // 10⁷ customers split over 20 independent replications
    let cfg = SimConfig::new(10_000_000, 2024);
    let sim = simulate_replications(&m, &a.pt, a.ht.as_ref(), EPS, &grid, cfg, 20).unwrap();
    let exact = exact_solve(&m, &a.base, a.ht.clone(), EPS, None).unwrap().survival_grid(&grid).unwrap();
    let sigmas = |model: &[f64]| {
        (0..grid.len()).map(|i| (sim.survival[i] - model[i]).abs() / sim.std_err[i]).fold(0.0, f64::max)
    };
    let (wc, we) = (sigmas(&corr), sigmas(&exact));
    outcome(
        wc <= 3.0,
        format!("largest |empirical − corrected| = {wc:.2}σ at 10 points (limit 3σ); against the exact oracle {we:.2}σ"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration, bool); 10] = [
        ("1 Pollaczek-Khinchine reduction", pk_reduction, Duration::from_secs(1), true),
        ("2 running-example closed forms", running_example, Duration::from_secs(1), true),
        ("3 loads", loads, Duration::from_secs(1), true),
        ("4 corrected vs simplified gaps", gap_bounds, Duration::from_secs(300), true),
        ("5 tail relative errors", tail_errors, Duration::from_secs(600), true),
        ("6 dual δ consistency", dual_delta, Duration::from_secs(120), true),
        ("7 first-order scaling", scaling, Duration::from_secs(600), true),
        ("8 adjoint identity", adjoint_identity, Duration::from_secs(60), true),
        ("9 inversion self-test", inversion_self_test, Duration::from_secs(30), true),
        ("10 Monte Carlo end-to-end", monte_carlo, Duration::from_secs(900), false),
    ];
    let mut failed = 0;
    for (name, run, budget, gating) in criteria {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        let tag = match (pass, gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (informative)",
        };
        println!("criterion {name}: {tag} [{:.2}s / {}s] {}", took.as_secs_f64(), budget.as_secs(), out.detail);
        if !pass && gating {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
