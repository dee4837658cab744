//! Models and generators shared by the integration tests.
#![allow(dead_code)]

use heavyq_core::base_solver::RationalLST;
use heavyq_core::model::{build_marp, build_mmpp, stability_report, MarpModel, MmppSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NU: f64 = 3.0;
pub const KAPPA: f64 = 2.0;
pub const EPS: f64 = 0.01;

pub fn erlang2(lam: f64) -> MarpModel {
    let d1 = DMatrix::from_row_slice(2, 2, &[-lam, lam, 0.0, -lam]);
    let d2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, lam, 0.0]);
    build_marp(d1, d2).unwrap()
}

pub fn poisson(lam: f64) -> MarpModel {
    build_marp(DMatrix::from_element(1, 1, -lam), DMatrix::from_element(1, 1, lam)).unwrap()
}

pub fn mmpp2() -> MarpModel {
    build_mmpp(&[10.0, 0.5], &MmppSpec::SelfProbs(vec![8.0 / 9.0, 3.0 / 100.0])).unwrap()
}

/// Five-state experiment; the last row of the printed matrix sums to 67/47,
/// and is read with a zero in column two.
pub fn mmpp5_trans() -> DMatrix<f64> {
    #[rustfmt::skip]
    let p = DMatrix::from_row_slice(5, 5, &[
        7.0 / 27.0, 5.0 / 27.0, 0.0, 0.0, 5.0 / 9.0,
        0.0, 1.0 / 29.0, 20.0 / 29.0, 8.0 / 29.0, 0.0,
        3.0 / 25.0, 2.0 / 5.0, 3.0 / 10.0, 9.0 / 50.0, 0.0,
        0.0, 0.0, 7.0 / 36.0, 5.0 / 18.0, 19.0 / 36.0,
        12.0 / 47.0, 0.0, 20.0 / 47.0, 5.0 / 47.0, 10.0 / 47.0,
    ]);
    p
}

pub fn mmpp5() -> MarpModel {
    build_mmpp(&[11.0, 11.0, 13.0, 10.0, 8.0], &MmppSpec::Full(mmpp5_trans())).unwrap()
}

pub fn exp_service() -> RationalLST {
    RationalLST::exponential(NU).unwrap()
}

/// Random irreducible MArP with `n` states; a ring of positive rates keeps
/// the embedded chain irreducible.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize) -> MarpModel {
    loop {
        let mut d1 = DMatrix::zeros(n, n);
        let mut d2 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if rng.gen::<f64>() < 0.6 {
                    d2[(i, j)] = rng.gen_range(0.1..3.0);
                }
                if i != j && rng.gen::<f64>() < 0.5 {
                    d1[(i, j)] = rng.gen_range(0.1..3.0);
                }
            }
            if n > 1 {
                let j = (i + 1) % n;
                d1[(i, j)] += rng.gen_range(0.2..2.0);
            } else {
                d2[(0, 0)] += 0.5;
            }
        }
        for i in 0..n {
            let out: f64 = (0..n).filter(|&k| k != i).map(|k| d1[(i, k)]).sum::<f64>() + d2.row(i).sum();
            d1[(i, i)] = -out;
        }
        if let Ok(m) = build_marp(d1, d2) {
            if m.real_fraction() > 0.05 {
                return m;
            }
        }
    }
}

/// Mean service time giving the requested load.
pub fn mean_for_load(m: &MarpModel, load: f64) -> f64 {
    let rep = stability_report(m, 1.0).unwrap();
    load / rep.load
}

/// Random exponential, Erlang or two-phase hyperexponential law with the given mean.
pub fn random_service(rng: &mut ChaCha8Rng, mean: f64) -> RationalLST {
    match rng.gen_range(0..3) {
        0 => RationalLST::exponential(1.0 / mean).unwrap(),
        1 => {
            let k = rng.gen_range(2..4);
            RationalLST::erlang(k, k as f64 / mean).unwrap()
        }
        _ => {
            // rates at least a factor 1.5 apart; nearly equal rates make q and p
            // nearly share a root, which the root finder cannot resolve
            let (p, r1, r2) = loop {
                let p = rng.gen_range(0.2..0.8);
                let r1 = rng.gen_range(1.0..4.0) / mean;
                let r2 = (1.0 - p) / (mean - p / r1);
                if r1 / r2 > 1.5 || r2 / r1 > 1.5 {
                    break (p, r1, r2);
                }
            };
            RationalLST::hyperexponential(&[p, 1.0 - p], &[r1, r2]).unwrap()
        }
    }
}

/// Random stable model with service: N states, load in [0.3, 0.85].
pub fn random_system(rng: &mut ChaCha8Rng, n: usize) -> (MarpModel, RationalLST) {
    let m = random_model(rng, n);
    let load = rng.gen_range(0.3..0.85);
    let mean = mean_for_load(&m, load);
    let pt = random_service(rng, mean);
    (m, pt)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Roots of p(s)^r det E(s, q/p), found without the library's polynomial
/// code: coefficients by DFT on a circle of radius `radius`, then the
/// eigenvalues of the real companion matrix.
pub fn oracle_roots(m: &MarpModel, pt: &RationalLST, r: usize, radius: f64) -> Vec<heavyq_core::polyalg::C> {
    use heavyq_core::polyalg::C;
    use heavyq_core::symbolic_kernel::Kernel;
    let kernel = Kernel::new(m).unwrap();
    let n = m.n_states;
    let deg = n + r * pt.order();
    let pts = 128usize;
    let f = |s: C| {
        let p = pt.p.eval(s);
        let e = kernel.e_matrix(s, pt.q.eval(s) / p);
        e.determinant() * p.powi(r as i32)
    };
    let samples: Vec<C> = (0..pts)
        .map(|j| f(C::from_polar(radius, 2.0 * std::f64::consts::PI * j as f64 / pts as f64)))
        .collect();
    let coeffs: Vec<f64> = (0..=deg)
        .map(|k| {
            let sum: C = samples
                .iter()
                .enumerate()
                .map(|(j, v)| v * C::from_polar(1.0, -2.0 * std::f64::consts::PI * (j * k) as f64 / pts as f64))
                .sum();
            (sum / pts as f64 / radius.powi(k as i32)).re
        })
        .collect();
    let lead = coeffs[deg];
    let comp = DMatrix::from_fn(deg, deg, |i, j| {
        if i == 0 {
            -coeffs[deg - 1 - j] / lead
        } else if j + 1 == i {
            1.0
        } else {
            0.0
        }
    });
    let mut roots: Vec<C> = comp.complex_eigenvalues().iter().copied().collect();
    roots.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap()));
    roots
}
