//! Reference answers without perturbation theory: the mixture model solved
//! directly, numerical inversion of its transform, and a simulator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::base_solver::{BaseSolution, RationalLST};
use crate::error::{Error, Result};
use crate::expmeasure::ExpPolyMeasure;
use crate::heavytail::{HeavyTail, SharedTail};
use crate::inversion::{invert_survival, EulerParams};
use crate::model::{stability_report, MarpModel};
use crate::par;
use crate::polyalg::{adj_column, cr, linsolve, C};
use crate::symbolic_kernel::Kernel;

pub const MAX_EPS: f64 = 0.2;
pub const NEWTON_MAX_ITER: usize = 50;

/// The mixture model with service LST (1−ε)G̃ₚ + εG̃_h, solved exactly.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub eps: f64,
    /// 0, then the refined positive roots in the order of the base roots.
    pub rho: Vec<C>,
    pub u: DVector<C>,
    pub uw: C,
    pub mean: f64,
    pub newton_iterations: Vec<usize>,
    kernel: Kernel,
    pt: RationalLST,
    ht: SharedTail,
    omega: DVector<C>,
}

impl ExactSolution {
    pub fn service_lst(&self, s: C) -> C {
        self.pt.eval(s) * (1.0 - self.eps) + self.ht.lst(s) * self.eps
    }

    fn service_lst_deriv(&self, s: C) -> C {
        self.pt.deriv(s) * (1.0 - self.eps) + self.ht.lst_deriv(s) * self.eps
    }

    pub fn e_matrix(&self, s: C) -> DMatrix<C> {
        self.kernel.e_matrix(s, self.service_lst(s))
    }

    /// Ŵ_ε(s) = s u E(s)⁻¹ ω for s off the roots.
    pub fn transform(&self, s: C) -> Result<C> {
        let x = linsolve(&self.e_matrix(s), &self.omega)?;
        Ok(s * (self.u.transpose() * x)[(0, 0)])
    }

    /// Probability of zero delay: the limit of Ŵ_ε at infinity.
    pub fn atom(&self) -> f64 {
        self.uw.re
    }

    pub fn survival(&self, t: f64, params: EulerParams) -> Result<f64> {
        if t == 0.0 {
            return Ok(1.0 - self.atom());
        }
        invert_survival(|s| self.transform(s).unwrap_or(C::new(f64::NAN, f64::NAN)), t, params)
    }

    pub fn survival_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        par::map_slice(grid, |&t| self.survival(t, EulerParams::default())).into_iter().collect()
    }
}

/// Newton on det E_ε with the step 1/tr(E⁻¹E′).
fn newton_root(sol: &ExactSolution, seed: C) -> Result<(C, usize)> {
    let n = sol.kernel.n();
    let edg = sol.kernel.e_dg();
    let mut s = seed;
    for it in 0..NEWTON_MAX_ITER {
        let e = sol.e_matrix(s);
        let de = DMatrix::<C>::identity(n, n) + &edg * sol.service_lst_deriv(s);
        let mut tr = cr(0.0);
        for j in 0..n {
            match linsolve(&e, &de.column(j).into_owned()) {
                Ok(x) => tr += x[j],
                Err(Error::Singular) => return Ok((s, it)),
                Err(e) => return Err(e),
            }
        }
        let step = 1.0 / tr;
        s -= step;
        if step.norm() <= 1e-14 * s.norm().max(1.0) {
            return Ok((s, it + 1));
        }
    }
    Err(Error::Roots(format!("Newton did not converge from {seed}")))
}

/// Solves the mixture model, seeding each positive root at ρ_k − ε·shift_k.
pub fn exact_solve(
    model: &MarpModel,
    base: &BaseSolution,
    ht: SharedTail,
    eps: f64,
    shift: Option<&[C]>,
) -> Result<ExactSolution> {
    if !(0.0..=MAX_EPS).contains(&eps) {
        return Err(Error::InvalidParameter(format!("ε = {eps} outside [0, {MAX_EPS}]")));
    }
    let mean = (1.0 - eps) * base.pt.mean + eps * ht.mean();
    let rep = stability_report(model, mean)?;
    if !rep.is_stable() {
        return Err(Error::Unstable { margin: rep.margin, load: rep.load });
    }
    let n = base.n;
    let omega = DVector::from_iterator(n, model.omega.iter().map(|&w| cr(w)));
    let mut sol = ExactSolution {
        eps,
        rho: vec![cr(0.0); n],
        u: DVector::zeros(n),
        uw: cr(0.0),
        mean,
        newton_iterations: vec![0; n],
        kernel: base.kernel.clone(),
        pt: base.pt.clone(),
        ht,
        omega,
    };
    let mut cols = vec![DVector::from_fn(n, |i, _| cr(1.0 / model.rates[i]))];
    for k in 1..n {
        let seed = base.rho[k] - eps * shift.map_or(cr(0.0), |d| d[k]);
        let (r, it) = newton_root(&sol, seed)?;
        if r.re <= 0.0 {
            return Err(Error::RootCount { expected: n, found: k });
        }
        if sol.rho[1..k].iter().any(|&x| (x - r).norm() < 1e-9 * r.norm().max(1.0)) {
            return Err(Error::Roots(format!("two seeds converged to {r}")));
        }
        sol.rho[k] = r;
        sol.newton_iterations[k] = it;
        cols.push(adj_column(&sol.e_matrix(r), base.columns[k]));
    }
    let a = DMatrix::from_columns(&cols);
    let mut c = DVector::zeros(n);
    c[0] = cr(rep.margin);
    sol.u = linsolve(&a.transpose(), &c)?;
    sol.uw = sol.u.dot(&sol.omega);
    Ok(sol)
}

/// Survival of a law from its LST by Euler inversion.
pub fn invert<F: Fn(C) -> C>(lst: F, t: f64) -> Result<f64> {
    invert_survival(lst, t, EulerParams::default())
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub n_customers: usize,
    pub seed: u64,
    pub batches: usize,
    /// Customers dropped before recording starts.
    pub warmup: usize,
}

impl SimConfig {
    pub fn new(n_customers: usize, seed: u64) -> Self {
        SimConfig { n_customers, seed, batches: 30, warmup: n_customers / 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub grid: Vec<f64>,
    pub survival: Vec<f64>,
    /// Standard error of each survival estimate from batch means.
    pub std_err: Vec<f64>,
    pub n_customers: usize,
}

impl SimResult {
    /// 95% half-widths.
    pub fn half_width(&self) -> Vec<f64> {
        self.std_err.iter().map(|s| 1.96 * s).collect()
    }
}

/// Draws from a law given by its survival function, by bracketing and bisection.
fn sample_by_survival<F: Fn(f64) -> f64>(surv: F, u: f64) -> f64 {
    if surv(0.0) <= u {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while surv(hi) > u {
        lo = hi;
        hi *= 4.0;
        if hi > 1e300 {
            return hi;
        }
    }
    for _ in 0..64 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if surv(mid) > u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
enum PhaseSampler {
    /// Atom at zero, then Erlang components (probability, shape, rate).
    Erlangs { atom: f64, parts: Vec<(f64, usize, f64)> },
    General(ExpPolyMeasure),
}

impl PhaseSampler {
    fn new(law: ExpPolyMeasure) -> Self {
        let mut parts = Vec::new();
        for t in &law.terms {
            let p = (t.coef / t.rate.powi(t.order as i32)).re;
            if t.rate.im != 0.0 || t.coef.im != 0.0 || p < 0.0 {
                return PhaseSampler::General(law);
            }
            parts.push((p, t.order, t.rate.re));
        }
        PhaseSampler::Erlangs { atom: law.atom.re, parts }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            PhaseSampler::Erlangs { atom, parts } => {
                let mut u: f64 = rng.gen::<f64>() - atom;
                if u < 0.0 {
                    return 0.0;
                }
                let mut pick = parts.last().copied();
                for &p in parts {
                    if u < p.0 {
                        pick = Some(p);
                        break;
                    }
                    u -= p.0;
                }
                let (_, shape, rate) = pick.expect("phase law has a component");
                let e = Exp::new(rate).expect("positive rate");
                (0..shape).map(|_| e.sample(rng)).sum()
            }
            PhaseSampler::General(law) => {
                let u: f64 = rng.gen();
                sample_by_survival(|t| law.survival(t), u)
            }
        }
    }
}

/// Lindley recursion over the embedded chain; every real arrival records its
/// delay and then adds a service time from the mixture.
pub fn simulate(
    model: &MarpModel,
    pt: &RationalLST,
    ht: &dyn HeavyTail,
    eps: f64,
    grid: &[f64],
    cfg: SimConfig,
) -> Result<SimResult> {
    simulate_stream(model, pt, ht, eps, grid, cfg, 0)
}

/// As `simulate`, on an independent ChaCha stream of the same seed.
pub fn simulate_stream(
    model: &MarpModel,
    pt: &RationalLST,
    ht: &dyn HeavyTail,
    eps: f64,
    grid: &[f64],
    cfg: SimConfig,
    stream: u64,
) -> Result<SimResult> {
    if cfg.n_customers < 10_000 {
        return Err(Error::InvalidParameter("simulation needs at least 10⁴ customers".into()));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("ε = {eps} outside [0, 1)")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("grid must be nondecreasing".into()));
    }
    let rep = stability_report(model, (1.0 - eps) * pt.mean + eps * ht.mean())?;
    if !rep.is_stable() {
        return Err(Error::Unstable { margin: rep.margin, load: rep.load });
    }
    let n = model.n_states;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let phase = PhaseSampler::new(pt.law()?);
    let clocks: Vec<Exp<f64>> = model.rates.iter().map(|&l| Exp::new(l).expect("positive rate")).collect();
    let cum: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            model.trans.row(i).iter().map(|&p| {
                acc += p;
                acc
            }).collect()
        })
        .collect();
    let mut state = {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        model.pi.iter().position(|&p| {
            acc += p;
            u < acc
        }).unwrap_or(n - 1)
    };
    let batches = cfg.batches.max(2);
    let per_batch = cfg.n_customers / batches;
    let total = per_batch * batches;
    let g = grid.len();
    // counts[b][k]: delays in batch b exceeding exactly k grid points
    let mut counts = vec![vec![0u64; g + 1]; batches];
    let mut v = 0.0f64;
    let mut seen = 0usize;
    let mut recorded = 0usize;
    while recorded < total {
        v = (v - clocks[state].sample(&mut rng)).max(0.0);
        let u: f64 = rng.gen();
        let next = cum[state].iter().position(|&c| u < c).unwrap_or(n - 1);
        let real = rng.gen::<f64>() < model.q_real[(state, next)];
        state = next;
        if !real {
            continue;
        }
        if seen >= cfg.warmup {
            let k = grid.partition_point(|&t| t < v);
            counts[recorded / per_batch][k] += 1;
            recorded += 1;
        }
        seen += 1;
        v += if rng.gen::<f64>() < eps {
            let u: f64 = rng.gen();
            sample_by_survival(|t| ht.service_survival(t), u)
        } else {
            phase.sample(&mut rng)
        };
    }
    let mut survival = vec![0.0; g];
    let mut std_err = vec![0.0; g];
    for k in 0..g {
        // delay > grid[k] iff more than k grid points lie below it
        let fr: Vec<f64> = counts
            .iter()
            .map(|c| c[k + 1..].iter().sum::<u64>() as f64 / per_batch as f64)
            .collect();
        let mean = fr.iter().sum::<f64>() / batches as f64;
        let var = fr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
        survival[k] = mean;
        std_err[k] = (var / batches as f64).sqrt();
    }
    Ok(SimResult { grid: grid.to_vec(), survival, std_err, n_customers: total })
}

/// Independent replications on separate streams of one seed, run in
/// parallel. Standard errors come from the spread of the replication means,
/// which stays honest when a single long excursion dominates one run.
pub fn simulate_replications(
    model: &MarpModel,
    pt: &RationalLST,
    ht: &dyn HeavyTail,
    eps: f64,
    grid: &[f64],
    cfg: SimConfig,
    replications: usize,
) -> Result<SimResult> {
    if replications < 2 {
        return Err(Error::InvalidParameter("need at least two replications".into()));
    }
    let per = SimConfig::new(cfg.n_customers / replications, cfg.seed);
    let runs: Vec<SimResult> = par::map_range(replications, |r| {
        simulate_stream(model, pt, ht, eps, grid, per, r as u64)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let reps = replications as f64;
    let mut survival = vec![0.0; grid.len()];
    let mut std_err = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        let mean = runs.iter().map(|r| r.survival[k]).sum::<f64>() / reps;
        let var = runs.iter().map(|r| (r.survival[k] - mean).powi(2)).sum::<f64>() / (reps - 1.0);
        survival[k] = mean;
        std_err[k] = (var / reps).sqrt();
    }
    let n_customers = runs.iter().map(|r| r.n_customers).sum();
    Ok(SimResult { grid: grid.to_vec(), survival, std_err, n_customers })
}
