//! Delay law of the queue with phase-type service: roots of det E, the unknown
//! vector u, cancellation of the common factors and the time-domain law.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expmeasure::ExpPolyMeasure;
use crate::model::{stability_report, MarpModel};
use crate::polyalg::{
    adj_column, adj_column_directional, cr, linsolve, poly_roots_with, Poly, RationalFn, RootSet, C,
    DEFAULT_CLUSTER_TOL,
};
use crate::precision::Precision;
use crate::symbolic_kernel::{GPoly, Kernel};

/// Tolerance for matching roots of det E against numerator roots.
pub const CANCEL_TOL: f64 = 1e-6;
/// Numerator and denominator roots closer than this are treated as one.
pub const SNAP_TOL: f64 = 1e-9;
/// Allowed |Ŵ(0) − 1| in the factored transform.
pub const NORMALIZATION_TOL: f64 = 1e-6;
/// Roots with real part above this count as nonnegative.
pub const NONNEG_TOL: f64 = -1e-9;
/// Relative size below which g-coefficients are treated as rounding noise.
const GPOLY_NOISE: f64 = 1e-13;

/// Service LST q(s)/p(s) with p monic and real coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalLST {
    pub q: Poly,
    pub p: Poly,
    pub mean: f64,
    /// Roots of p.
    pub poles: RootSet,
}

impl RationalLST {
    pub fn new(q: Poly, p: Poly) -> Result<Self> {
        let dp = p
            .degree()
            .filter(|&d| d >= 1)
            .ok_or_else(|| Error::InvalidParameter("service denominator must have degree ≥ 1".into()))?;
        if q.degree().map_or(true, |d| d > dp) {
            return Err(Error::InvalidParameter("service numerator degree exceeds denominator degree".into()));
        }
        if !q.is_real(1e-14) || !p.is_real(1e-14) {
            return Err(Error::InvalidParameter("service transform must have real coefficients".into()));
        }
        let lead = p.leading();
        let (q, p) = (q.scale(1.0 / lead), p.scale(1.0 / lead));
        let (q0, p0) = (q.coeff(0).re, p.coeff(0).re);
        if p0 == 0.0 || ((q0 / p0) - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("service LST at 0 is {}, expected 1", q0 / p0)));
        }
        let poles = poly_roots_with(&p, DEFAULT_CLUSTER_TOL, Precision::from_env())?;
        if let Some(&(r, _)) = poles.roots.iter().find(|(r, _)| r.re >= 0.0) {
            return Err(Error::InvalidParameter(format!("service pole {r} is not in the left half-plane")));
        }
        let (q1, p1) = (q.coeff(1).re, p.coeff(1).re);
        let mean = -(q1 * p0 - q0 * p1) / (p0 * p0);
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::InvalidParameter(format!("service mean {mean} must be positive")));
        }
        Ok(RationalLST { q, p, mean, poles })
    }

    pub fn from_coeffs(q: &[f64], p: &[f64]) -> Result<Self> {
        RationalLST::new(Poly::from_real(q), Poly::from_real(p))
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        RationalLST::erlang(1, rate)
    }

    pub fn erlang(shape: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || shape == 0 {
            return Err(Error::InvalidParameter(format!("erlang({shape}, {rate}) is not a valid law")));
        }
        let p = Poly::linear(cr(-rate)).pow(shape);
        RationalLST::new(Poly::constant(cr(rate.powi(shape as i32))), p)
    }

    pub fn hyperexponential(probs: &[f64], rates: &[f64]) -> Result<Self> {
        if probs.len() != rates.len() || probs.is_empty() {
            return Err(Error::InvalidParameter("hyperexponential needs matching probabilities and rates".into()));
        }
        if probs.iter().any(|&x| x < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter("hyperexponential probabilities must sum to 1".into()));
        }
        if rates.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidParameter("hyperexponential rates must be positive".into()));
        }
        let p = rates.iter().fold(Poly::one(), |acc, &r| &acc * &Poly::linear(cr(-r)));
        let mut q = Poly::zero();
        for (i, (&w, &r)) in probs.iter().zip(rates).enumerate() {
            let rest = rates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(Poly::one(), |acc, (_, &x)| &acc * &Poly::linear(cr(-x)));
            q = &q + &rest.scale(cr(w * r));
        }
        RationalLST::new(q, p)
    }

    /// Degree of p.
    pub fn order(&self) -> usize {
        self.p.deg()
    }

    pub fn eval(&self, s: C) -> C {
        self.q.eval(s) / self.p.eval(s)
    }

    pub fn deriv(&self, s: C) -> C {
        let (q, dq) = self.q.eval_with_deriv(s);
        let (p, dp) = self.p.eval_with_deriv(s);
        (dq * p - q * dp) / (p * p)
    }

    /// Probability mass at zero.
    pub fn atom(&self) -> f64 {
        if self.q.deg() == self.p.deg() {
            self.q.leading().re
        } else {
            0.0
        }
    }

    /// Stationary-excess transform (p − q)/(μ s p) as a rational function.
    pub fn excess_rational(&self) -> RationalFn {
        let diff = &self.p - &self.q;
        let shifted = Poly::new(diff.coeffs.iter().skip(1).copied().collect());
        RationalFn::new(shifted.scale(cr(1.0 / self.mean)), self.poles.clone())
    }

    pub fn excess(&self, s: C) -> C {
        self.excess_rational().eval(s)
    }

    /// Service law with an extra atom of size ε at zero: (1−ε)q/p + ε.
    pub fn with_atom(&self, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidParameter(format!("atom size {eps} outside [0, 1)")));
        }
        let q = &self.q.scale(cr(1.0 - eps)) + &self.p.scale(cr(eps));
        Ok(RationalLST { q, p: self.p.clone(), mean: (1.0 - eps) * self.mean, poles: self.poles.clone() })
    }

    pub fn law(&self) -> Result<ExpPolyMeasure> {
        ExpPolyMeasure::from_rational(&RationalFn::new(self.q.clone(), self.poles.clone()))
    }

    pub fn excess_law(&self) -> Result<ExpPolyMeasure> {
        ExpPolyMeasure::from_rational(&self.excess_rational())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BaseOptions {
    /// Forces the adjugate column used for every eigenvector.
    pub column: Option<usize>,
    pub cluster_tol: f64,
    pub precision: Precision,
}

impl Default for BaseOptions {
    fn default() -> Self {
        BaseOptions { column: None, cluster_tol: DEFAULT_CLUSTER_TOL, precision: Precision::from_env() }
    }
}

#[derive(Debug, Clone)]
pub struct BaseSolution {
    pub n: usize,
    pub kernel: Kernel,
    pub pt: RationalLST,
    pub det: GPoly,
    pub adj: Vec<Vec<GPoly>>,
    /// Power of p that clears det E and every adjugate entry.
    pub r: usize,
    /// p^r · det E.
    pub den_poly: Poly,
    /// Roots of p^r det E in the open left half-plane.
    pub den_roots: RootSet,
    /// ρ₁ = 0, then the roots with positive real part.
    pub rho: Vec<C>,
    /// Adjugate column used for each root (entry 0 unused).
    pub columns: Vec<usize>,
    /// Columns of the matrix A: Λ⁻¹1 then a₂..a_N.
    pub a_vecs: Vec<DVector<C>>,
    /// d/ds of a₂..a_N at their roots (entry 0 is zero).
    pub a_prime: Vec<DVector<C>>,
    pub u: DVector<C>,
    pub uw: C,
    /// Σ_i ω_i Σ_l u_l Adj_{l,i}.
    pub weighted_adj: GPoly,
    /// p^r · weighted_adj; equals uω Π(s−ρ_k) Π(s+ŝ_j).
    pub a0: Poly,
    /// Roots of `a0` other than the ρ_k.
    pub num_roots: RootSet,
    pub w_hat: RationalFn,
    pub w_law: ExpPolyMeasure,
    pub margin: f64,
    pub load: f64,
}

/// Smallest r such that p^r clears det E and the whole adjugate.
pub fn clearing_power(det: &GPoly, adj: &[Vec<GPoly>]) -> usize {
    adj.iter().flatten().map(|g| g.g_degree()).fold(det.g_degree(), usize::max).max(1)
}

/// p^r · det E(q/p); monic of degree N + rM.
pub fn clear_denominator(det: &GPoly, pt: &RationalLST, r: usize) -> Poly {
    det.clear(&pt.q, &pt.p, r)
}

/// Adds `extra` to `base`, merging roots within the relative tolerance; the
/// merged root takes the value from `extra`, which is exact.
fn merge_roots(base: &mut RootSet, extra: &RootSet, tol: f64) {
    for &(r, m) in &extra.roots {
        match base.roots.iter_mut().find(|(x, _)| (*x - r).norm() <= tol * r.norm().max(1.0)) {
            Some(slot) => {
                slot.0 = r;
                slot.1 += m;
            }
            None => base.roots.push((r, m)),
        }
    }
}

fn p_power_roots(pt: &RationalLST, k: usize) -> RootSet {
    RootSet::new(pt.poles.roots.iter().map(|&(r, m)| (r, m * k)).collect())
}

/// Aberth–Ehrlich refinement of the roots of P = p^d · g(s, G̃(s)). The
/// logarithmic derivative d p′/p + F′/F is taken from the unexpanded form,
/// which keeps its digits when p^d has large coefficients. Clusters are split
/// first and re-merged only when they stay within rounding of each other.
fn refine_roots(g: &GPoly, pt: &RationalLST, d: usize, roots: &mut RootSet) {
    let f = |z: C| g.eval(z, pt.eval(z));
    let p0 = pt.p.coeff(0).norm().max(1.0);
    let mut zs: Vec<C> = Vec::with_capacity(roots.degree());
    let mut origin: Vec<usize> = Vec::new();
    for (k, &(z, m)) in roots.roots.iter().enumerate() {
        for j in 0..m {
            // spread a cluster on a small circle so Aberth can separate it
            let spread = if m > 1 { 1e-4 * z.norm().max(1.0) } else { 0.0 };
            let ang = 2.0 * std::f64::consts::PI * (j as f64 + 0.25) / m as f64;
            zs.push(z + C::from_polar(spread, ang));
            origin.push(k);
        }
    }
    let score = |zs: &[C]| zs.iter().map(|&z| f(z).norm().max(1e-300).ln()).sum::<f64>();
    let start = zs.clone();
    let n = zs.len();
    for _ in 0..60 {
        let mut moved = 0.0f64;
        let mut next = zs.clone();
        for i in 0..n {
            let z = zs[i];
            let pz = pt.p.eval(z);
            if pz.norm() < 1e-10 * p0 {
                continue;
            }
            let fz = f(z);
            if fz.norm() == 0.0 {
                continue;
            }
            let gz = pt.eval(z);
            let fd = g.eval_ds(z, gz) + g.eval_dg(z, gz) * pt.deriv(z);
            let logd = pt.p.derivative().eval(z) / pz * d as f64 + fd / fz;
            let rep: C = (0..n).filter(|&j| j != i && zs[j] != z).map(|j| 1.0 / (z - zs[j])).sum();
            let w = 1.0 / (logd - rep);
            if !(w.re.is_finite() && w.im.is_finite()) {
                return;
            }
            next[i] = z - w;
            moved = moved.max(w.norm() / z.norm().max(1.0));
        }
        zs = next;
        if moved <= 4.0 * f64::EPSILON {
            break;
        }
    }
    if !(score(&zs) <= score(&start)) {
        return;
    }
    // restore exact conjugate symmetry and real roots
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        let z = zs[i];
        if z.im.abs() <= 1e-12 * z.norm().max(1.0) {
            zs[i] = C::new(z.re, 0.0);
            continue;
        }
        let partner = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (zs[a] - z.conj()).norm().partial_cmp(&(zs[b] - z.conj()).norm()).unwrap());
        if let Some(j) = partner {
            if (zs[j] - z.conj()).norm() <= 1e-6 * z.norm().max(1.0) {
                used[j] = true;
                let avg = (z + zs[j].conj()) * 0.5;
                zs[i] = avg;
                zs[j] = avg.conj();
            }
        }
    }
    // a cluster that did not separate beyond rounding stays multiple
    let mut out: Vec<(C, usize)> = Vec::new();
    for (k, &(z, m)) in roots.roots.iter().enumerate() {
        let members: Vec<C> = (0..n).filter(|&i| origin[i] == k).map(|i| zs[i]).collect();
        let spread = members.iter().map(|&w| (w - z).norm()).fold(0.0, f64::max);
        if m > 1 && spread <= 1e-6 * z.norm().max(1.0) {
            out.push((z, m));
        } else {
            out.extend(members.into_iter().map(|w| (w, 1)));
        }
    }
    roots.roots = out;
}

/// Roots of the cleared polynomial of `g`, using the exact p-power factor
/// when the g-degree is below r.
fn cleared_roots(g: &GPoly, pt: &RationalLST, r: usize, opts: &BaseOptions) -> Result<(Poly, RootSet)> {
    let d = g.g_degree();
    let reduced = g.clear(&pt.q, &pt.p, d);
    let mut roots = if reduced.deg() >= 1 {
        poly_roots_with(&reduced, opts.cluster_tol, opts.precision)?
    } else {
        RootSet::default()
    };
    refine_roots(g, pt, d, &mut roots);
    if r > d {
        merge_roots(&mut roots, &p_power_roots(pt, r - d), opts.cluster_tol);
    }
    Ok((reduced, roots))
}

pub fn solve_base(model: &MarpModel, pt: &RationalLST) -> Result<BaseSolution> {
    solve_base_with(model, pt, BaseOptions::default())
}

pub fn solve_base_with(model: &MarpModel, pt: &RationalLST, opts: BaseOptions) -> Result<BaseSolution> {
    let n = model.n_states;
    let report = stability_report(model, pt.mean)?;
    if !report.is_stable() {
        return Err(Error::Unstable { margin: report.margin, load: report.load });
    }
    let kernel = Kernel::new(model)?;
    let det = kernel.det_e().cleaned(GPOLY_NOISE);
    let adj: Vec<Vec<GPoly>> =
        kernel.adjoint().into_iter().map(|row| row.into_iter().map(|g| g.cleaned(GPOLY_NOISE)).collect()).collect();
    let r = clearing_power(&det, &adj);
    let den_poly = clear_denominator(&det, pt, r);
    let (_, den_all) = cleared_roots(&det, pt, r, &opts)?;
    if den_all.degree() != n + r * pt.order() {
        return Err(Error::Roots(format!(
            "det E cleared has {} roots, expected {}",
            den_all.degree(),
            n + r * pt.order()
        )));
    }

    let mut nonneg: Vec<(C, usize)> = Vec::new();
    let mut den_roots = RootSet::default();
    for &(z, m) in &den_all.roots {
        if z.re >= NONNEG_TOL {
            nonneg.push((z, m));
        } else {
            den_roots.roots.push((z, m));
        }
    }
    let count: usize = nonneg.iter().map(|&(_, m)| m).sum();
    if count != n {
        return Err(Error::RootCount { expected: n, found: count });
    }
    if let Some(&(z, _)) = nonneg.iter().find(|&&(_, m)| m > 1) {
        return Err(Error::RepeatedRoot(format!("{z}")));
    }
    nonneg.sort_by(|a, b| a.0.norm().partial_cmp(&b.0.norm()).unwrap_or(std::cmp::Ordering::Equal));
    let mut rho: Vec<C> = nonneg.iter().map(|&(z, _)| z).collect();
    rho[0] = cr(0.0);
    rho[1..].sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
    });

    // eigenvectors from adjugate columns
    let lam_inv = DVector::from_fn(n, |i, _| cr(1.0 / model.rates[i]));
    let mut a_vecs = vec![lam_inv];
    let mut a_prime = vec![DVector::zeros(n)];
    let mut columns = vec![0usize];
    let edg = kernel.e_dg();
    for &z in &rho[1..] {
        let e = kernel.e_matrix(z, pt.eval(z));
        let m = match opts.column {
            Some(m) if m < n => m,
            Some(m) => return Err(Error::Dimension(format!("column {m} out of range"))),
            None => (0..n)
                .map(|m| (m, adj_column(&e, m).norm()))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|x| x.0)
                .unwrap_or(0),
        };
        let col = adj_column(&e, m);
        if col.norm() < 1e-300 {
            return Err(Error::Singular);
        }
        let de = DMatrix::<C>::identity(n, n) + &edg * pt.deriv(z);
        a_prime.push(adj_column_directional(&e, &de, m));
        a_vecs.push(col);
        columns.push(m);
    }
    let a_mat = DMatrix::from_columns(&a_vecs);
    let mut rhs = DVector::zeros(n);
    rhs[0] = cr(report.margin);
    let u = linsolve(&a_mat.transpose(), &rhs)?;
    let omega: Vec<C> = model.omega.iter().map(|&w| cr(w)).collect();
    let uw: C = u.iter().zip(&omega).map(|(a, b)| a * b).sum();

    // numerator s · Σ_i ω_i Σ_l u_l Adj_{l,i}, cleared
    let mut weighted_adj = GPoly::zero();
    for i in 0..n {
        for l in 0..n {
            weighted_adj = weighted_adj.add(&adj[l][i].scale(u[l] * omega[i]));
        }
    }
    let weighted_adj = weighted_adj.cleaned(GPOLY_NOISE);
    let a0 = weighted_adj.clear(&pt.q, &pt.p, r);
    let (_, mut a0_roots) = cleared_roots(&weighted_adj, pt, r, &opts)?;
    for &z in &rho[1..] {
        let tol = CANCEL_TOL * z.norm().max(1.0);
        let pos = a0_roots
            .roots
            .iter()
            .enumerate()
            .filter(|(_, (x, _))| (*x - z).norm() <= tol)
            .min_by(|a, b| (a.1 .0 - z).norm().partial_cmp(&(b.1 .0 - z).norm()).unwrap())
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Cancellation(format!("root {z} of det E not found in the numerator")))?;
        a0_roots.roots[pos].1 -= 1;
        if a0_roots.roots[pos].1 == 0 {
            a0_roots.roots.remove(pos);
        }
    }
    // share root values with the denominator so later products see equal rates
    let mut num_roots = a0_roots;
    for slot in num_roots.roots.iter_mut() {
        if let Some(&(d, _)) =
            den_roots.roots.iter().find(|(d, _)| (*d - slot.0).norm() <= SNAP_TOL * d.norm().max(1.0))
        {
            slot.0 = d;
        }
    }

    let (num_red, den_red) = cancel_common(&num_roots, &den_roots, SNAP_TOL);
    let w_hat = RationalFn::new(Poly::from_roots(&num_red).scale(uw), den_red);
    let w_law = ExpPolyMeasure::from_rational(&w_hat)?;
    let total = w_hat.eval(cr(0.0));
    if (total - 1.0).norm() > NORMALIZATION_TOL {
        return Err(Error::Consistency(format!("delay transform at 0 is {total:.3e}, roots are too ill-conditioned")));
    }

    Ok(BaseSolution {
        n,
        kernel,
        pt: pt.clone(),
        det,
        adj,
        r,
        den_poly,
        den_roots,
        rho,
        columns,
        a_vecs,
        a_prime,
        u,
        uw,
        weighted_adj,
        a0,
        num_roots,
        w_hat,
        w_law,
        margin: report.margin,
        load: report.load,
    })
}

/// Removes roots shared by numerator and denominator.
fn cancel_common(num: &RootSet, den: &RootSet, tol: f64) -> (RootSet, RootSet) {
    let mut n = num.clone();
    let mut d = den.clone();
    for slot in n.roots.iter_mut() {
        for other in d.roots.iter_mut() {
            if other.1 > 0 && slot.1 > 0 && (slot.0 - other.0).norm() <= tol * slot.0.norm().max(1.0) {
                let k = slot.1.min(other.1);
                slot.1 -= k;
                other.1 -= k;
            }
        }
    }
    n.roots.retain(|r| r.1 > 0);
    d.roots.retain(|r| r.1 > 0);
    (n, d)
}

impl BaseSolution {
    pub fn survival(&self, t: f64) -> f64 {
        self.w_law.survival(t)
    }

    /// Ŵ(s) evaluated from the factored form.
    pub fn transform(&self, s: C) -> C {
        self.w_hat.eval(s)
    }

    /// Probability of zero delay.
    pub fn atom(&self) -> f64 {
        self.w_law.atom.re
    }

    /// max |u·a_i| / (‖u‖‖a_i‖) over the positive roots.
    pub fn orthogonality_residual(&self) -> f64 {
        self.a_vecs[1..]
            .iter()
            .map(|a| (self.u.transpose() * a)[(0, 0)].norm() / (self.u.norm() * a.norm()))
            .fold(0.0, f64::max)
    }

    /// D(s) = A0/uω = Π_{k≥2}(s−ρ_k) Π(s+ŝ_j) in factored form.
    pub fn d_roots(&self) -> RootSet {
        let mut rs = RootSet::simple(&self.rho[1..]);
        rs.roots.extend(self.num_roots.roots.iter().copied());
        rs
    }

    /// t at which the base survival first drops below `level`.
    pub fn horizon(&self, level: f64) -> f64 {
        let mut t = 1.0;
        while self.survival(t) > level && t < 1e7 {
            t *= 2.0;
        }
        let (mut lo, mut hi) = (0.0, t);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.survival(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}
