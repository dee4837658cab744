//! Complex polynomials, root sets and rational functions.
//!
//! Coefficients are stored in ascending order. Roots come from the
//! eigenvalues of the companion matrix, polished by Newton steps on the
//! original polynomial, then clustered into multiplicities.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::precision::Precision;

pub type C = Complex64;

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-7;

#[inline]
pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C {
    C::new(re, 0.0)
}

/// Polynomial with complex coefficients, ascending degree.
#[derive(Clone, PartialEq, Default)]
pub struct Poly {
    pub coeffs: Vec<C>,
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly[")?;
        for (k, a) in self.coeffs.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            if a.im == 0.0 {
                write!(f, "{}", a.re)?;
            } else {
                write!(f, "{}{:+}i", a.re, a.im)?;
            }
        }
        write!(f, "]")
    }
}

impl Poly {
    pub fn new(coeffs: Vec<C>) -> Self {
        let mut p = Poly { coeffs };
        p.strip();
        p
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Poly::new(coeffs.iter().map(|&x| cr(x)).collect())
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(a: C) -> Self {
        Poly::new(vec![a])
    }

    pub fn one() -> Self {
        Poly::constant(cr(1.0))
    }

    /// s − a
    pub fn linear(a: C) -> Self {
        Poly::new(vec![-a, cr(1.0)])
    }

    pub fn monomial(k: usize) -> Self {
        let mut v = vec![cr(0.0); k + 1];
        v[k] = cr(1.0);
        Poly { coeffs: v }
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &RootSet) -> Self {
        let mut p = Poly::one();
        for &(r, m) in &roots.roots {
            for _ in 0..m {
                p = &p * &Poly::linear(r);
            }
        }
        p
    }

    fn strip(&mut self) {
        while matches!(self.coeffs.last(), Some(z) if *z == cr(0.0)) {
            self.coeffs.pop();
        }
    }

    /// Drops trailing coefficients below `tol` times the largest magnitude.
    pub fn trim(mut self, tol: f64) -> Self {
        let scale = self.norm_inf();
        while matches!(self.coeffs.last(), Some(z) if z.norm() <= tol * scale) {
            self.coeffs.pop();
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; the zero polynomial reports `None`.
    pub fn degree(&self) -> Option<usize> {
        if self.coeffs.is_empty() {
            None
        } else {
            Some(self.coeffs.len() - 1)
        }
    }

    pub fn deg(&self) -> usize {
        self.degree().unwrap_or(0)
    }

    pub fn leading(&self) -> C {
        self.coeffs.last().copied().unwrap_or(cr(0.0))
    }

    pub fn coeff(&self, k: usize) -> C {
        self.coeffs.get(k).copied().unwrap_or(cr(0.0))
    }

    pub fn norm_inf(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_real(&self, tol: f64) -> bool {
        let scale = self.norm_inf().max(f64::MIN_POSITIVE);
        self.coeffs.iter().all(|z| z.im.abs() <= tol * scale)
    }

    pub fn eval(&self, z: C) -> C {
        self.coeffs.iter().rev().fold(cr(0.0), |acc, &a| acc * z + a)
    }

    pub fn eval_real(&self, x: f64) -> C {
        self.eval(cr(x))
    }

    /// Value and first derivative by a double Horner pass.
    pub fn eval_with_deriv(&self, z: C) -> (C, C) {
        let mut p = cr(0.0);
        let mut dp = cr(0.0);
        for &a in self.coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + a;
        }
        (p, dp)
    }

    /// Horner with error-free transformations; used when extended precision is on.
    pub fn eval_with_deriv_compensated(&self, z: C) -> (C, C) {
        let zr = TwoFloat::from(z.re);
        let zi = TwoFloat::from(z.im);
        let (mut pr, mut pi) = (TwoFloat::from(0.0), TwoFloat::from(0.0));
        let (mut dr, mut di) = (TwoFloat::from(0.0), TwoFloat::from(0.0));
        for &a in self.coeffs.iter().rev() {
            let ndr = dr * zr - di * zi + pr;
            let ndi = dr * zi + di * zr + pi;
            dr = ndr;
            di = ndi;
            let npr = pr * zr - pi * zi + a.re;
            let npi = pr * zi + pi * zr + a.im;
            pr = npr;
            pi = npi;
        }
        (c(f64::from(pr), f64::from(pi)), c(f64::from(dr), f64::from(di)))
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &a)| a * k as f64)
                .collect(),
        )
    }

    pub fn scale(&self, a: C) -> Poly {
        Poly::new(self.coeffs.iter().map(|&x| x * a).collect())
    }

    pub fn pow(&self, k: usize) -> Poly {
        let mut out = Poly::one();
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Taylor coefficients at `a`: p(a + h) = Σ t_k h^k.
    pub fn taylor_at(&self, a: C) -> Vec<C> {
        let mut b = self.coeffs.clone();
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            for j in (i..n - 1).rev() {
                let hi = b[j + 1];
                b[j] += a * hi;
            }
        }
        b
    }

    /// Quotient of division by (s − a), remainder discarded.
    pub fn deflate(&self, a: C) -> Poly {
        let n = self.coeffs.len();
        if n <= 1 {
            return Poly::zero();
        }
        let mut q = vec![cr(0.0); n - 1];
        let mut acc = cr(0.0);
        for j in (1..n).rev() {
            acc = acc * a + self.coeffs[j];
            q[j - 1] = acc;
        }
        Poly::new(q)
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new((0..n).map(|k| self.coeff(k) + o.coeff(k)).collect())
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new((0..n).map(|k| self.coeff(k) - o.coeff(k)).collect())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        if self.is_zero() || o.is_zero() {
            return Poly::zero();
        }
        let mut v = vec![cr(0.0); self.coeffs.len() + o.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in o.coeffs.iter().enumerate() {
                v[i + j] += a * b;
            }
        }
        Poly::new(v)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(cr(-1.0))
    }
}

/// Roots with multiplicities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RootSet {
    pub roots: Vec<(C, usize)>,
}

impl RootSet {
    pub fn new(roots: Vec<(C, usize)>) -> Self {
        RootSet { roots }
    }

    pub fn simple(roots: &[C]) -> Self {
        RootSet { roots: roots.iter().map(|&r| (r, 1)).collect() }
    }

    pub fn degree(&self) -> usize {
        self.roots.iter().map(|&(_, m)| m).sum()
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Product of the two root sets; exactly equal roots are merged.
    pub fn union(&self, other: &RootSet) -> RootSet {
        let mut out = self.roots.clone();
        for &(r, m) in &other.roots {
            if let Some(slot) = out.iter_mut().find(|(x, _)| *x == r) {
                slot.1 += m;
            } else {
                out.push((r, m));
            }
        }
        RootSet { roots: out }
    }

    /// Value of Π (z − r)^m.
    pub fn eval_monic(&self, z: C) -> C {
        self.roots
            .iter()
            .fold(cr(1.0), |acc, &(r, m)| acc * (z - r).powi(m as i32))
    }
}

/// num(s) / Π (s − r)^m with a monic denominator kept in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalFn {
    pub num: Poly,
    pub den: RootSet,
}

impl RationalFn {
    pub fn new(num: Poly, den: RootSet) -> Self {
        RationalFn { num, den }
    }

    pub fn constant(a: C) -> Self {
        RationalFn { num: Poly::constant(a), den: RootSet::default() }
    }

    pub fn den_poly(&self) -> Poly {
        Poly::from_roots(&self.den)
    }

    pub fn eval(&self, s: C) -> C {
        self.num.eval(s) / self.den.eval_monic(s)
    }

    pub fn mul(&self, o: &RationalFn) -> RationalFn {
        RationalFn { num: &self.num * &o.num, den: self.den.union(&o.den) }
    }

    pub fn scale(&self, a: C) -> RationalFn {
        RationalFn { num: self.num.scale(a), den: self.den.clone() }
    }

    /// Limit as s → ∞; zero for strictly proper functions.
    pub fn at_infinity(&self) -> C {
        let dn = self.num.degree().unwrap_or(0);
        if self.num.is_zero() || dn < self.den.degree() {
            cr(0.0)
        } else {
            self.num.leading()
        }
    }
}

/// Partial fraction expansion c₀ + Σ_j Σ_l c_{j,l} / (s − r_j)^l.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFractions {
    pub constant: C,
    /// For each pole, coefficients for powers 1..=multiplicity.
    pub terms: Vec<(C, Vec<C>)>,
}

impl PartialFractions {
    pub fn eval(&self, s: C) -> C {
        let mut acc = self.constant;
        for (r, cs) in &self.terms {
            let mut pw = cr(1.0);
            let inv = cr(1.0) / (s - r);
            for &cl in cs {
                pw *= inv;
                acc += cl * pw;
            }
        }
        acc
    }
}

pub fn partial_fractions(f: &RationalFn) -> Result<PartialFractions> {
    let dd = f.den.degree();
    if let Some(dn) = f.num.degree() {
        if dn > dd {
            return Err(Error::InvalidParameter(format!(
                "improper rational function: numerator degree {dn} > denominator degree {dd}"
            )));
        }
    }
    let constant = f.at_infinity();
    let mut terms = Vec::with_capacity(f.den.len());
    for (idx, &(a, m)) in f.den.roots.iter().enumerate() {
        // Taylor series of (s − a)^m f(s) at a up to order m − 1
        let mut series: Vec<C> = f.num.taylor_at(a);
        series.resize(m.max(series.len()), cr(0.0));
        series.truncate(m);
        for (jdx, &(b, mb)) in f.den.roots.iter().enumerate() {
            if jdx == idx {
                continue;
            }
            let d = a - b;
            if d.norm() == 0.0 {
                return Err(Error::InvalidParameter("repeated pole listed twice".into()));
            }
            // (d + h)^{-mb} = Σ_k (−1)^k C(mb+k−1, k) d^{−mb−k} h^k
            let mut fac = Vec::with_capacity(m);
            let mut coef = d.powi(-(mb as i32));
            for k in 0..m {
                fac.push(coef);
                let kk = k as f64;
                coef = coef * (-(mb as f64 + kk) / (kk + 1.0)) / d;
            }
            series = mul_series(&series, &fac, m);
        }
        let mut cs = vec![cr(0.0); m];
        for k in 0..m {
            cs[m - 1 - k] = series[k];
        }
        terms.push((a, cs));
    }
    Ok(PartialFractions { constant, terms })
}

fn mul_series(a: &[C], b: &[C], n: usize) -> Vec<C> {
    let mut out = vec![cr(0.0); n];
    for i in 0..n.min(a.len()) {
        for j in 0..(n - i).min(b.len()) {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

/// All roots of `p`, clustered into multiplicities.
pub fn poly_roots(p: &Poly, cluster_tol: f64) -> Result<RootSet> {
    poly_roots_with(p, cluster_tol, Precision::from_env())
}

pub fn poly_roots_with(p: &Poly, cluster_tol: f64, precision: Precision) -> Result<RootSet> {
    let n = match p.degree() {
        None | Some(0) => {
            return Err(Error::Roots("polynomial of degree 0 has no roots".into()))
        }
        Some(n) => n,
    };
    let lead = p.leading();
    let monic: Vec<C> = p.coeffs.iter().map(|&a| a / lead).collect();
    let mut raw: Vec<C> = if n == 1 {
        vec![-monic[0]]
    } else {
        let mut comp = DMatrix::<C>::zeros(n, n);
        for i in 1..n {
            comp[(i, i - 1)] = cr(1.0);
        }
        for i in 0..n {
            comp[(i, n - 1)] = -monic[i];
        }
        balance(&mut comp);
        let schur = nalgebra::Schur::try_new(comp, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Roots("companion Schur iteration did not converge".into()))?;
        schur
            .eigenvalues()
            .ok_or_else(|| Error::Roots("companion eigenvalues unavailable".into()))?
            .iter()
            .copied()
            .collect()
    };
    if raw.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Roots("non-finite eigenvalue".into()));
    }
    if n > 1 {
        raw = aberth(p, raw, 100);
    }
    let iters = match precision {
        Precision::Double => 8,
        Precision::Extended => 16,
    };
    raw.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(std::cmp::Ordering::Equal));
    let is_real = p.is_real(1e-14);
    let mut clusters = cluster(p, &raw, cluster_tol, iters, precision);
    if is_real {
        clusters = enforce_conjugates(clusters, cluster_tol);
    }
    clusters.sort_by(|a, b| {
        a.0.re
            .partial_cmp(&b.0.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.im.partial_cmp(&b.0.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    let rs = RootSet::new(clusters);
    debug_assert_eq!(rs.degree(), n);
    Ok(rs)
}

/// Diagonal similarity scaling by powers of two so that row and column
/// norms are comparable; eigenvalues are unchanged but better conditioned.
fn balance(a: &mut DMatrix<C>) {
    let n = a.nrows();
    let l1 = |z: C| z.re.abs() + z.im.abs();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += l1(a[(j, i)]);
                    r += l1(a[(i, j)]);
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / 2.0;
            while c < g {
                f *= 2.0;
                c *= 4.0;
            }
            g = r * 2.0;
            while c > g {
                f /= 2.0;
                c /= 4.0;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Aberth–Ehrlich simultaneous refinement. Kept only when it lowers the
/// summed log-residual, so a poor start never makes things worse.
fn aberth(p: &Poly, start: Vec<C>, max_iter: usize) -> Vec<C> {
    let score = |zs: &[C]| zs.iter().map(|&z| p.eval(z).norm().max(1e-300).ln()).sum::<f64>();
    let mut z = start.clone();
    for _ in 0..max_iter {
        let mut moved = 0.0f64;
        for i in 0..z.len() {
            let (f, d) = p.eval_with_deriv(z[i]);
            if f.norm() == 0.0 {
                continue;
            }
            let ratio = f / d;
            let mut rep = cr(0.0);
            for j in 0..z.len() {
                if j != i {
                    let diff = z[i] - z[j];
                    if diff.norm() == 0.0 {
                        continue;
                    }
                    rep += 1.0 / diff;
                }
            }
            let w = ratio / (1.0 - ratio * rep);
            if !(w.re.is_finite() && w.im.is_finite()) {
                return start;
            }
            z[i] -= w;
            moved = moved.max(w.norm() / z[i].norm().max(1.0));
        }
        if moved <= 4.0 * f64::EPSILON {
            break;
        }
    }
    if score(&z) < score(&start) {
        z
    } else {
        start
    }
}

fn polish(p: &Poly, z0: C, iters: usize, precision: Precision) -> C {
    let eval = |z: C| match precision {
        Precision::Double => p.eval_with_deriv(z),
        Precision::Extended => p.eval_with_deriv_compensated(z),
    };
    let mut z = z0;
    let (mut fz, mut dz) = eval(z);
    for _ in 0..iters {
        if dz.norm() == 0.0 || fz.norm() == 0.0 {
            break;
        }
        let cand = z - fz / dz;
        let (fc, dc) = eval(cand);
        if !(fc.norm() < fz.norm()) {
            break;
        }
        z = cand;
        fz = fc;
        dz = dc;
    }
    z
}

/// Groups nearby roots; a loose group is accepted as one multiple root when
/// the low Taylor coefficients at its centroid vanish within rounding.
fn cluster(p: &Poly, raw: &[C], tol: f64, iters: usize, precision: Precision) -> Vec<(C, usize)> {
    let n = raw.len();
    let scale = |z: C| z.norm().max(1.0);
    let groups_for = |radius: f64| -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            let mut r = i;
            while parent[r] != r {
                r = parent[r];
            }
            let mut j = i;
            while parent[j] != r {
                let nx = parent[j];
                parent[j] = r;
                j = nx;
            }
            r
        }
        for i in 0..n {
            for j in i + 1..n {
                if (raw[i] - raw[j]).norm() <= radius * scale(raw[i]).max(scale(raw[j])) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        let mut map: Vec<Vec<usize>> = Vec::new();
        let mut label = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = map.len();
                map.push(Vec::new());
            }
            map[label[r]].push(i);
        }
        map
    };
    let centroid = |g: &[usize]| g.iter().map(|&i| raw[i]).sum::<C>() / g.len() as f64;

    let mut out = Vec::new();
    for g in groups_for(1e-3_f64.max(tol)) {
        let m = g.len();
        let cen = centroid(&g);
        if m == 1 {
            out.push((polish(p, raw[g[0]], iters, precision), 1));
            continue;
        }
        let cen = polish_multiple(p, cen, m, iters);
        if is_numerical_multiple(p, cen, m) {
            out.push((cen, m));
            continue;
        }
        // genuinely distinct: only merge within the strict tolerance
        let sub: Vec<C> = g.iter().map(|&i| polish(p, raw[i], iters, precision)).collect();
        let n2 = sub.len();
        let mut used = vec![false; n2];
        for i in 0..n2 {
            if used[i] {
                continue;
            }
            let mut members = vec![sub[i]];
            used[i] = true;
            for j in i + 1..n2 {
                if !used[j] && (sub[i] - sub[j]).norm() <= tol * scale(sub[i]) {
                    used[j] = true;
                    members.push(sub[j]);
                }
            }
            let k = members.len();
            out.push((members.iter().sum::<C>() / k as f64, k));
        }
    }
    out
}

/// Newton on the (m−1)-th derivative, whose root at an m-fold zero is simple.
fn polish_multiple(p: &Poly, z0: C, m: usize, iters: usize) -> C {
    let mut z = z0;
    for _ in 0..iters {
        let t = p.taylor_at(z);
        let (a, b) = (t[m - 1], t[m] * m as f64);
        if b.norm() == 0.0 || a.norm() == 0.0 {
            break;
        }
        let step = a / b;
        z -= step;
        if step.norm() <= 4.0 * f64::EPSILON * z.norm().max(1.0) {
            break;
        }
    }
    z
}

fn is_numerical_multiple(p: &Poly, z: C, m: usize) -> bool {
    let t = p.taylor_at(z);
    let az = z.norm();
    let abs_coeffs: Vec<f64> = p.coeffs.iter().map(|a| a.norm()).collect();
    let n = abs_coeffs.len();
    // rounding bound for each Taylor coefficient
    let bound = |k: usize| {
        let mut s = 0.0;
        let mut binom = 1.0;
        for j in k..n {
            if j > k {
                binom *= j as f64 / (j - k) as f64;
            }
            s += binom * abs_coeffs[j] * az.powi((j - k) as i32);
        }
        s * f64::EPSILON * (4.0 * n as f64) * 1e3
    };
    if t.get(m).map(|x| x.norm()).unwrap_or(0.0) <= bound(m) {
        return false;
    }
    (0..m).all(|k| t[k].norm() <= bound(k))
}

fn enforce_conjugates(mut roots: Vec<(C, usize)>, tol: f64) -> Vec<(C, usize)> {
    let mut out = Vec::with_capacity(roots.len());
    let scale = |z: C| z.norm().max(1.0);
    while let Some((z, m)) = roots.pop() {
        if z.im.abs() <= 1e3 * tol * scale(z) {
            let mut merged = m;
            // a near-real pair that straddles the axis collapses onto it
            if let Some(pos) = roots
                .iter()
                .position(|&(w, _)| (w - z.conj()).norm() <= 1e3 * tol * scale(z) && w.im.abs() <= 1e3 * tol * scale(z))
            {
                if z.im != 0.0 {
                    merged += roots.remove(pos).1;
                }
            }
            out.push((cr(z.re), merged));
            continue;
        }
        let target = z.conj();
        let best = roots
            .iter()
            .enumerate()
            .filter(|(_, &(_, mw))| mw == m)
            .min_by(|a, b| {
                (a.1 .0 - target)
                    .norm()
                    .partial_cmp(&(b.1 .0 - target).norm())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                let (w, _) = roots.remove(i);
                let avg = (z + w.conj()) * 0.5;
                out.push((avg, m));
                out.push((avg.conj(), m));
            }
            None => out.push((z, m)),
        }
    }
    out
}

/// Solves a x = b by partially pivoted elimination.
pub fn linsolve(a: &DMatrix<C>, b: &DVector<C>) -> Result<DVector<C>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!("{}x{} system with rhs {}", a.nrows(), a.ncols(), b.len())));
    }
    let row_scale: Vec<f64> =
        (0..n).map(|i| a.row(i).iter().map(|z| z.norm()).fold(0.0, f64::max)).collect();
    let mut m = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let (piv, val) = (k..n)
            .map(|i| (i, m[(i, k)].norm() / row_scale[i].max(f64::MIN_POSITIVE)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap();
        if !(val > 1e-13) {
            return Err(Error::Singular);
        }
        if piv != k {
            m.swap_rows(piv, k);
            x.swap_rows(piv, k);
        }
        let d = m[(k, k)];
        for i in k + 1..n {
            let f = m[(i, k)] / d;
            if f == cr(0.0) {
                continue;
            }
            for j in k..n {
                let t = m[(k, j)];
                m[(i, j)] -= f * t;
            }
            let t = x[k];
            x[i] -= f * t;
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[(k, j)] * x[j];
        }
        x[k] = s / m[(k, k)];
    }
    Ok(x)
}

/// Determinant of a small complex matrix; the empty matrix has determinant 1.
pub fn det(a: &DMatrix<C>) -> C {
    if a.nrows() == 0 {
        return cr(1.0);
    }
    a.clone().lu().determinant()
}

/// Determinant of a small real matrix; the empty matrix has determinant 1.
pub fn det_real(a: &DMatrix<f64>) -> f64 {
    match a.nrows() {
        0 => 1.0,
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        _ => a.clone().lu().determinant(),
    }
}

/// Minor of `e` without row `r` and column `c`.
fn minor(e: &DMatrix<C>, r: usize, c: usize) -> DMatrix<C> {
    let n = e.nrows();
    DMatrix::from_fn(n - 1, n - 1, |i, j| e[(i + (i >= r) as usize, j + (j >= c) as usize)])
}

fn cofactor_sign(i: usize, j: usize) -> f64 {
    if (i + j) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Column `m` of the adjugate: entry j is (−1)^{j+m} det(e without row m, column j).
pub fn adj_column(e: &DMatrix<C>, m: usize) -> DVector<C> {
    let n = e.nrows();
    if n == 1 {
        return DVector::from_element(1, cr(1.0));
    }
    DVector::from_fn(n, |j, _| det(&minor(e, m, j)) * cofactor_sign(j, m))
}

/// Full adjugate, Adj·e = det(e)·I.
pub fn adjugate(e: &DMatrix<C>) -> DMatrix<C> {
    let n = e.nrows();
    let mut out = DMatrix::zeros(n, n);
    for m in 0..n {
        out.set_column(m, &adj_column(e, m));
    }
    out
}

/// Derivative of column `m` of the adjugate of e(s) given de = e′(s), by the
/// column-replacement rule for determinant derivatives.
pub fn adj_column_directional(e: &DMatrix<C>, de: &DMatrix<C>, m: usize) -> DVector<C> {
    let n = e.nrows();
    if n == 1 {
        return DVector::from_element(1, cr(0.0));
    }
    DVector::from_fn(n, |j, _| {
        let me = minor(e, m, j);
        let md = minor(de, m, j);
        let mut acc = cr(0.0);
        for k in 0..n - 1 {
            let mut mk = me.clone();
            mk.set_column(k, &md.column(k));
            acc += det(&mk);
        }
        acc * cofactor_sign(j, m)
    })
}

/// Σ_j det(e with column j replaced by column j of `repl`): the directional
/// derivative of det e along `repl`.
pub fn det_directional(e: &DMatrix<C>, repl: &DMatrix<C>) -> C {
    let n = e.nrows();
    let mut acc = cr(0.0);
    for j in 0..n {
        let mut mj = e.clone();
        mj.set_column(j, &repl.column(j));
        acc += det(&mj);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn has_root(rs: &RootSet, z: C, m: usize, tol: f64) -> bool {
        rs.roots.iter().any(|&(r, k)| k == m && (r - z).norm() < tol)
    }

    #[test]
    fn simple_and_repeated_roots() {
        let p = Poly::from_real(&[-1.0, 0.0, 1.0]);
        let rs = poly_roots(&p, DEFAULT_CLUSTER_TOL).unwrap();
        assert!(has_root(&rs, cr(1.0), 1, 1e-14) && has_root(&rs, cr(-1.0), 1, 1e-14));

        let cube = Poly::linear(cr(-2.0)).pow(3);
        let rs = poly_roots(&cube, 1e-6).unwrap();
        assert_eq!(rs.roots.len(), 1);
        assert!(has_root(&rs, cr(-2.0), 3, 1e-9));
    }

    #[test]
    fn badly_scaled_coefficients() {
        let want = [-1e-2, -0.5, -3.0, -40.0, -700.0, -701.5];
        let p = Poly::from_roots(&RootSet::simple(&want.map(cr)));
        let rs = poly_roots(&p, DEFAULT_CLUSTER_TOL).unwrap();
        assert_eq!(rs.degree(), want.len());
        for w in want {
            assert!(rs.roots.iter().any(|(z, m)| *m == 1 && (z - w).norm() <= 1e-9 * w.abs()));
        }
    }

    #[test]
    fn running_example_cubic() {
        // (s+3)(s-1)^2 - 3 = s^3 + s^2 - 5s
        let p = &(&Poly::linear(cr(-3.0)) * &Poly::linear(cr(1.0)).pow(2)) - &Poly::constant(cr(3.0));
        let rs = poly_roots(&p, DEFAULT_CLUSTER_TOL).unwrap();
        let r = (-1.0 + 21f64.sqrt()) / 2.0;
        assert!(has_root(&rs, cr(r), 1, 1e-13));
        assert!(has_root(&rs, cr(0.0), 1, 1e-13));
        assert!(has_root(&rs, cr(-1.0 - r), 1, 1e-13));
    }

    #[test]
    fn conjugate_pairs_are_exact() {
        let p = Poly::from_real(&[5.0, 2.0, 1.0]); // roots -1 ± 2i
        let rs = poly_roots(&p, DEFAULT_CLUSTER_TOL).unwrap();
        assert_eq!(rs.roots.len(), 2);
        assert_eq!(rs.roots[0].0, rs.roots[1].0.conj());
    }

    #[test]
    fn partial_fraction_examples() {
        let f = RationalFn::new(Poly::one(), RootSet::simple(&[cr(-1.0), cr(-2.0)]));
        let pf = partial_fractions(&f).unwrap();
        let get = |z: f64| pf.terms.iter().find(|t| t.0 == cr(z)).unwrap().1.clone();
        assert!((get(-1.0)[0] - 1.0).norm() < 1e-14);
        assert!((get(-2.0)[0] + 1.0).norm() < 1e-14);

        let g = RationalFn::new(Poly::from_real(&[3.0, 2.0]), RootSet::new(vec![(cr(-1.0), 2)]));
        let pf = partial_fractions(&g).unwrap();
        assert!((pf.terms[0].1[0] - 2.0).norm() < 1e-14);
        assert!((pf.terms[0].1[1] - 1.0).norm() < 1e-14);
        assert!(partial_fractions(&RationalFn::new(Poly::monomial(3), RootSet::simple(&[cr(-1.0)]))).is_err());
    }

    #[test]
    fn linsolve_examples() {
        let a = DMatrix::<C>::identity(2, 2);
        let b = DVector::from_vec(vec![cr(1.0), cr(2.0)]);
        assert_eq!(linsolve(&a, &b).unwrap(), b);
        let s = DMatrix::from_row_slice(2, 2, &[cr(1.0), cr(2.0), cr(2.0), cr(4.0)]);
        assert_eq!(linsolve(&s, &b), Err(Error::Singular));
    }

    #[test]
    fn running_example_u_system() {
        let lam = 1.0;
        let eb = 1.0 / 3.0;
        let rho2 = (-1.0 + 21f64.sqrt()) / 2.0;
        // rows are equations: (u1 + u2)/λ = 1/λ − E[B]/2 and −λ u1 + (ρ₂ − λ) u2 = 0
        let a = DMatrix::from_row_slice(2, 2, &[cr(1.0 / lam), cr(-lam), cr(1.0 / lam), cr(rho2 - lam)]);
        let b = DVector::from_vec(vec![cr(1.0 / lam - eb / 2.0), cr(0.0)]);
        let u = linsolve(&a.transpose(), &b).unwrap();
        let f = 1.0 - lam * eb / 2.0;
        assert!((u[0] - (1.0 - lam / rho2) * f).norm() < 1e-14);
        assert!((u[1] - lam / rho2 * f).norm() < 1e-14);
    }

    #[test]
    fn adjugate_identity_and_derivative() {
        let e = DMatrix::from_row_slice(3, 3, &[c(1.0, 0.2), cr(2.0), cr(-1.0), cr(0.5), c(3.0, -1.0), cr(0.3), cr(0.0), cr(1.5), cr(2.0)]);
        let de = DMatrix::from_row_slice(3, 3, &[cr(0.3), cr(-1.0), c(0.0, 1.0), cr(2.0), cr(0.1), cr(0.7), cr(-0.4), cr(0.2), cr(1.0)]);
        let adj = adjugate(&e);
        let prod = &adj * &e;
        let d = det(&e);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { d } else { cr(0.0) };
                assert!((prod[(i, j)] - want).norm() < 1e-12);
            }
        }
        let h = 1e-6;
        let plus = adjugate(&(&e + &de * cr(h)));
        let minus = adjugate(&(&e - &de * cr(h)));
        for m in 0..3 {
            let fd = (plus.column(m) - minus.column(m)) / cr(2.0 * h);
            assert!((adj_column_directional(&e, &de, m) - fd).norm() < 1e-8);
        }
        let fd = (det(&(&e + &de * cr(h))) - det(&(&e - &de * cr(h)))) / (2.0 * h);
        assert!((det_directional(&e, &de) - fd).norm() < 1e-8);
    }

    #[test]
    fn taylor_shift_matches_derivatives() {
        let p = Poly::from_real(&[1.0, -2.0, 0.5, 3.0]);
        let a = c(0.3, -0.7);
        let t = p.taylor_at(a);
        assert!((t[0] - p.eval(a)).norm() < 1e-14);
        assert!((t[1] - p.derivative().eval(a)).norm() < 1e-14);
        assert!((t[2] - p.derivative().derivative().eval(a) / 2.0).norm() < 1e-13);
        assert!((t[3] - 3.0).norm() < 1e-14);
    }
}
