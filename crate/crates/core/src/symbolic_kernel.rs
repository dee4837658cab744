//! Determinant and adjugate of E(s) = (G̃(s)∘P)Λ + sI − Λ as polynomials in
//! the service transform G̃, with polynomial-in-s coefficients.
//!
//! E(s) = D(s) + A(g)Λ where D = diag(s − λᵢ) and A(g) = Q⁽¹⁾∘P + g·Q⁽²⁾∘P.
//! Expanding over which diagonal entries come from D gives subset sums of
//! minors of A, and multilinearity in the columns splits each minor over the
//! set of columns taken from the real-arrival part.

use nalgebra::DMatrix;

use crate::base_solver::RationalLST;
use crate::error::{Error, Result};
use crate::model::MarpModel;
use crate::par;
use crate::polyalg::{cr, det_real, Poly, C};

pub const DEFAULT_STATE_CAP: usize = 12;

/// Σ_k coeffs[k](s) · g^k
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GPoly {
    pub coeffs: Vec<Poly>,
}

impl GPoly {
    pub fn zero() -> Self {
        GPoly { coeffs: Vec::new() }
    }

    fn normalized(mut self) -> Self {
        while matches!(self.coeffs.last(), Some(p) if p.is_zero()) {
            self.coeffs.pop();
        }
        self
    }

    /// Drops s-coefficients that are rounding noise relative to the largest one.
    pub fn cleaned(self, rel: f64) -> Self {
        let scale = self.coeffs.iter().map(|p| p.norm_inf()).fold(0.0, f64::max);
        let coeffs = self
            .coeffs
            .into_iter()
            .map(|p| {
                Poly::new(
                    p.coeffs
                        .into_iter()
                        .map(|z| if z.norm() <= rel * scale { cr(0.0) } else { z })
                        .collect(),
                )
            })
            .collect();
        GPoly { coeffs }.normalized()
    }

    pub fn coeff(&self, k: usize) -> Poly {
        self.coeffs.get(k).cloned().unwrap_or_default()
    }

    /// Degree in g; zero for the zero polynomial.
    pub fn g_degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|p| p.is_zero())
    }

    pub fn eval(&self, s: C, g: C) -> C {
        self.coeffs.iter().rev().fold(cr(0.0), |acc, p| acc * g + p.eval(s))
    }

    /// ∂/∂s at fixed g.
    pub fn eval_ds(&self, s: C, g: C) -> C {
        self.coeffs
            .iter()
            .rev()
            .fold(cr(0.0), |acc, p| acc * g + p.derivative().eval(s))
    }

    /// ∂/∂g.
    pub fn eval_dg(&self, s: C, g: C) -> C {
        let mut acc = cr(0.0);
        for k in (1..self.coeffs.len()).rev() {
            acc = acc * g + self.coeffs[k].eval(s) * k as f64;
        }
        acc
    }

    pub fn add(&self, o: &GPoly) -> GPoly {
        let n = self.coeffs.len().max(o.coeffs.len());
        GPoly { coeffs: (0..n).map(|k| &self.coeff(k) + &o.coeff(k)).collect() }.normalized()
    }

    pub fn scale(&self, a: C) -> GPoly {
        GPoly { coeffs: self.coeffs.iter().map(|p| p.scale(a)).collect() }.normalized()
    }

    pub fn mul_poly(&self, f: &Poly) -> GPoly {
        GPoly { coeffs: self.coeffs.iter().map(|p| p * f).collect() }.normalized()
    }

    /// p^r · Σ c_k (q/p)^k
    pub fn clear(&self, q: &Poly, p: &Poly, r: usize) -> Poly {
        assert!(r >= self.g_degree() || self.is_zero(), "clearing power below g-degree");
        let mut out = Poly::zero();
        for (k, ck) in self.coeffs.iter().enumerate() {
            if ck.is_zero() {
                continue;
            }
            out = &out + &(&(ck * &q.pow(k)) * &p.pow(r - k));
        }
        out
    }

    /// Σ k c_k q^{k−1} p^{r−k+1}, which is p^r · ∂_g at g = q/p.
    pub fn clear_dg(&self, q: &Poly, p: &Poly, r: usize) -> Poly {
        let mut out = Poly::zero();
        for (k, ck) in self.coeffs.iter().enumerate().skip(1) {
            if ck.is_zero() {
                continue;
            }
            let term = &(ck * &q.pow(k - 1)) * &p.pow(r + 1 - k);
            out = &out + &term.scale(cr(k as f64));
        }
        out
    }
}

/// Sign convention for the off-diagonal adjugate expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignRule {
    /// Inner alternating sum over subsets of S ∩ T taken literally; it
    /// collapses to the indicator of S ∩ T = ∅.
    Printed,
    /// (−1)^{|U ∩ T|} with U the indices whose diagonal entry comes from D
    /// and T the indices strictly between i and j; agrees with cofactors.
    #[default]
    Derived,
}

#[derive(Debug, Clone)]
pub struct Kernel {
    n: usize,
    rates: Vec<f64>,
    flow_dummy: DMatrix<f64>,
    flow_real: DMatrix<f64>,
    pub sign_rule: SignRule,
}

impl Kernel {
    pub fn new(model: &MarpModel) -> Result<Self> {
        Kernel::with_cap(model, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(model: &MarpModel, cap: usize) -> Result<Self> {
        if model.n_states > cap {
            return Err(Error::TooManyStates { n: model.n_states, cap });
        }
        Ok(Kernel {
            n: model.n_states,
            rates: model.rates.iter().copied().collect(),
            flow_dummy: model.dummy_flow(),
            flow_real: model.real_flow(),
            sign_rule: SignRule::Derived,
        })
    }

    pub fn with_sign_rule(mut self, rule: SignRule) -> Self {
        self.sign_rule = rule;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Numeric E(s) with g substituted for G̃(s).
    pub fn e_matrix(&self, s: C, g: C) -> DMatrix<C> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| {
            let a = cr(self.flow_dummy[(i, j)]) + g * self.flow_real[(i, j)];
            let mut v = a * self.rates[j];
            if i == j {
                v += s - self.rates[j];
            }
            v
        })
    }

    /// ∂E/∂g: (Q⁽²⁾∘P)Λ.
    pub fn e_dg(&self) -> DMatrix<C> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| cr(self.flow_real[(i, j)] * self.rates[j]))
    }

    /// Σ over S ⊆ free of ζ^{free∖S} · sign · λ^{cols} · Σ_Γ g^{|Γ|} det(join),
    /// with rows S ∪ {row_extra} and columns S ∪ {col_extra}.
    fn expand(&self, free: &[usize], extra: Option<(usize, usize)>, between: &[usize]) -> GPoly {
        let nf = free.len();
        let per_subset = par::map_range(1usize << nf, |mask| {
            let mut rows: Vec<usize> = Vec::new();
            let mut rest: Vec<usize> = Vec::new();
            for (b, &k) in free.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    rows.push(k);
                } else {
                    rest.push(k);
                }
            }
            let sign = match extra {
                None => 1.0,
                Some(_) => match self.sign_rule {
                    SignRule::Derived => {
                        let c = rest.iter().filter(|k| between.contains(k)).count();
                        if c % 2 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    SignRule::Printed => {
                        if rows.iter().any(|k| between.contains(k)) {
                            0.0
                        } else {
                            1.0
                        }
                    }
                },
            };
            if sign == 0.0 {
                return None;
            }
            let mut cols = rows.clone();
            if let Some((ri, cj)) = extra {
                rows.push(ri);
                cols.push(cj);
                rows.sort_unstable();
                cols.sort_unstable();
            }
            let lam: f64 = cols.iter().map(|&c| self.rates[c]).product();
            let dets = self.join_dets(&rows, &cols);
            if dets.iter().all(|&d| d == 0.0) {
                return None;
            }
            let zeta = rest
                .iter()
                .fold(Poly::one(), |acc, &k| &acc * &Poly::linear(cr(self.rates[k])));
            Some((zeta, dets.into_iter().map(|d| d * lam * sign).collect::<Vec<f64>>()))
        });
        let size = free.len() + 2;
        let mut acc = vec![Poly::zero(); size];
        for (zeta, dets) in per_subset.into_iter().flatten() {
            for (k, d) in dets.into_iter().enumerate() {
                if d != 0.0 {
                    acc[k] = &acc[k] + &zeta.scale(cr(d));
                }
            }
        }
        GPoly { coeffs: acc }.normalized()
    }

    /// det of the column join for every Γ ⊆ cols, summed by |Γ|.
    fn join_dets(&self, rows: &[usize], cols: &[usize]) -> Vec<f64> {
        let m = cols.len();
        let mut out = vec![0.0; m + 1];
        if m == 0 {
            out[0] = 1.0;
            return out;
        }
        // skip columns that are identically zero in one of the two parts
        let zero_col = |mat: &DMatrix<f64>, c: usize| rows.iter().all(|&r| mat[(r, c)] == 0.0);
        let dummy_zero: Vec<bool> = cols.iter().map(|&c| zero_col(&self.flow_dummy, c)).collect();
        let real_zero: Vec<bool> = cols.iter().map(|&c| zero_col(&self.flow_real, c)).collect();
        let mut mat = DMatrix::<f64>::zeros(m, m);
        'outer: for gamma in 0usize..(1 << m) {
            for b in 0..m {
                let from_real = gamma >> b & 1 == 1;
                if (from_real && real_zero[b]) || (!from_real && dummy_zero[b]) {
                    continue 'outer;
                }
            }
            for (ci, &c) in cols.iter().enumerate() {
                let src = if gamma >> ci & 1 == 1 { &self.flow_real } else { &self.flow_dummy };
                for (ri, &r) in rows.iter().enumerate() {
                    mat[(ri, ci)] = src[(r, c)];
                }
            }
            out[gamma.count_ones() as usize] += det_real(&mat);
        }
        out
    }

    pub fn det_e(&self) -> GPoly {
        let free: Vec<usize> = (0..self.n).collect();
        self.expand(&free, None, &[])
    }

    /// Entry (i, j) of the adjugate, i.e. the (j, i) cofactor of E.
    pub fn adjoint_entry(&self, i: usize, j: usize) -> Result<GPoly> {
        if i >= self.n || j >= self.n {
            return Err(Error::Dimension(format!("adjoint index ({i}, {j}) out of range for N={}", self.n)));
        }
        if i == j {
            let free: Vec<usize> = (0..self.n).filter(|&k| k != i).collect();
            return Ok(self.expand(&free, None, &[]));
        }
        let free: Vec<usize> = (0..self.n).filter(|&k| k != i && k != j).collect();
        let (lo, hi) = (i.min(j), i.max(j));
        let between: Vec<usize> = (lo + 1..hi).collect();
        let g = self.expand(&free, Some((i, j)), &between);
        Ok(if (i + j) % 2 == 1 { g.scale(cr(-1.0)) } else { g })
    }

    /// All adjugate entries, row-major.
    pub fn adjoint(&self) -> Vec<Vec<GPoly>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.adjoint_entry(i, j).expect("in range")).collect())
            .collect()
    }

    /// s · Σ_l u_l Adj_{l,i}
    pub fn numerator_vec(&self, u: &[C], i: usize) -> Result<GPoly> {
        if u.len() != self.n {
            return Err(Error::Dimension(format!("u has length {}, expected {}", u.len(), self.n)));
        }
        let mut acc = GPoly::zero();
        for (l, &ul) in u.iter().enumerate() {
            if ul == cr(0.0) {
                continue;
            }
            acc = acc.add(&self.adjoint_entry(l, i)?.scale(ul));
        }
        Ok(acc.mul_poly(&Poly::monomial(1)))
    }
}

/// Polynomials entering the ε-coefficient of the delay transform.
#[derive(Debug, Clone)]
pub struct XiPolys {
    pub r: usize,
    /// g-derivative of det E, cleared.
    pub xi: Poly,
    /// [i][l]: g-derivative of Adj_{l,i}, cleared.
    pub xi_by_state: Vec<Vec<Poly>>,
    /// [i][l]: Adj_{l,i}, cleared.
    pub xi_prime_by_state: Vec<Vec<Poly>>,
}

pub fn xi_polys(kernel: &Kernel, det: &GPoly, adj: &[Vec<GPoly>], pt: &RationalLST, r: usize) -> XiPolys {
    let n = kernel.n();
    let xi = det.clear_dg(&pt.q, &pt.p, r);
    let xi_by_state = (0..n)
        .map(|i| (0..n).map(|l| adj[l][i].clear_dg(&pt.q, &pt.p, r)).collect())
        .collect();
    let xi_prime_by_state = (0..n)
        .map(|i| (0..n).map(|l| adj[l][i].clear(&pt.q, &pt.p, r)).collect())
        .collect();
    XiPolys { r, xi, xi_by_state, xi_prime_by_state }
}

/// Σ_i λ_i q⁽²⁾_ii p_ii
pub fn gamma_constant(model: &MarpModel) -> f64 {
    let f = model.real_flow();
    (0..model.n_states).map(|i| model.rates[i] * f[(i, i)]).sum()
}
