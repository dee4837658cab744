//! Signed measures on [0, ∞) made of an atom at zero plus exponential-polynomial
//! densities. A term (rate a, order l, coef c) has LST c/(s+a)^l, i.e. density
//! c·t^{l−1}/(l−1)!·e^{−at}. Convolution is exact: products of such transforms
//! are split back into terms by partial fractions.

use crate::error::{Error, Result};
use crate::polyalg::{cr, partial_fractions, Poly, RationalFn, RootSet, C};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub rate: C,
    pub order: usize,
    pub coef: C,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpPolyMeasure {
    pub atom: C,
    pub terms: Vec<ExpTerm>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |a, i| a * (n - i) as f64 / (i + 1) as f64)
}

impl ExpPolyMeasure {
    pub fn atom(a: f64) -> Self {
        ExpPolyMeasure { atom: cr(a), terms: Vec::new() }
    }

    pub fn zero() -> Self {
        ExpPolyMeasure::default()
    }

    /// Erlang(shape, rate).
    pub fn erlang(shape: usize, rate: C) -> Self {
        ExpPolyMeasure {
            atom: cr(0.0),
            terms: vec![ExpTerm { rate, order: shape, coef: rate.powi(shape as i32) }],
        }
    }

    /// Inverts a proper rational LST whose poles all lie in the open left half-plane.
    pub fn from_rational(f: &RationalFn) -> Result<Self> {
        for &(r, _) in &f.den.roots {
            if r.re >= 0.0 {
                return Err(Error::InvalidParameter(format!("pole {r} is not in the left half-plane")));
            }
        }
        let pf = partial_fractions(f)?;
        let mut terms = Vec::new();
        for (r, cs) in pf.terms {
            for (l, c) in cs.into_iter().enumerate() {
                if c != cr(0.0) {
                    terms.push(ExpTerm { rate: -r, order: l + 1, coef: c });
                }
            }
        }
        Ok(ExpPolyMeasure { atom: pf.constant, terms })
    }

    pub fn lst(&self, s: C) -> C {
        self.terms
            .iter()
            .fold(self.atom, |acc, t| acc + t.coef / (s + t.rate).powi(t.order as i32))
    }

    pub fn mass(&self) -> C {
        self.terms
            .iter()
            .fold(self.atom, |acc, t| acc + t.coef / t.rate.powi(t.order as i32))
    }

    pub fn density_c(&self, t: f64) -> C {
        self.terms.iter().fold(cr(0.0), |acc, term| {
            let m = term.order - 1;
            acc + term.coef * t.powi(m as i32) / factorial(m) * (-term.rate * t).exp()
        })
    }

    /// ν((t, ∞)), complex for measures with unpaired complex terms.
    pub fn survival_c(&self, t: f64) -> C {
        self.terms.iter().fold(cr(0.0), |acc, term| {
            let a = term.rate;
            let at = a * t;
            let mut sum = cr(0.0);
            let mut pw = cr(1.0);
            for k in 0..term.order {
                if k > 0 {
                    pw = pw * at / k as f64;
                }
                sum += pw;
            }
            acc + term.coef * (-at).exp() * sum / a.powi(term.order as i32)
        })
    }

    pub fn survival(&self, t: f64) -> f64 {
        self.survival_c(t).re
    }

    pub fn density(&self, t: f64) -> f64 {
        self.density_c(t).re
    }

    /// ∫₀^∞ e^{−ρy} density(t + y) dy, i.e. P(t < X < t + Exp(ρ)) up to the factor
    /// convention for complex ρ.
    pub fn between(&self, t: f64, rho: C) -> C {
        self.terms.iter().fold(cr(0.0), |acc, term| {
            let m = term.order - 1;
            let a = term.rate;
            let mut sum = cr(0.0);
            let mut inv = cr(1.0) / (rho + a);
            for k in 0..=m {
                // C(m,k) t^{m−k} k! / (ρ+a)^{k+1}
                sum += binom(m, k) * t.powi((m - k) as i32) * factorial(k) * inv;
                inv /= rho + a;
            }
            acc + term.coef / factorial(m) * (-a * t).exp() * sum
        })
    }

    pub fn scale(&self, c: C) -> Self {
        ExpPolyMeasure {
            atom: self.atom * c,
            terms: self.terms.iter().map(|t| ExpTerm { coef: t.coef * c, ..*t }).collect(),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        out.atom += o.atom;
        out.terms.extend_from_slice(&o.terms);
        out.merged()
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(cr(-1.0)))
    }

    /// Collects terms with bitwise equal rate and order.
    pub fn merged(mut self) -> Self {
        let mut out: Vec<ExpTerm> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            if let Some(slot) = out.iter_mut().find(|x| x.rate == t.rate && x.order == t.order) {
                slot.coef += t.coef;
            } else {
                out.push(t);
            }
        }
        out.retain(|t| t.coef != cr(0.0));
        ExpPolyMeasure { atom: self.atom, terms: out }
    }

    pub fn convolve(&self, o: &Self) -> Result<Self> {
        let mut terms: Vec<ExpTerm> = Vec::new();
        if self.atom != cr(0.0) {
            terms.extend(o.terms.iter().map(|t| ExpTerm { coef: t.coef * self.atom, ..*t }));
        }
        if o.atom != cr(0.0) {
            terms.extend(self.terms.iter().map(|t| ExpTerm { coef: t.coef * o.atom, ..*t }));
        }
        for a in &self.terms {
            for b in &o.terms {
                terms.extend(term_product(a, b)?);
            }
        }
        Ok(ExpPolyMeasure { atom: self.atom * o.atom, terms }.merged())
    }

    pub fn add_erlang(&self, shape: usize, rate: C) -> Result<Self> {
        self.convolve(&ExpPolyMeasure::erlang(shape, rate))
    }

    /// Largest decay rate bound: min Re(rate) over terms.
    pub fn slowest_rate(&self) -> Option<f64> {
        self.terms.iter().map(|t| t.rate.re).reduce(f64::min)
    }

    /// Representation as a rational function num / Π(s + a)^l.
    pub fn to_rational(&self) -> RationalFn {
        let mut den = RootSet::default();
        for t in &self.terms {
            match den.roots.iter_mut().find(|(r, _)| *r == -t.rate) {
                Some(slot) => slot.1 = slot.1.max(t.order),
                None => den.roots.push((-t.rate, t.order)),
            }
        }
        let full = Poly::from_roots(&den);
        let mut num = full.scale(self.atom);
        for t in &self.terms {
            let mut rest = RootSet::default();
            for &(r, m) in &den.roots {
                let k = if r == -t.rate { m - t.order } else { m };
                if k > 0 {
                    rest.roots.push((r, k));
                }
            }
            num = &num + &Poly::from_roots(&rest).scale(t.coef);
        }
        RationalFn::new(num, den)
    }
}

fn term_product(a: &ExpTerm, b: &ExpTerm) -> Result<Vec<ExpTerm>> {
    let c = a.coef * b.coef;
    if a.rate == b.rate {
        return Ok(vec![ExpTerm { rate: a.rate, order: a.order + b.order, coef: c }]);
    }
    let f = RationalFn::new(
        Poly::constant(c),
        RootSet::new(vec![(-a.rate, a.order), (-b.rate, b.order)]),
    );
    let pf = partial_fractions(&f)?;
    let mut out = Vec::new();
    for (r, cs) in pf.terms {
        for (l, cl) in cs.into_iter().enumerate() {
            if cl != cr(0.0) {
                out.push(ExpTerm { rate: -r, order: l + 1, coef: cl });
            }
        }
    }
    Ok(out)
}
