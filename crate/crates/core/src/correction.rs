//! Correction term Θ(t) of the corrected phase-type approximations and the
//! approximations themselves, for both base models.

use crate::base_solver::{solve_base, BaseSolution, RationalLST};
use crate::error::{Error, Result};
use crate::expmeasure::{ExpPolyMeasure, ExpTerm};
use crate::heavytail::{HeavyTail, SharedTail};
use crate::model::{stability_report, MarpModel};
use crate::par;
use crate::perturbation::{perturb, weighted_sum, PerturbationData, Variant};
use crate::polyalg::{cr, partial_fractions, Poly, RationalFn, RootSet, C};
use crate::quad::{integrate, QuadOptions};
use crate::symbolic_kernel::{xi_polys, XiPolys};

/// Survival level that fixes the end of the default grid.
pub const GRID_LEVEL: f64 = 1e-6;
pub const GRID_POINTS: usize = 200;

const CONV_QUAD: QuadOptions = QuadOptions { abs_tol: 1e-10, rel_tol: 1e-8, max_intervals: 4000 };

/// Partial-fraction split of num/D with D = Π_{k≥2}(s−ρ_k) Π(s+ŝ_j).
#[derive(Debug, Clone)]
pub struct Family {
    /// Limit at infinity.
    pub constant: C,
    /// Residues at ρ_2..ρ_N.
    pub at_rho: Vec<C>,
    /// Constant minus Σ residue/ρ, plus the terms at the negative roots, as a measure.
    pub measure: ExpPolyMeasure,
}

impl Family {
    fn new(num: &Poly, d_roots: &RootSet, rho: &[C]) -> Result<Family> {
        let pf = partial_fractions(&RationalFn::new(num.clone(), d_roots.clone()))?;
        let mut at_rho = vec![cr(0.0); rho.len()];
        let mut terms = Vec::new();
        for (r, cs) in pf.terms {
            if let Some(k) = rho.iter().position(|&x| x == r) {
                if cs.len() != 1 {
                    return Err(Error::RepeatedRoot(format!("{r}")));
                }
                at_rho[k] = cs[0];
            } else {
                for (l, c) in cs.into_iter().enumerate() {
                    if c != cr(0.0) {
                        terms.push(ExpTerm { rate: -r, order: l + 1, coef: c });
                    }
                }
            }
        }
        let shift: C = at_rho.iter().zip(rho).map(|(a, r)| a / r).sum();
        Ok(Family { constant: pf.constant, at_rho, measure: ExpPolyMeasure { atom: pf.constant - shift, terms } })
    }

    /// Value of num/D rebuilt from the split.
    pub fn eval(&self, s: C, rho: &[C]) -> C {
        let mut v = self.measure.lst(s);
        for (a, r) in self.at_rho.iter().zip(rho) {
            v += a / r + a / (s - r);
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct CorrectionCoeffs {
    pub variant: Variant,
    pub uw: C,
    /// z·ω, or (z − z•)·ω for the discard model.
    pub zw: C,
    /// ρ_2..ρ_N.
    pub rho: Vec<C>,
    pub alpha: Family,
    pub beta: Family,
    pub gamma: Family,
}

impl CorrectionCoeffs {
    pub fn gamma_constant(&self) -> C {
        self.gamma.constant
    }
}

/// One excess-time source in the correction: weight and law.
#[derive(Debug, Clone)]
enum Source {
    Phase { weight: f64, law: ExpPolyMeasure },
    Heavy { weight: f64 },
}

#[derive(Debug, Clone)]
struct RootTerm {
    rho: C,
    /// 2 for one member of a conjugate pair, else 1.
    mult: f64,
    alpha: C,
    /// β_k W − γ_k W∗W.
    z: ExpPolyMeasure,
    /// z convolved with the phase-type excess law.
    z_phase: Option<ExpPolyMeasure>,
    he_at_rho: C,
}

/// Θ₁ and Θ₂ for one variant, ready to evaluate at any t ≥ 0. Values are
/// without the 1/(u·ω) prefactor.
#[derive(Debug, Clone)]
pub struct Theta {
    pub variant: Variant,
    /// Law of the base delay used inside Θ.
    pub w: ExpPolyMeasure,
    w_alpha: ExpPolyMeasure,
    x1: ExpPolyMeasure,
    x1_phase: Option<ExpPolyMeasure>,
    sources: Vec<Source>,
    roots: Vec<RootTerm>,
    ht: SharedTail,
}

/// ∫₀ᵗ g(x) φ(t−x) dx with φ allowed a square-root singularity at 0.
fn conv_integral<G: Fn(f64) -> C, F: Fn(f64) -> C>(g: G, phi: F, t: f64) -> Result<C> {
    if t <= 0.0 {
        return Ok(cr(0.0));
    }
    let head = integrate(|x| g(x) * phi(t - x), 0.0, 0.5 * t, CONV_QUAD)?;
    let tail = integrate(|v| g(t - v * v) * phi(v * v) * (2.0 * v), 0.0, (0.5 * t).sqrt(), CONV_QUAD)?;
    Ok(head + tail)
}

impl Theta {
    /// P(X + E_h > t) for a signed ExpPoly measure X.
    fn heavy_survival(&self, x: &ExpPolyMeasure, t: f64) -> Result<C> {
        let ht = &self.ht;
        let conv = conv_integral(|u| x.density_c(u), |u| cr(ht.excess_survival(u)), t)?;
        Ok(x.survival_c(t) + x.atom * ht.excess_survival(t) + conv)
    }

    /// P(t < X + E_h < t + Exp(ρ)) in its analytic form.
    fn heavy_between(&self, x: &ExpPolyMeasure, t: f64, rho: C, he_at_rho: C) -> Result<C> {
        let ht = &self.ht;
        let h = |u: f64| ht.excess_between(u, rho).unwrap_or(C::new(f64::NAN, f64::NAN));
        let conv = conv_integral(|u| x.density_c(u), h, t)?;
        if !(conv.re.is_finite() && conv.im.is_finite()) {
            return Err(Error::Quadrature(format!("between kernel failed at t={t}")));
        }
        Ok(x.atom * ht.excess_between(t, rho)? + conv + he_at_rho * x.between(t, rho))
    }

    pub fn theta1_c(&self, t: f64) -> Result<C> {
        let mut v = self.w_alpha.survival_c(t);
        for s in &self.sources {
            v += match s {
                Source::Phase { weight, .. } => {
                    self.x1_phase.as_ref().map(|m| m.survival_c(t)).unwrap_or_default() * *weight
                }
                Source::Heavy { weight } => self.heavy_survival(&self.x1, t)? * *weight,
            };
        }
        Ok(v)
    }

    pub fn theta2_c(&self, t: f64) -> Result<C> {
        let mut total = cr(0.0);
        for rt in &self.roots {
            let mut v = rt.alpha * self.w.between(t, rt.rho);
            for s in &self.sources {
                v += match s {
                    Source::Phase { weight, .. } => {
                        rt.z_phase.as_ref().map(|m| m.between(t, rt.rho)).unwrap_or_default() * *weight
                    }
                    Source::Heavy { weight } => self.heavy_between(&rt.z, t, rt.rho, rt.he_at_rho)? * *weight,
                };
            }
            let v = v / rt.rho;
            // one member of a conjugate pair stands for both
            total += if rt.mult > 1.0 { cr(2.0 * v.re) } else { v };
        }
        Ok(total)
    }

    pub fn theta1(&self, t: f64) -> Result<f64> {
        Ok(self.theta1_c(t)?.re)
    }

    pub fn theta2(&self, t: f64) -> Result<f64> {
        Ok(self.theta2_c(t)?.re)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxOutput {
    pub variant: Variant,
    pub eps: f64,
    pub grid: Vec<f64>,
    pub base: Vec<f64>,
    pub theta1: Vec<f64>,
    /// None when only the simplified approximation was requested.
    pub theta2: Option<Vec<f64>>,
    pub corrected: Option<Vec<f64>>,
    pub simplified: Vec<f64>,
    /// ε/(u·ω) multiplying Θ.
    pub prefactor: f64,
    /// Largest imaginary part seen in Θ before taking the real part.
    pub max_imag: f64,
}

/// Clamps a survival value to [0, 1] for presentation.
pub fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

impl ApproxOutput {
    /// max_t |corrected − simplified|.
    pub fn simplification_gap(&self) -> Option<f64> {
        self.corrected
            .as_ref()
            .map(|c| c.iter().zip(&self.simplified).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Which u·ω divides Θ• in the discard approximation. The two choices
/// differ by O(ε²).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscardPrefactor {
    /// u·ω of the replace base, as in the derivation of the discard expansion.
    #[default]
    ReplaceU,
    /// (u + εz•)·ω, the first-order u of the discard base.
    DiscardU,
}

/// Everything shared by the four approximations of one mixture model.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: MarpModel,
    pub pt: RationalLST,
    pub ht: SharedTail,
    pub base: BaseSolution,
    pub xi: XiPolys,
    pub replace: PerturbationData,
    pub discard: PerturbationData,
    pub discard_prefactor: DiscardPrefactor,
}

impl Analysis {
    pub fn new(model: &MarpModel, pt: &RationalLST, ht: SharedTail) -> Result<Analysis> {
        let base = solve_base(model, pt)?;
        let xi = xi_polys(&base.kernel, &base.det, &base.adj, pt, base.r);
        let replace = perturb(model, &base, &xi, ht.as_ref(), Variant::Replace)?;
        let discard = perturb(model, &base, &xi, ht.as_ref(), Variant::Discard)?;
        Ok(Analysis {
            model: model.clone(),
            pt: pt.clone(),
            ht,
            base,
            xi,
            replace,
            discard,
            discard_prefactor: DiscardPrefactor::default(),
        })
    }

    pub fn perturbation(&self, v: Variant) -> &PerturbationData {
        match v {
            Variant::Replace => &self.replace,
            Variant::Discard => &self.discard,
        }
    }

    pub fn mixture_mean(&self, eps: f64) -> f64 {
        (1.0 - eps) * self.pt.mean + eps * self.ht.mean()
    }

    pub fn check_mixture(&self, eps: f64) -> Result<()> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidParameter(format!("ε = {eps} outside [0, 1)")));
        }
        let rep = stability_report(&self.model, self.mixture_mean(eps))?;
        if !rep.is_stable() {
            return Err(Error::Unstable { margin: rep.margin, load: rep.load });
        }
        Ok(())
    }

    pub fn coeffs(&self, v: Variant) -> Result<CorrectionCoeffs> {
        let omega = &self.model.omega;
        let alpha_z = match v {
            Variant::Replace => self.replace.z.clone(),
            Variant::Discard => &self.replace.z - &self.discard.z,
        };
        let a_poly = weighted_sum(&self.xi.xi_prime_by_state, &alpha_z, omega);
        let zw: C = alpha_z.iter().zip(omega.iter()).map(|(a, &b)| a * b).sum();
        let d_roots = self.base.d_roots();
        let rho: Vec<C> = self.base.rho[1..].to_vec();
        let sb = &Poly::monomial(1) * &self.replace.u_poly;
        Ok(CorrectionCoeffs {
            variant: v,
            uw: self.base.uw,
            zw,
            alpha: Family::new(&a_poly, &d_roots, &rho)?,
            beta: Family::new(&sb, &d_roots, &rho)?,
            gamma: Family::new(&self.xi.xi, &d_roots, &rho)?,
            rho,
        })
    }

    /// Base delay law of a variant: the replace law, or the law with an
    /// atom of size ε added to the service time.
    pub fn base_for(&self, v: Variant, eps: f64) -> Result<BaseSolution> {
        match v {
            Variant::Replace => Ok(self.base.clone()),
            Variant::Discard => solve_base(&self.model, &self.pt.with_atom(eps)?),
        }
    }

    pub fn theta(&self, coeffs: &CorrectionCoeffs, w: &ExpPolyMeasure) -> Result<Theta> {
        let ww = w.convolve(w)?;
        let w_alpha = w.convolve(&coeffs.alpha.measure)?;
        let x1 = w.convolve(&coeffs.beta.measure)?.sub(&ww.convolve(&coeffs.gamma.measure)?);
        let mut sources = Vec::new();
        if coeffs.variant == Variant::Replace {
            sources.push(Source::Phase { weight: self.pt.mean, law: self.pt.excess_law()? });
        }
        sources.push(Source::Heavy { weight: -self.ht.mean() });
        let phase_law = sources.iter().find_map(|s| match s {
            Source::Phase { law, .. } => Some(law.clone()),
            _ => None,
        });
        let x1_phase = phase_law.as_ref().map(|l| x1.convolve(l)).transpose()?;
        let mut roots = Vec::new();
        for (k, &rho) in coeffs.rho.iter().enumerate() {
            if rho.im < 0.0 && coeffs.rho.iter().any(|&r| r == rho.conj()) {
                continue;
            }
            let z = w.scale(coeffs.beta.at_rho[k]).sub(&ww.scale(coeffs.gamma.at_rho[k]));
            let z_phase = phase_law.as_ref().map(|l| z.convolve(l)).transpose()?;
            roots.push(RootTerm {
                rho,
                mult: if rho.im > 0.0 { 2.0 } else { 1.0 },
                alpha: coeffs.alpha.at_rho[k],
                z,
                z_phase,
                he_at_rho: self.ht.excess_lst(rho),
            });
        }
        Ok(Theta { variant: coeffs.variant, w: w.clone(), w_alpha, x1, x1_phase, sources, roots, ht: self.ht.clone() })
    }

    /// Geometric grid: 0, then points from t_max/1000 to t_max where the base
    /// survival reaches `GRID_LEVEL`.
    pub fn default_grid(&self) -> Vec<f64> {
        geometric_grid(self.base.horizon(GRID_LEVEL), GRID_POINTS)
    }

    /// Corrected and simplified approximations of `variant` on `grid`.
    pub fn approximate(&self, eps: f64, grid: &[f64], v: Variant, simplified_only: bool) -> Result<ApproxOutput> {
        self.check_mixture(eps)?;
        if grid.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("grid points must be finite and nonnegative".into()));
        }
        let coeffs = self.coeffs(v)?;
        let base = self.base_for(v, eps)?;
        let uw = match v {
            Variant::Replace => self.base.uw,
            Variant::Discard => match self.discard_prefactor {
                DiscardPrefactor::ReplaceU => self.base.uw,
                DiscardPrefactor::DiscardU => self.base.uw + eps * self.discard.zw(&self.model.omega),
            },
        };
        let prefactor = (eps / uw).re;
        let theta = self.theta(&coeffs, &base.w_law)?;
        let rows = par::map_slice(grid, |&t| -> Result<(f64, C, Option<C>)> {
            let t1 = theta.theta1_c(t)?;
            let t2 = if simplified_only { None } else { Some(theta.theta2_c(t)?) };
            Ok((base.survival(t), t1, t2))
        });
        let mut out = ApproxOutput {
            variant: v,
            eps,
            grid: grid.to_vec(),
            base: Vec::with_capacity(grid.len()),
            theta1: Vec::with_capacity(grid.len()),
            theta2: if simplified_only { None } else { Some(Vec::with_capacity(grid.len())) },
            corrected: if simplified_only { None } else { Some(Vec::with_capacity(grid.len())) },
            simplified: Vec::with_capacity(grid.len()),
            prefactor,
            max_imag: 0.0,
        };
        for row in rows {
            let (b, t1, t2) = row?;
            out.max_imag = out.max_imag.max(t1.im.abs());
            out.base.push(b);
            out.theta1.push(t1.re);
            out.simplified.push(b + prefactor * t1.re);
            if let Some(t2) = t2 {
                out.max_imag = out.max_imag.max(t2.im.abs());
                out.theta2.as_mut().unwrap().push(t2.re);
                out.corrected.as_mut().unwrap().push(b + prefactor * (t1.re + t2.re));
            }
        }
        Ok(out)
    }

    /// θ̂(s) relative to the replace base law; for the discard variant this is
    /// the bracket of the discard expansion with W• replaced by W.
    pub fn theta_hat(&self, coeffs: &CorrectionCoeffs, s: C) -> C {
        let w = self.base.transform(s);
        let heavy = self.ht.mean() * self.ht.excess_lst(s);
        let f = match coeffs.variant {
            Variant::Replace => self.pt.mean * self.pt.excess(s) - heavy,
            Variant::Discard => -heavy,
        };
        let d = self.base.d_roots().eval_monic(s);
        let pr = &self.replace;
        let a = match coeffs.variant {
            Variant::Replace => pr.z_poly.eval(s),
            Variant::Discard => pr.z_poly.eval(s) - self.discard.z_poly.eval(s),
        };
        w / self.base.uw * (a + f * s * pr.u_poly.eval(s) - f * w * self.xi.xi.eval(s)) / d
    }
}

/// 0 followed by `n − 1` geometric points from t_max/1000 to t_max.
pub fn geometric_grid(t_max: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    if n < 2 {
        return g;
    }
    let lo = t_max / 1000.0;
    let m = n - 1;
    for i in 0..m {
        let f = if m == 1 { 1.0 } else { i as f64 / (m - 1) as f64 };
        g.push(lo * (t_max / lo).powf(f));
    }
    g
}

/// The survival of X + E_h for any law with an ExpPoly representation; used
/// by tests and the CLI for spot checks.
pub fn conv_survival_heavy(x: &ExpPolyMeasure, ht: &dyn HeavyTail, t: f64) -> Result<f64> {
    let conv = conv_integral(|u| x.density_c(u), |u| cr(ht.excess_survival(u)), t)?;
    Ok((x.survival_c(t) + x.atom * ht.excess_survival(t) + conv).re)
}
