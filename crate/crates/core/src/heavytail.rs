//! Heavy-tailed service component. Only the mean, the excess transform and the
//! excess survival are needed downstream; no higher moment is ever requested.

use std::fmt;
use std::sync::Arc;

use errorfunctions::{ComplexErrorFunctions, RealErrorFunctions};

use crate::error::{Error, Result};
use crate::inversion::{invert_laplace, EulerParams};
use crate::polyalg::{cr, C};
use crate::quad::{integrate_half_line, QuadOptions};

pub trait HeavyTail: Send + Sync + fmt::Debug {
    fn mean(&self) -> f64;

    /// LST of the stationary-excess law.
    fn excess_lst(&self, s: C) -> C;

    fn excess_survival(&self, t: f64) -> f64;

    fn lst(&self, s: C) -> C {
        if s == cr(0.0) {
            return cr(1.0);
        }
        1.0 - self.mean() * s * self.excess_lst(s)
    }

    fn lst_deriv(&self, s: C) -> C {
        let h = 1e-5 * s.norm().max(1.0);
        (self.lst(s + h) - self.lst(s - h)) / (2.0 * h)
    }

    fn excess_density(&self, t: f64) -> f64 {
        let h = 1e-6 * t.max(1e-3);
        let lo = (t - h).max(0.0);
        (self.excess_survival(lo) - self.excess_survival(t + h)) / (t + h - lo)
    }

    /// Survival of the service time itself: μ·(excess density).
    fn service_survival(&self, t: f64) -> f64 {
        self.mean() * self.excess_density(t)
    }

    /// ∫₀^∞ e^{−ρy} f_E(τ + y) dy for the excess density f_E.
    fn excess_between(&self, tau: f64, rho: C) -> Result<C> {
        let tail = integrate_half_line(
            |y| (-rho * y).exp() * self.excess_survival(tau + y),
            QuadOptions { abs_tol: 1e-11, rel_tol: 1e-10, max_intervals: 4000 },
        )?;
        Ok(self.excess_survival(tau) - rho * tail)
    }

    fn describe(&self) -> String;
}

pub type SharedTail = Arc<dyn HeavyTail>;

/// LST 1 − s/((κ+√s)(1+√s)); mean 1/κ, infinite higher moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbateWhitt {
    pub kappa: f64,
}

/// erfcx(a√t): survival of the law with LST a/(a+√s).
fn phi(a: f64, t: f64) -> f64 {
    (a * t.sqrt()).erfcx()
}

impl AbateWhitt {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        if (kappa - 1.0).abs() < 1e-9 {
            return Err(Error::InvalidParameter("kappa = 1 is not supported".into()));
        }
        Ok(AbateWhitt { kappa })
    }

    /// ∫₀^∞ e^{−ρy} erfcx(a√(τ+y)) dy
    fn phi_between(a: f64, tau: f64, rho: C) -> Option<C> {
        let d = rho - a * a;
        if d.norm() < 1e-6 * (1.0 + a * a) {
            return None;
        }
        let sr = rho.sqrt();
        let z = sr * tau.sqrt();
        Some((cr(phi(a, tau)) - a / sr * z.erfcx()) / d)
    }
}

impl HeavyTail for AbateWhitt {
    fn mean(&self) -> f64 {
        1.0 / self.kappa
    }

    fn excess_lst(&self, s: C) -> C {
        let r = s.sqrt();
        self.kappa / ((self.kappa + r) * (1.0 + r))
    }

    fn excess_survival(&self, t: f64) -> f64 {
        let k = self.kappa;
        (phi(k, t) - k * phi(1.0, t)) / (1.0 - k)
    }

    fn lst(&self, s: C) -> C {
        let r = s.sqrt();
        1.0 - s / ((self.kappa + r) * (1.0 + r))
    }

    fn lst_deriv(&self, s: C) -> C {
        let k = self.kappa;
        let w = s.sqrt();
        -(2.0 * k + w * (1.0 + k)) / (2.0 * (k + w).powi(2) * (1.0 + w).powi(2))
    }

    fn excess_density(&self, t: f64) -> f64 {
        let k = self.kappa;
        k / (1.0 - k) * (phi(1.0, t) - k * phi(k, t))
    }

    fn service_survival(&self, t: f64) -> f64 {
        let k = self.kappa;
        (phi(1.0, t) - k * phi(k, t)) / (1.0 - k)
    }

    fn excess_between(&self, tau: f64, rho: C) -> Result<C> {
        let k = self.kappa;
        match (Self::phi_between(1.0, tau, rho), Self::phi_between(k, tau, rho)) {
            (Some(l1), Some(lk)) => Ok(k / (1.0 - k) * (l1 - k * lk)),
            _ => {
                // ρ sits on a removable singularity of the closed form
                let tail = integrate_half_line(
                    |y| (-rho * y).exp() * self.excess_survival(tau + y),
                    QuadOptions { abs_tol: 1e-12, rel_tol: 1e-11, max_intervals: 4000 },
                )?;
                Ok(self.excess_survival(tau) - rho * tail)
            }
        }
    }

    fn describe(&self) -> String {
        format!("abate_whitt({})", self.kappa)
    }
}

/// Largest gap between the closed-form excess survival and Euler inversion of
/// its transform over the given times.
pub fn closed_form_discrepancy(tail: &dyn HeavyTail, times: &[f64], p: EulerParams) -> Result<f64> {
    let mut worst = 0.0f64;
    for &t in times {
        let inv = invert_laplace(|s| (1.0 - tail.excess_lst(s)) / s, t, p)?;
        worst = worst.max((inv - tail.excess_survival(t)).abs());
    }
    Ok(worst)
}

pub const VERIFY_TIMES: [f64; 7] = [0.01, 0.1, 0.5, 1.0, 5.0, 20.0, 100.0];
pub const VERIFY_TOL: f64 = 1e-7;

/// Excess survival obtained by numerical inversion at every call.
#[derive(Debug, Clone)]
pub struct InvertedExcess<T: HeavyTail + Clone> {
    pub inner: T,
    pub params: EulerParams,
}

impl<T: HeavyTail + Clone> HeavyTail for InvertedExcess<T> {
    fn mean(&self) -> f64 {
        self.inner.mean()
    }
    fn excess_lst(&self, s: C) -> C {
        self.inner.excess_lst(s)
    }
    fn excess_survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        invert_laplace(|s| (1.0 - self.inner.excess_lst(s)) / s, t, self.params)
            .unwrap_or_else(|_| self.inner.excess_survival(t))
            .clamp(0.0, 1.0)
    }
    fn lst(&self, s: C) -> C {
        self.inner.lst(s)
    }
    fn lst_deriv(&self, s: C) -> C {
        self.inner.lst_deriv(s)
    }
    fn describe(&self) -> String {
        format!("{} (inverted)", self.inner.describe())
    }
}

/// The Abate–Whitt tail, with the erfcx closed form kept only when it agrees
/// with numerical inversion of the transform.
pub fn abate_whitt(kappa: f64) -> Result<SharedTail> {
    let aw = AbateWhitt::new(kappa)?;
    let gap = closed_form_discrepancy(&aw, &VERIFY_TIMES, EulerParams::default())?;
    if gap <= VERIFY_TOL {
        Ok(Arc::new(aw))
    } else {
        Ok(Arc::new(InvertedExcess { inner: aw, params: EulerParams::default() }))
    }
}

type LstFn = Arc<dyn Fn(C) -> C + Send + Sync>;
type SurvFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied heavy tail.
#[derive(Clone)]
pub struct CustomTail {
    mean: f64,
    excess_lst: LstFn,
    excess_survival: SurvFn,
    name: String,
}

impl fmt::Debug for CustomTail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomTail({}, mean {})", self.name, self.mean)
    }
}

impl HeavyTail for CustomTail {
    fn mean(&self) -> f64 {
        self.mean
    }
    fn excess_lst(&self, s: C) -> C {
        (self.excess_lst)(s)
    }
    fn excess_survival(&self, t: f64) -> f64 {
        (self.excess_survival)(t)
    }
    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// Wraps user callables after checking that ∫e^{−st}F̄_E(t)dt = (1 − Ĝₑ(s))/s
/// at a few real points.
pub fn custom_heavytail(
    name: &str,
    mean: f64,
    excess_lst: impl Fn(C) -> C + Send + Sync + 'static,
    excess_survival: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<SharedTail> {
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::InvalidParameter(format!("mean must be positive, got {mean}")));
    }
    let tail = CustomTail {
        mean,
        excess_lst: Arc::new(excess_lst),
        excess_survival: Arc::new(excess_survival),
        name: name.to_string(),
    };
    if (tail.excess_survival(0.0) - 1.0).abs() > 1e-6 {
        return Err(Error::Consistency(format!(
            "excess survival at 0 is {}",
            tail.excess_survival(0.0)
        )));
    }
    for &s in &[0.5, 1.0, 2.0, 4.0] {
        let lt = integrate_half_line(
            |t| cr((-s * t).exp() * tail.excess_survival(t)),
            QuadOptions { abs_tol: 1e-10, rel_tol: 1e-10, max_intervals: 4000 },
        )?;
        let want = (1.0 - tail.excess_lst(cr(s))) / s;
        if (lt - want).norm() > 1e-6 {
            return Err(Error::Consistency(format!(
                "excess transform and survival disagree at s={s}: {:.3e}",
                (lt - want).norm()
            )));
        }
    }
    Ok(Arc::new(tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::c;

    #[test]
    fn mean_and_normalisation() {
        let aw = AbateWhitt::new(2.0).unwrap();
        assert_eq!(aw.mean(), 0.5);
        assert!((aw.excess_lst(cr(1e-14)) - 1.0).norm() < 1e-6);
        assert_eq!(aw.excess_survival(0.0), 1.0);
        assert!(AbateWhitt::new(1.0).is_err());
        assert!(AbateWhitt::new(-1.0).is_err());
    }

    #[test]
    fn excess_consistency() {
        let aw = AbateWhitt::new(2.0).unwrap();
        for &s in &[0.3, 1.0, 2.5, 7.0] {
            let s = cr(s);
            let lhs = aw.excess_lst(s);
            let rhs = (1.0 - aw.lst(s)) / (aw.mean() * s);
            assert!((lhs - rhs).norm() < 1e-12);
        }
        let s = c(0.4, 2.0);
        assert!((aw.excess_lst(s.conj()) - aw.excess_lst(s).conj()).norm() < 1e-15);
    }

    #[test]
    fn analytic_derivative() {
        let aw = AbateWhitt::new(2.0).unwrap();
        let s = c(0.8, 0.6);
        let h = 1e-6;
        let fd = (aw.lst(s + h) - aw.lst(s - h)) / (2.0 * h);
        assert!((aw.lst_deriv(s) - fd).norm() < 1e-8);
        assert!((aw.lst_deriv(cr(0.0)) + 0.5).norm() < 1e-15);
    }

    #[test]
    fn closed_form_between_kernel() {
        let aw = AbateWhitt::new(2.0).unwrap();
        for &(tau, rho) in &[(0.0, c(1.7, 0.0)), (0.8, c(1.7, 0.0)), (2.0, c(0.9, 0.6))] {
            let closed = aw.excess_between(tau, rho).unwrap();
            let generic = {
                let tail = integrate_half_line(
                    |y| (-rho * y).exp() * aw.excess_survival(tau + y),
                    QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 4000 },
                )
                .unwrap();
                aw.excess_survival(tau) - rho * tail
            };
            assert!((closed - generic).norm() < 1e-9, "{closed} vs {generic}");
        }
    }

    #[test]
    fn long_tailed() {
        let aw = AbateWhitt::new(2.0).unwrap();
        for &t in &[1e2, 1e3, 1e4] {
            let r = aw.excess_survival(t + 1.0) / aw.excess_survival(t);
            assert!((1.0 - r).abs() < 1e-2);
        }
    }

    #[test]
    fn custom_round_trip() {
        let aw = AbateWhitt::new(2.0).unwrap();
        let a2 = aw;
        let wrapped = custom_heavytail("aw", 0.5, move |s| a2.excess_lst(s), move |t| a2.excess_survival(t)).unwrap();
        for &t in &[0.1, 1.0, 10.0] {
            assert!((wrapped.excess_survival(t) - aw.excess_survival(t)).abs() < 1e-12);
        }
        assert!(custom_heavytail("bad", 0.5, |s| 1.0 / (1.0 + s), |t| (-2.0 * t).exp()).is_err());
    }
}
