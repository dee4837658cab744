//! Numerical Laplace inversion by Euler summation of the Bromwich integral
//! (trapezoidal rule on a vertical contour, then binomial averaging of the
//! alternating partial sums).

use crate::error::{Error, Result};
use crate::polyalg::{c, C};

#[derive(Debug, Clone, Copy)]
pub struct EulerParams {
    /// Contour abscissa times 2t; discretization error is about e^{−a}.
    pub a: f64,
    /// Terms summed before averaging.
    pub n: usize,
    /// Number of averaged partial sums minus one.
    pub m: usize,
}

impl Default for EulerParams {
    fn default() -> Self {
        EulerParams { a: 25.0, n: 38, m: 11 }
    }
}

fn binomials(m: usize) -> Vec<f64> {
    let mut row = vec![1.0; m + 1];
    for k in 1..m {
        row[k] = row[k - 1] * (m - k + 1) as f64 / k as f64;
    }
    let scale = 0.5f64.powi(m as i32);
    row.iter().map(|x| x * scale).collect()
}

/// Averaged estimate using `n` terms; returns it together with the estimate for `n − 1`.
fn euler_estimates<F: Fn(C) -> C>(f: &F, t: f64, p: EulerParams) -> (f64, f64) {
    let x = p.a / (2.0 * t);
    let h = std::f64::consts::PI / t;
    let scale = (p.a / 2.0).exp() / t;
    let total = p.n + p.m;
    let mut partial = Vec::with_capacity(total + 1);
    let mut sum = 0.5 * f(c(x, 0.0)).re;
    partial.push(sum);
    for k in 1..=total {
        let term = f(c(x, k as f64 * h)).re;
        sum += if k % 2 == 0 { term } else { -term };
        partial.push(sum);
    }
    let w = binomials(p.m);
    let avg = |start: usize| -> f64 {
        (0..=p.m).map(|k| w[k] * partial[start + k]).sum::<f64>() * scale
    };
    (avg(p.n), avg(p.n - 1))
}

/// Inverts a Laplace transform at t > 0.
pub fn invert_laplace<F: Fn(C) -> C>(f: F, t: f64, p: EulerParams) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("inversion needs t > 0, got {t}")));
    }
    let (v, prev) = euler_estimates(&f, t, p);
    if !v.is_finite() {
        return Err(Error::Inversion(format!("non-finite value at t={t}")));
    }
    if (v - prev).abs() > 1e-5 * v.abs().max(1.0) {
        return Err(Error::Inversion(format!(
            "Euler sums not settled at t={t}: {v:.3e} vs {prev:.3e}"
        )));
    }
    Ok(v)
}

/// Survival function of a law given its LST, via (1 − F̂(s))/s.
pub fn invert_survival<F: Fn(C) -> C>(lst: F, t: f64, p: EulerParams) -> Result<f64> {
    invert_laplace(|s| (1.0 - lst(s)) / s, t, p)
}
