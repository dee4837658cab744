//! Markovian arrival process with dummy and real transitions.
//!
//! The process is given by two intensity matrices: `d1` carries phase changes
//! that bring no work (dummy customers), `d2` carries real arrivals. Everything
//! the queueing analysis needs from the arrival side is derived once here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-10;

/// Arrival process and the quantities of its embedded jump chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MarpModel {
    pub n_states: usize,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    /// Exit rate of each state.
    pub rates: DVector<f64>,
    /// Transition matrix of the embedded chain.
    pub trans: DMatrix<f64>,
    /// Probability that a jump i -> j brings a dummy customer.
    pub q_dummy: DMatrix<f64>,
    /// Probability that a jump i -> j brings a real customer.
    pub q_real: DMatrix<f64>,
    /// Stationary law of the embedded chain.
    pub pi: DVector<f64>,
    /// Weights turning per-state workload transforms into the delay transform.
    pub omega: DVector<f64>,
}

/// How the transition structure of an MMPP is supplied.
#[derive(Debug, Clone)]
pub enum MmppSpec {
    /// Two-state MMPP given by the self-transition probabilities.
    SelfProbs(Vec<f64>),
    /// Full embedded transition matrix.
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub margin: f64,
    pub load: f64,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.margin > 0.0
    }
}

pub fn build_marp(d1: DMatrix<f64>, d2: DMatrix<f64>) -> Result<MarpModel> {
    let n = d1.nrows();
    if n == 0 || d1.ncols() != n || d2.nrows() != n || d2.ncols() != n {
        return Err(Error::Dimension(format!(
            "d1 is {}x{}, d2 is {}x{}",
            d1.nrows(),
            d1.ncols(),
            d2.nrows(),
            d2.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            if d2[(i, j)] < 0.0 || !d2[(i, j)].is_finite() {
                return Err(Error::NegativeIntensity { row: i, col: j, value: d2[(i, j)] });
            }
            if i != j && (d1[(i, j)] < 0.0 || !d1[(i, j)].is_finite()) {
                return Err(Error::NegativeIntensity { row: i, col: j, value: d1[(i, j)] });
            }
        }
    }

    let mut rates = DVector::zeros(n);
    for i in 0..n {
        let sum: f64 = (0..n).map(|j| d1[(i, j)] + d2[(i, j)]).sum();
        let scale = (0..n)
            .map(|j| d1[(i, j)].abs() + d2[(i, j)].abs())
            .fold(1.0, f64::max);
        if sum.abs() > ROW_SUM_TOL * scale {
            return Err(Error::RowSum { row: i, sum });
        }
        let lam: f64 = (0..n).filter(|&k| k != i).map(|k| d1[(i, k)]).sum::<f64>()
            + (0..n).map(|k| d2[(i, k)]).sum::<f64>();
        if lam <= 0.0 {
            return Err(Error::ZeroExitRate(i));
        }
        rates[i] = lam;
    }

    let mut trans = DMatrix::zeros(n, n);
    let mut q_dummy = DMatrix::zeros(n, n);
    let mut q_real = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dummy = if i == j { 0.0 } else { d1[(i, j)] };
            let flow = dummy + d2[(i, j)];
            trans[(i, j)] = flow / rates[i];
            if flow > 0.0 {
                q_dummy[(i, j)] = dummy / flow;
                q_real[(i, j)] = d2[(i, j)] / flow;
            }
        }
    }

    if !is_irreducible(&trans) {
        return Err(Error::Reducible);
    }
    let pi = stationary(&trans)?;

    let real_exit: DVector<f64> =
        DVector::from_iterator(n, (0..n).map(|i| d2.row(i).sum() / rates[i]));
    let norm = pi.dot(&real_exit);
    if norm <= 0.0 {
        return Err(Error::InvalidParameter("process has no real arrivals".into()));
    }
    let omega = real_exit / norm;

    Ok(MarpModel { n_states: n, d1, d2, rates, trans, q_dummy, q_real, pi, omega })
}

/// Builds an MMPP: self-transitions are real arrivals, phase changes are dummy.
pub fn build_mmpp(rates: &[f64], spec: &MmppSpec) -> Result<MarpModel> {
    let n = rates.len();
    if n == 0 {
        return Err(Error::Dimension("no states".into()));
    }
    if let Some(i) = rates.iter().position(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::ZeroExitRate(i));
    }
    let p = match spec {
        MmppSpec::SelfProbs(diag) => {
            if diag.len() != n {
                return Err(Error::Dimension(format!(
                    "{} self probabilities for {} states",
                    diag.len(),
                    n
                )));
            }
            if n == 1 {
                DMatrix::from_element(1, 1, 1.0)
            } else if n == 2 {
                for &pii in diag {
                    if !(0.0..1.0).contains(&pii) {
                        return Err(Error::InvalidParameter(format!(
                            "self probability {pii} outside [0,1)"
                        )));
                    }
                }
                DMatrix::from_row_slice(2, 2, &[diag[0], 1.0 - diag[0], 1.0 - diag[1], diag[1]])
            } else {
                return Err(Error::InvalidParameter(
                    "self probabilities only determine P for two states".into(),
                ));
            }
        }
        MmppSpec::Full(p) => {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::Dimension(format!(
                    "P is {}x{} for {} rates",
                    p.nrows(),
                    p.ncols(),
                    n
                )));
            }
            p.clone()
        }
    };
    for i in 0..n {
        let sum = p.row(i).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || p.row(i).iter().any(|&x| x < 0.0) {
            return Err(Error::RowSum { row: i, sum: sum - 1.0 });
        }
        if n > 1 && p[(i, i)] >= 1.0 {
            return Err(Error::InvalidParameter(format!("p[{i}][{i}] = 1 leaves no phase change")));
        }
    }
    let mut d1 = DMatrix::zeros(n, n);
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        d2[(i, i)] = rates[i] * p[(i, i)];
        for j in 0..n {
            if i != j {
                d1[(i, j)] = rates[i] * p[(i, j)];
            }
        }
        d1[(i, i)] = -rates[i];
    }
    build_marp(d1, d2)
}

pub fn stability_report(model: &MarpModel, mean_service: f64) -> Result<StabilityReport> {
    if !(mean_service > 0.0 && mean_service.is_finite()) {
        return Err(Error::InvalidParameter(format!("mean service {mean_service} must be positive")));
    }
    let n = model.n_states;
    let real_flow = model.real_flow();
    let mut margin = 0.0;
    let mut inter = 0.0;
    let mut real_frac = 0.0;
    for i in 0..n {
        let row_real: f64 = real_flow.row(i).sum();
        margin += model.pi[i] * (1.0 / model.rates[i] - mean_service * row_real);
        inter += model.pi[i] / model.rates[i];
        real_frac += model.pi[i] * model.d2.row(i).sum() / model.rates[i];
    }
    Ok(StabilityReport { margin, load: real_frac / inter * mean_service })
}

impl MarpModel {
    /// Q1 ∘ P: unconditional probability of a dummy arrival on jump i -> j.
    pub fn dummy_flow(&self) -> DMatrix<f64> {
        self.q_dummy.component_mul(&self.trans)
    }

    /// Q2 ∘ P: unconditional probability of a real arrival on jump i -> j.
    pub fn real_flow(&self) -> DMatrix<f64> {
        self.q_real.component_mul(&self.trans)
    }

    /// Right-hand side of the normalization equation for u: π(Λ⁻¹ − mean·Q2∘P)1.
    pub fn margin(&self, mean_service: f64) -> f64 {
        let rf = self.real_flow();
        (0..self.n_states)
            .map(|i| self.pi[i] * (1.0 / self.rates[i] - mean_service * rf.row(i).sum()))
            .sum()
    }

    /// Fraction of embedded-chain jumps that bring a real customer.
    pub fn real_fraction(&self) -> f64 {
        let rf = self.real_flow();
        (0..self.n_states).map(|i| self.pi[i] * rf.row(i).sum()).sum()
    }
}

fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { p[(i, j)] } else { p[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    reach(true) && reach(false)
}

fn stationary(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(Error::Singular)?;
    if pi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Reducible);
    }
    Ok(pi)
}
