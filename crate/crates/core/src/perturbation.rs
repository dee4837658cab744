//! First-order perturbation of the base model: shifted roots, perturbed
//! eigenvectors and the ε-coefficient z of the unknown vector.

use nalgebra::{DMatrix, DVector};

use crate::base_solver::{BaseSolution, RationalLST};
use crate::error::{Error, Result};
use crate::heavytail::HeavyTail;
use crate::model::MarpModel;
use crate::polyalg::{adj_column_directional, cr, det_directional, linsolve, Poly, RationalFn, C};
use crate::symbolic_kernel::XiPolys;

/// Relative disagreement allowed between the three δ formulas.
pub const DELTA_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Heavy-tailed customers replaced by phase-type ones.
    Replace,
    /// Heavy-tailed customers given zero service.
    Discard,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Replace => "replace",
            Variant::Discard => "discard",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replace" => Ok(Variant::Replace),
            "discard" => Ok(Variant::Discard),
            other => Err(Error::InvalidParameter(format!("unknown variant '{other}'"))),
        }
    }
}

/// The scalar f(s) with K(s) = s f(s) (Q⁽²⁾∘P)Λ, i.e. the O(ε) shift of the
/// service transform divided by s.
#[derive(Debug, Clone)]
pub struct Drive<'a> {
    pub variant: Variant,
    pt_excess: RationalFn,
    pt_mean: f64,
    ht: &'a dyn HeavyTail,
}

impl<'a> Drive<'a> {
    pub fn new(pt: &RationalLST, ht: &'a dyn HeavyTail, variant: Variant) -> Self {
        Drive { variant, pt_excess: pt.excess_rational(), pt_mean: pt.mean, ht }
    }

    pub fn eval(&self, s: C) -> C {
        let p = self.pt_excess.eval(s) * self.pt_mean;
        match self.variant {
            Variant::Replace => p - self.ht.excess_lst(s) * self.ht.mean(),
            Variant::Discard => p,
        }
    }

    /// Change in mean service time per unit ε, with the sign of a margin gain.
    pub fn mean_drop(&self) -> f64 {
        match self.variant {
            Variant::Replace => self.pt_mean - self.ht.mean(),
            Variant::Discard => self.pt_mean,
        }
    }
}

/// K(s) = s f(s) (Q⁽²⁾∘P)Λ.
pub fn k_matrix(sol: &BaseSolution, drive: &Drive, s: C) -> DMatrix<C> {
    sol.kernel.e_dg() * (s * drive.eval(s))
}

#[derive(Debug, Clone)]
pub struct PerturbationData {
    pub variant: Variant,
    /// δ_k from the column-replacement determinant ratio (entry 0 is zero).
    pub delta: Vec<C>,
    /// δ_k from the root shift of the cleared denominator.
    pub delta_den: Vec<C>,
    /// δ_k from the root shift of the cleared numerator.
    pub delta_num: Vec<C>,
    pub k_vecs: Vec<DVector<C>>,
    pub a_mat: DMatrix<C>,
    pub b_mat: DMatrix<C>,
    pub c_vec: DVector<C>,
    pub d_vec: DVector<C>,
    pub z: DVector<C>,
    /// Σ_i ω_i Σ_l z_l ξ′_{i,l}.
    pub z_poly: Poly,
    /// Σ_i ω_i Σ_l u_l ξ_{i,l}.
    pub u_poly: Poly,
}

impl PerturbationData {
    pub fn zw(&self, omega: &DVector<f64>) -> C {
        self.z.iter().zip(omega.iter()).map(|(a, &b)| a * b).sum()
    }

    /// Largest relative disagreement among the δ formulas.
    pub fn delta_disagreement(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..self.delta.len() {
            let (a, b, c) = (self.delta[k], self.delta_den[k], self.delta_num[k]);
            let scale = a.norm().max(b.norm()).max(c.norm());
            if scale < 1e-14 {
                continue;
            }
            worst = worst.max((a - b).norm() / scale).max((a - c).norm() / scale);
        }
        worst
    }
}

/// Σ_i ω_i Σ_l v_l P_{i,l} for an [i][l] family of polynomials.
pub fn weighted_sum(family: &[Vec<Poly>], v: &DVector<C>, omega: &DVector<f64>) -> Poly {
    let mut acc = Poly::zero();
    for (i, row) in family.iter().enumerate() {
        if omega[i] == 0.0 {
            continue;
        }
        for (l, p) in row.iter().enumerate() {
            if v[l] != cr(0.0) {
                acc = &acc + &p.scale(v[l] * omega[i]);
            }
        }
    }
    acc
}

/// Perturbation data for one variant. For `Discard` the base is still the
/// replace base; z is then the ε-coefficient of the discard model's u.
pub fn perturb(
    model: &MarpModel,
    sol: &BaseSolution,
    xi: &XiPolys,
    ht: &dyn HeavyTail,
    variant: Variant,
) -> Result<PerturbationData> {
    let n = sol.n;
    let drive = Drive::new(&sol.pt, ht, variant);
    let edg = sol.kernel.e_dg();
    let mut delta = vec![cr(0.0); n];
    let mut k_vecs = vec![DVector::zeros(n)];
    let mut b_cols = vec![DVector::zeros(n)];
    for k in 1..n {
        let z = sol.rho[k];
        let e = sol.kernel.e_matrix(z, sol.pt.eval(z));
        let de = DMatrix::<C>::identity(n, n) + &edg * sol.pt.deriv(z);
        let kk = k_matrix(sol, &drive, z);
        let den = det_directional(&e, &de);
        if den.norm() < 1e-300 {
            return Err(Error::RepeatedRoot(format!("{z}")));
        }
        delta[k] = det_directional(&e, &kk) / den;
        let kv = adj_column_directional(&e, &kk, sol.columns[k]);
        b_cols.push(&sol.a_prime[k] * delta[k] - &kv);
        k_vecs.push(kv);
    }
    let a_mat = DMatrix::from_columns(&sol.a_vecs);
    let b_mat = DMatrix::from_columns(&b_cols);
    let mut c_vec = DVector::zeros(n);
    c_vec[0] = cr(sol.margin);
    let mut d_vec = DVector::zeros(n);
    d_vec[0] = cr(drive.mean_drop() * model.real_fraction());

    // u A = c, so z A = u B + d
    let at = a_mat.transpose();
    let u_check = linsolve(&at, &c_vec)?;
    let unorm = sol.u.norm().max(1e-300);
    if (&u_check - &sol.u).norm() > 1e-9 * unorm {
        return Err(Error::Consistency("c A⁻¹ differs from u".into()));
    }
    let rhs = (sol.u.transpose() * &b_mat).transpose() + &d_vec;
    let z = linsolve(&at, &rhs)?;

    let omega = &model.omega;
    let z_poly = weighted_sum(&xi.xi_prime_by_state, &z, omega);
    let u_poly = weighted_sum(&xi.xi_by_state, &sol.u, omega);

    let mut delta_den = vec![cr(0.0); n];
    let mut delta_num = vec![cr(0.0); n];
    for k in 1..n {
        let r = sol.rho[k];
        let others: C = (1..n).filter(|&l| l != k).map(|l| r - sol.rho[l]).product();
        let f = drive.eval(r);
        delta_den[k] = f * xi.xi.eval(r) / (others * sol.den_roots.eval_monic(r));
        delta_num[k] =
            (z_poly.eval(r) + r * f * u_poly.eval(r)) / (sol.uw * others * sol.num_roots.eval_monic(r));
    }

    let data = PerturbationData {
        variant,
        delta,
        delta_den,
        delta_num,
        k_vecs,
        a_mat,
        b_mat,
        c_vec,
        d_vec,
        z,
        z_poly,
        u_poly,
    };
    let gap = data.delta_disagreement();
    if gap > DELTA_TOL {
        return Err(Error::Consistency(format!("δ formulas disagree by {gap:.2e}")));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_solver::solve_base;
    use crate::heavytail::AbateWhitt;
    use crate::model::build_marp;
    use crate::symbolic_kernel::xi_polys;

    fn erlang2() -> MarpModel {
        let d1 = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let d2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        build_marp(d1, d2).unwrap()
    }

    fn setup(model: &MarpModel) -> (BaseSolution, XiPolys) {
        let pt = RationalLST::exponential(3.0).unwrap();
        let sol = solve_base(model, &pt).unwrap();
        let xi = xi_polys(&sol.kernel, &sol.det, &sol.adj, &pt, sol.r);
        (sol, xi)
    }

    #[test]
    fn running_example_delta_closed_form() {
        let m = erlang2();
        let (sol, xi) = setup(&m);
        let ht = AbateWhitt::new(2.0).unwrap();
        let pd = perturb(&m, &sol, &xi, &ht, Variant::Replace).unwrap();
        let r = sol.rho[1];
        let f = Drive::new(&sol.pt, &ht, Variant::Replace).eval(r);
        let want = -r * f / (2.0 * (r - 1.0) - sol.pt.deriv(r));
        assert!((pd.delta[1] - want).norm() < 1e-12 * want.norm());
        assert!(pd.delta_disagreement() < 1e-9);
    }

    #[test]
    fn k_vector_vanishes_for_running_example() {
        let m = erlang2();
        let (sol, xi) = setup(&m);
        let ht = AbateWhitt::new(2.0).unwrap();
        let pd = perturb(&m, &sol, &xi, &ht, Variant::Replace).unwrap();
        // only K₂₁ is nonzero, and column m = 1 of the adjugate never sees it
        if sol.columns[1] == 1 {
            assert!(pd.k_vecs[1].norm() < 1e-15);
        }
        let kk = k_matrix(&sol, &Drive::new(&sol.pt, &ht, Variant::Replace), sol.rho[1]);
        assert_eq!(kk[(0, 0)], cr(0.0));
        assert_eq!(kk[(0, 1)], cr(0.0));
        assert_eq!(kk[(1, 1)], cr(0.0));
        assert!(k_matrix(&sol, &Drive::new(&sol.pt, &ht, Variant::Replace), cr(0.0)).norm() == 0.0);
    }

    #[derive(Debug)]
    struct SameAsExp3;
    impl HeavyTail for SameAsExp3 {
        fn mean(&self) -> f64 {
            1.0 / 3.0
        }
        fn excess_lst(&self, s: C) -> C {
            3.0 / (s + 3.0)
        }
        fn excess_survival(&self, t: f64) -> f64 {
            (-3.0 * t).exp()
        }
        fn describe(&self) -> String {
            "exp(3)".into()
        }
    }

    #[test]
    fn identical_tail_gives_zero_shift() {
        let m = erlang2();
        let (sol, xi) = setup(&m);
        let pd = perturb(&m, &sol, &xi, &SameAsExp3, Variant::Replace).unwrap();
        assert!(pd.delta[1].norm() < 1e-15);
        assert!(pd.z.norm() < 1e-14);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("discard".parse::<Variant>().unwrap(), Variant::Discard);
        assert!("both".parse::<Variant>().is_err());
    }
}
