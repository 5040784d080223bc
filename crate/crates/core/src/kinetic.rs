//! Lattice kinetic energy, its conditional expectation under refinement, and
//! the first-order renormalized kinetic energy for Gamma and Gaussian
//! references.
//!
//! Quadratic forms are stored as weighted bonds: `L(x) = (1/r^n) Σ_e c(e) x(e)`
//! where a bond is either a loop `(i, i)` with `x(e) = x_i²` or a nearest
//! neighbour pair with `x(e) = x_i x_i'`. Each torus bond is listed once, so
//! the approximate kinetic energy `Σ_e ½ (Δ_e x / ε^n)²` has loop weight `d`
//! and bond weight `-1` (times `ε^{-2n}`).

use crate::condexp::{cond_exp_power, pair_moment, CondExpError, CoefficientPolynomial};
use crate::exact::{pow2, q, to_f64, Q};
use crate::lattice::LatticeConfig;
use crate::reference::{FamilyKind, ReferenceFamily};
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticError {
    #[error(transparent)]
    CondExp(#[from] CondExpError),
    #[error("field has {got} values but level {level} has {want} sites")]
    FieldSize { level: usize, got: usize, want: usize },
    #[error("kinetic renormalization is not available for the {0} family")]
    Unsupported(&'static str),
}

/// Weighted bond list at one level, evaluated as `(1/r^n) Σ c(e) x(e)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadraticForm {
    pub level: usize,
    pub lattice: LatticeConfig,
    /// `(a, b, c)` with `a <= b`; `a == b` is a loop.
    pub terms: Vec<(usize, usize, Q)>,
}

impl QuadraticForm {
    fn from_weights(lattice: LatticeConfig, level: usize, loop_w: Q, bond_w: Q) -> Self {
        let mut terms = Vec::new();
        for s in 0..lattice.num_sites(level) {
            terms.push((s, s, loop_w.clone()));
        }
        for (a, b) in lattice.bonds(level) {
            terms.push((a.min(b), a.max(b), bond_w.clone()));
        }
        QuadraticForm {
            level,
            lattice,
            terms,
        }
    }

    /// `T_app^n` with loop weight `d ε^{-2n}` and bond weight `-ε^{-2n}`.
    pub fn kinetic(lattice: LatticeConfig, n: usize) -> Self {
        let scale = pow2(2 * n as i64);
        Self::from_weights(lattice, n, q(lattice.d() as i64) * &scale, -scale)
    }

    /// Diagonal form `(1/r^n) Σ c x_i²`.
    pub fn diagonal(lattice: LatticeConfig, n: usize, coef: Q) -> Self {
        QuadraticForm {
            level: n,
            lattice,
            terms: (0..lattice.num_sites(n)).map(|s| (s, s, coef.clone())).collect(),
        }
    }

    pub fn num_sites(&self) -> usize {
        self.lattice.num_sites(self.level)
    }

    fn check(&self, x_len: usize) -> Result<(), KineticError> {
        if x_len != self.num_sites() {
            return Err(KineticError::FieldSize {
                level: self.level,
                got: x_len,
                want: self.num_sites(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[Q]) -> Result<Q, KineticError> {
        self.check(x.len())?;
        let sum: Q = self.terms.iter().map(|(a, b, c)| c * &x[*a] * &x[*b]).sum();
        Ok(sum * self.lattice.cell_volume(self.level))
    }

    pub fn eval_f64(&self, x: &[f64]) -> Result<f64, KineticError> {
        self.check(x.len())?;
        let coefs: Vec<f64> = self.terms.iter().map(|(_, _, c)| crate::exact::to_f64(c)).collect();
        let sum: f64 = self
            .terms
            .iter()
            .zip(&coefs)
            .map(|((a, b, _), c)| c * x[*a] * x[*b])
            .sum();
        Ok(sum / self.num_sites() as f64)
    }

    /// Symmetric matrix `M` with `L(x) = (1/r^n) xᵀ M x`.
    pub fn matrix(&self) -> Vec<Vec<Q>> {
        let n = self.num_sites();
        let mut m = vec![vec![Q::zero(); n]; n];
        for (a, b, c) in &self.terms {
            if a == b {
                m[*a][*a] += c;
            } else {
                let half = c / q(2);
                m[*a][*b] += &half;
                m[*b][*a] += half;
            }
        }
        m
    }

    pub fn row_sums(&self) -> Vec<Q> {
        self.matrix().iter().map(|r| r.iter().sum()).collect()
    }
}

/// Approximate kinetic energy of a level-`n` field.
pub fn t_app(lattice: LatticeConfig, n: usize, x: &[Q]) -> Result<Q, KineticError> {
    QuadraticForm::kinetic(lattice, n).eval(x)
}

/// Polynomial in the coarse values: quadratic part keyed by `(i, i')`,
/// `i <= i'`, plus per-site linear terms and a constant.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoarsePolynomial {
    pub quadratic: BTreeMap<(usize, usize), Q>,
    pub linear: BTreeMap<usize, Q>,
    pub constant: Q,
}

impl CoarsePolynomial {
    fn add_quadratic(&mut self, a: usize, b: usize, c: Q) {
        *self.quadratic.entry((a.min(b), a.max(b))).or_insert_with(Q::zero) += c;
    }

    fn add_site_poly(&mut self, site: usize, poly: &CoefficientPolynomial, weight: &Q) {
        self.constant += poly.coeff(0) * weight;
        *self.linear.entry(site).or_insert_with(Q::zero) += poly.coeff(1) * weight;
        self.add_quadratic(site, site, poly.coeff(2) * weight);
    }

    fn from_form(form: &QuadraticForm, scale: &Q) -> Self {
        let mut out = CoarsePolynomial::default();
        let norm = form.lattice.cell_volume(form.level) * scale;
        for (a, b, c) in &form.terms {
            out.add_quadratic(*a, *b, c * &norm);
        }
        out
    }

    fn normalized(mut self) -> Self {
        self.quadratic.retain(|_, v| !v.is_zero());
        self.linear.retain(|_, v| !v.is_zero());
        self
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.quadratic {
            *out.quadratic.entry(*k).or_insert_with(Q::zero) -= v;
        }
        for (k, v) in &other.linear {
            *out.linear.entry(*k).or_insert_with(Q::zero) -= v;
        }
        out.constant -= &other.constant;
        out.normalized()
    }

    pub fn is_zero(&self) -> bool {
        let n = self.clone().normalized();
        n.quadratic.is_empty() && n.linear.is_empty() && n.constant.is_zero()
    }

    pub fn eval(&self, x: &[Q]) -> Q {
        let quad: Q = self.quadratic.iter().map(|((a, b), c)| c * &x[*a] * &x[*b]).sum();
        let lin: Q = self.linear.iter().map(|(a, c)| c * &x[*a]).sum();
        quad + lin + &self.constant
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        let quad: f64 = self.quadratic.iter().map(|((a, b), c)| to_f64(c) * x[*a] * x[*b]).sum();
        let lin: f64 = self.linear.iter().map(|(a, c)| to_f64(c) * x[*a]).sum();
        quad + lin + to_f64(&self.constant)
    }
}

/// `E[L^{n+m}(x^{n+m}) | x^n]` for a fine-level form, by summing the
/// conditional pair moments bond by bond.
pub fn cond_exp_form(
    family: &ReferenceFamily,
    form: &QuadraticForm,
    n: usize,
) -> Result<CoarsePolynomial, KineticError> {
    let m = form.level - n;
    let lattice = form.lattice;
    let block = lattice.num_sites(m);
    let same = pair_moment(family, n, m, true)?;
    let distinct = if m > 0 { Some(pair_moment(family, n, m, false)?) } else { None };
    let norm = lattice.cell_volume(form.level);
    let mut out = CoarsePolynomial::default();
    for (a, b, c) in &form.terms {
        let w = c * &norm;
        let (ia, ib) = (a / block, b / block);
        if ia != ib {
            out.add_quadratic(ia, ib, w);
        } else if a == b {
            out.add_site_poly(ia, &same, &w);
        } else {
            out.add_site_poly(ia, distinct.as_ref().expect("m > 0 for distinct children"), &w);
        }
    }
    Ok(out.normalized())
}

/// `ε^{-m} E[y²] - (ε^{-m} - 1) E[y y']`, the per-site shift polynomial.
pub fn t_shift(family: &ReferenceFamily, n: usize, m: usize) -> Result<CoefficientPolynomial, KineticError> {
    if m == 0 {
        return Ok(CoefficientPolynomial::new(vec![Q::zero()]));
    }
    let square = CoefficientPolynomial::monomial(Q::one(), 2);
    let y2 = cond_exp_power(family, n, m, 2)?.sub(&square);
    let yy = crate::condexp::cross_moment_yy(family, n, m)?;
    let eps_m = pow2(m as i64);
    Ok(y2.scale(&eps_m).sub(&yy.scale(&(eps_m - Q::one()))))
}

/// Closed form of `T_shift` per family.
pub fn t_shift_closed(family: &ReferenceFamily, n: usize, m: usize) -> Result<CoefficientPolynomial, KineticError> {
    let grow = pow2(m as i64) * family.r_pow(m as i64) - Q::one();
    match family.kind() {
        FamilyKind::Gamma { .. } => {
            let alpha_n = family.alpha(n as i64).expect("gamma");
            Ok(CoefficientPolynomial::monomial(grow / (alpha_n + Q::one()), 2))
        }
        FamilyKind::Gaussian { sigma0 } => {
            Ok(CoefficientPolynomial::new(vec![family.r_pow(n as i64) * sigma0 * grow]))
        }
        FamilyKind::Cauchy { .. } => Err(KineticError::Unsupported("cauchy")),
    }
}

/// Components of `E[T_app^{n+m} | x^n] = mult (ε^n T_app^n + d ε^{-n} T_shift)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KineticIdentity {
    pub multiplier: Q,
    pub shift: CoefficientPolynomial,
}

pub fn cond_exp_t_app(family: &ReferenceFamily, n: usize, m: usize) -> Result<KineticIdentity, KineticError> {
    Ok(KineticIdentity {
        multiplier: pow2((n + m) as i64),
        shift: t_shift(family, n, m)?,
    })
}

/// Right-hand side of the kinetic identity as a coarse polynomial.
pub fn kinetic_identity_rhs(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
) -> Result<CoarsePolynomial, KineticError> {
    let lattice = family.lattice();
    let ident = cond_exp_t_app(family, n, m)?;
    let eps_n = pow2(-(n as i64));
    let coarse = QuadraticForm::kinetic(lattice, n);
    let mut out = CoarsePolynomial::from_form(&coarse, &(&ident.multiplier * &eps_n));
    let weight = &ident.multiplier * q(lattice.d() as i64) * pow2(n as i64) * lattice.cell_volume(n);
    for site in 0..lattice.num_sites(n) {
        out.add_site_poly(site, &ident.shift, &weight);
    }
    Ok(out.normalized())
}

/// `E[T_app^{n+m} | x^n]` minus the closed-form right-hand side.
pub fn kinetic_identity_residual(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
) -> Result<CoarsePolynomial, KineticError> {
    let fine = QuadraticForm::kinetic(family.lattice(), n + m);
    Ok(cond_exp_form(family, &fine, n)?.sub(&kinetic_identity_rhs(family, n, m)?))
}

/// Renormalized kinetic energy as a bond form:
/// Gamma gives loops `d α_n ε^{-n}/(1+α_n)` and bonds `-ε^{-n}`.
/// The Gaussian counterterm is a constant and is returned separately by
/// [`t_ren_gaussian`].
pub fn kinetic_adjacency_gamma(family: &ReferenceFamily, n: usize) -> Result<QuadraticForm, KineticError> {
    let Some(alpha_n) = family.alpha(n as i64) else {
        return Err(KineticError::Unsupported(family.name()));
    };
    let lattice = family.lattice();
    let eps_inv = pow2(n as i64);
    let loop_w = q(lattice.d() as i64) * &alpha_n * &eps_inv / (Q::one() + &alpha_n);
    Ok(QuadraticForm::from_weights(lattice, n, loop_w, -eps_inv))
}

/// `ε^n T_app^n - d ε^{-n}/(α_n+1) (1/r^n) Σ x_i²`.
pub fn t_ren_gamma(family: &ReferenceFamily, n: usize, x: &[Q]) -> Result<Q, KineticError> {
    kinetic_adjacency_gamma(family, n)?.eval(x)
}

/// `ε^n T_app^n - d σ_0 ε^{-n} r^n`.
pub fn t_ren_gaussian(family: &ReferenceFamily, n: usize, x: &[Q]) -> Result<Q, KineticError> {
    let FamilyKind::Gaussian { sigma0 } = family.kind() else {
        return Err(KineticError::Unsupported(family.name()));
    };
    let lattice = family.lattice();
    let kinetic = t_app(lattice, n, x)? * pow2(-(n as i64));
    Ok(kinetic - gaussian_counterterm(family, n, sigma0))
}

fn gaussian_counterterm(family: &ReferenceFamily, n: usize, sigma0: &Q) -> Q {
    q(family.d() as i64) * sigma0 * pow2(n as i64) * family.r_pow(n as i64)
}

/// `E[ε^{n+m} T_app^{n+m} - counterterm^{n+m} | x^n] - T_ren^n`. The
/// counterterm is subtracted at the fine level, so the residual is exactly
/// zero for every `m`, not only in the limit.
pub fn t_ren_martingale_residual(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
) -> Result<CoarsePolynomial, KineticError> {
    let lattice = family.lattice();
    let fine_level = n + m;
    let eps_fine = pow2(-(fine_level as i64));
    let fine_kinetic = QuadraticForm::kinetic(lattice, fine_level);
    let scaled = QuadraticForm {
        terms: fine_kinetic
            .terms
            .iter()
            .map(|(a, b, c)| (*a, *b, c * &eps_fine))
            .collect(),
        ..fine_kinetic
    };
    let mut lhs = cond_exp_form(family, &scaled, n)?;
    let coarse = match family.kind() {
        FamilyKind::Gamma { .. } => {
            let alpha_fine = family.alpha(fine_level as i64).expect("gamma");
            let mass = q(lattice.d() as i64) * pow2(fine_level as i64) / (alpha_fine + Q::one());
            let counter = QuadraticForm::diagonal(lattice, fine_level, mass);
            lhs = lhs.sub(&cond_exp_form(family, &counter, n)?);
            CoarsePolynomial::from_form(&kinetic_adjacency_gamma(family, n)?, &Q::one())
        }
        FamilyKind::Gaussian { sigma0 } => {
            lhs.constant -= gaussian_counterterm(family, fine_level, sigma0);
            let mut ren = CoarsePolynomial::from_form(&QuadraticForm::kinetic(lattice, n), &pow2(-(n as i64)));
            ren.constant -= gaussian_counterterm(family, n, sigma0);
            ren
        }
        FamilyKind::Cauchy { .. } => return Err(KineticError::Unsupported("cauchy")),
    };
    Ok(lhs.sub(&coarse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::qf;

    fn d1() -> LatticeConfig {
        LatticeConfig::new(1).unwrap()
    }

    #[test]
    fn t_app_examples() {
        let lat = d1();
        assert_eq!(t_app(lat, 2, &vec![q(3); 4]).unwrap(), q(0));
        assert_eq!(t_app(lat, 1, &[q(0), q(1)]).unwrap(), q(2));
        let x = [q(1), q(-2), qf(1, 3), q(5)];
        let y: Vec<Q> = x.iter().map(|v| v * q(2)).collect();
        assert_eq!(t_app(lat, 2, &y).unwrap(), q(4) * t_app(lat, 2, &x).unwrap());
        assert!(t_app(lat, 2, &x[..3]).is_err());
    }

    #[test]
    fn kinetic_rows_sum_to_zero() {
        for d in 1..=2 {
            let lat = LatticeConfig::new(d).unwrap();
            for n in 0..=2 {
                assert!(QuadraticForm::kinetic(lat, n).row_sums().iter().all(|s| s.is_zero()));
            }
        }
    }

    #[test]
    fn shift_closed_forms() {
        let gam = ReferenceFamily::gamma(1, q(1), q(1)).unwrap();
        let gau = ReferenceFamily::gaussian(2, qf(3, 2)).unwrap();
        for n in 0..=2 {
            for m in 0..=3 {
                assert_eq!(t_shift(&gam, n, m).unwrap(), t_shift_closed(&gam, n, m).unwrap());
                assert_eq!(t_shift(&gau, n, m).unwrap(), t_shift_closed(&gau, n, m).unwrap());
            }
        }
        let id = cond_exp_t_app(&gam, 2, 0).unwrap();
        assert_eq!(id.multiplier, q(4));
        assert!(id.shift.is_zero());
    }

    #[test]
    fn kinetic_theorem_small() {
        let gam = ReferenceFamily::gamma(1, q(1), q(1)).unwrap();
        for (n, m) in [(1, 1), (1, 2), (2, 1)] {
            assert!(kinetic_identity_residual(&gam, n, m).unwrap().is_zero(), "n={n} m={m}");
        }
        // A single coarse cell wraps onto itself, so bonds across its
        // boundary join siblings and pick up the y-y' correlation.
        assert!(!kinetic_identity_residual(&gam, 0, 1).unwrap().is_zero());
    }

    #[test]
    fn t_ren_examples() {
        let gam = ReferenceFamily::gamma(1, q(1), q(1)).unwrap();
        let x = [q(2)];
        assert_eq!(t_ren_gamma(&gam, 0, &x).unwrap(), t_app(d1(), 0, &x).unwrap() - q(2));
        let c = qf(3, 2);
        let field = vec![c.clone(); 4];
        let want = -(pow2(2) / (gam.alpha(2).unwrap() + q(1))) * &c * &c;
        assert_eq!(t_ren_gamma(&gam, 2, &field).unwrap(), want);
        let gau = ReferenceFamily::gaussian(1, q(1)).unwrap();
        assert_eq!(t_ren_gaussian(&gau, 0, &x).unwrap(), t_app(d1(), 0, &x).unwrap() - q(1));
        assert_eq!(t_ren_gaussian(&gau, 1, &[q(0), q(0)]).unwrap(), q(-4));
    }

    #[test]
    fn adjacency_gamma() {
        let gam = ReferenceFamily::gamma(1, q(1), q(1)).unwrap();
        let form = kinetic_adjacency_gamma(&gam, 0).unwrap();
        assert!(form.terms.iter().any(|(a, b, c)| a == b && *c == qf(1, 2)));
        assert!(form.terms.iter().any(|(_, _, c)| *c == q(-1)));
        let form = kinetic_adjacency_gamma(&gam, 2).unwrap();
        assert!(form.row_sums().iter().all(|s| !s.is_zero()));
    }

    #[test]
    fn ren_martingale_exact() {
        let gam = ReferenceFamily::gamma(1, q(1), q(1)).unwrap();
        let gau = ReferenceFamily::gaussian(1, q(1)).unwrap();
        for m in 0..=3 {
            assert!(t_ren_martingale_residual(&gam, 1, m).unwrap().is_zero());
            assert!(t_ren_martingale_residual(&gau, 1, m).unwrap().is_zero());
        }
    }
}
