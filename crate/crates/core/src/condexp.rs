//! R-matrix calculus and closed-form conditional expectations
//! `E[(x_ij)^k | x^n]` under the resolution process.
//!
//! Both closed-form families have real, rational R-matrices once `λ` is
//! rational, so the whole chain is exact. The assembly
//! `Σ_ℓ (-i r^{n+m})^k (i r^{-n})^ℓ R_kℓ` carries powers of `i`; they are
//! tracked as a phase and the imaginary part is required to vanish exactly.

use crate::exact::{binomial_q, factorial_q, poch, q, qpow, Q};
use crate::reference::{numeric_derivative, CharacteristicFn, FamilyKind, ReferenceFamily};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::{One, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CondExpError {
    #[error("no closed-form R-matrix for the {0} family")]
    NoClosedForm(&'static str),
    #[error("singular R-matrix (zero diagonal entry at {0})")]
    Singular(usize),
    #[error("order mismatch: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("coefficient of x^{ell} in degree {k} has nonzero imaginary part")]
    ImaginaryResidue { k: usize, ell: usize },
    #[error("monomial needs {p} distinct children but a cell has only {children}")]
    TooManyChildren { p: usize, children: String },
    #[error("monomial exponents must be at least 1")]
    ZeroExponent,
    #[error("cross moments need at least one refinement step (m >= 1)")]
    NoRefinement,
    #[error("numeric fit failed: {0}")]
    NumericFit(String),
}

/// Lower-triangular `(k+1) x (k+1)` matrix with rational entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RMatrix {
    rows: Vec<Vec<Q>>,
}

impl RMatrix {
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> Q) -> Self {
        RMatrix {
            rows: (0..=order).map(|a| (0..=a).map(|b| f(a, b)).collect()).collect(),
        }
    }

    pub fn identity(order: usize) -> Self {
        Self::from_fn(order, |a, b| if a == b { Q::one() } else { Q::zero() })
    }

    pub fn order(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn get(&self, a: usize, b: usize) -> Q {
        if b > a {
            Q::zero()
        } else {
            self.rows[a][b].clone()
        }
    }

    pub fn truncate(&self, order: usize) -> Self {
        RMatrix {
            rows: self.rows[..=order.min(self.order())].to_vec(),
        }
    }

    pub fn mul(&self, other: &RMatrix) -> Result<RMatrix, CondExpError> {
        if self.order() != other.order() {
            return Err(CondExpError::OrderMismatch(self.order(), other.order()));
        }
        Ok(Self::from_fn(self.order(), |a, b| {
            (b..=a).map(|c| &self.rows[a][c] * &other.rows[c][b]).sum()
        }))
    }

    /// Inverse by forward substitution.
    pub fn inverse(&self) -> Result<RMatrix, CondExpError> {
        let k = self.order();
        let mut inv: Vec<Vec<Q>> = Vec::with_capacity(k + 1);
        for a in 0..=k {
            let diag = &self.rows[a][a];
            if diag.is_zero() {
                return Err(CondExpError::Singular(a));
            }
            let mut row = vec![Q::zero(); a + 1];
            row[a] = diag.recip();
            for b in (0..a).rev() {
                let s: Q = (b..a).map(|c| &self.rows[a][c] * &inv[c][b]).sum();
                row[b] = -s / diag;
            }
            inv.push(row);
        }
        Ok(RMatrix { rows: inv })
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(crate::exact::to_f64).collect())
            .collect()
    }
}

/// `R^k(λ)^{-1}` in closed form.
pub fn r_matrix_inverse(
    family: &ReferenceFamily,
    lambda: &Q,
    order: usize,
) -> Result<RMatrix, CondExpError> {
    match family.kind() {
        FamilyKind::Gamma { alpha0, .. } => {
            let scaled = lambda * alpha0;
            Ok(RMatrix::from_fn(order, |a, b| {
                if a == b {
                    poch(&scaled, a) / poch(alpha0, a)
                } else {
                    Q::zero()
                }
            }))
        }
        FamilyKind::Gaussian { sigma0 } => {
            // Multiplication theorem for Hermite polynomials.
            let shrink = Q::one() - lambda.recip();
            Ok(RMatrix::from_fn(order, |a, b| {
                let gap = a - b;
                if gap % 2 == 1 {
                    return Q::zero();
                }
                let i = gap / 2;
                qpow(lambda, a as i64)
                    * qpow(&shrink, i as i64)
                    * qpow(sigma0, i as i64)
                    * binomial_q(a as u64, gap as u64)
                    * factorial_q(gap as u64)
                    / (qpow(&q(2), i as i64) * factorial_q(i as u64))
            }))
        }
        FamilyKind::Cauchy { .. } => Err(CondExpError::NoClosedForm("cauchy")),
    }
}

pub fn r_matrix(family: &ReferenceFamily, lambda: &Q, order: usize) -> Result<RMatrix, CondExpError> {
    r_matrix_inverse(family, lambda, order)?.inverse()
}

/// `R(μ, λ) = R(μ)^{-1} R(λ)`.
pub fn r_ratio(
    family: &ReferenceFamily,
    mu: &Q,
    lambda: &Q,
    order: usize,
) -> Result<RMatrix, CondExpError> {
    r_matrix_inverse(family, mu, order)?.mul(&r_matrix(family, lambda, order)?)
}

/// Univariate polynomial `Σ c_ℓ x^ℓ` in a coarse value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientPolynomial {
    pub coeffs: Vec<Q>,
}

impl CoefficientPolynomial {
    pub fn new(mut coeffs: Vec<Q>) -> Self {
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(Q::zero());
        }
        CoefficientPolynomial { coeffs }
    }

    pub fn monomial(coef: Q, degree: usize) -> Self {
        let mut coeffs = vec![Q::zero(); degree + 1];
        coeffs[degree] = coef;
        Self::new(coeffs)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, ell: usize) -> Q {
        self.coeffs.get(ell).cloned().unwrap_or_else(Q::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn eval(&self, x: &Q) -> Q {
        self.coeffs.iter().rev().fold(Q::zero(), |acc, c| acc * x + c)
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + crate::exact::to_f64(c))
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..len).map(|i| self.coeff(i) + other.coeff(i)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-Q::one()))
    }

    pub fn scale(&self, s: &Q) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![Q::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }
}

/// Real and imaginary parts of the assembled sum, before the reality check.
pub fn cond_exp_power_parts(
    family: &ReferenceFamily,
    scale_n: &Q,
    scale_m: &Q,
    k: usize,
) -> Result<(Vec<Q>, Vec<Q>), CondExpError> {
    let fine = scale_n * scale_m;
    let ratio = r_ratio(family, &fine.recip(), &scale_n.recip(), k)?;
    let mut re = vec![Q::zero(); k + 1];
    let mut im = vec![Q::zero(); k + 1];
    for ell in 0..=k {
        let magnitude = qpow(&fine, k as i64) * qpow(scale_n, -(ell as i64)) * ratio.get(k, ell);
        // (-i)^k i^ℓ = i^{3k+ℓ}
        match (3 * k + ell) % 4 {
            0 => re[ell] = magnitude,
            1 => im[ell] = magnitude,
            2 => re[ell] = -magnitude,
            _ => im[ell] = -magnitude,
        }
    }
    Ok((re, im))
}

/// `E[(x_ij)^k | x^n]` with `r^n`, `r^m` replaced by arbitrary positive
/// rationals `scale_n`, `scale_m`. Identities that hold for all such values
/// hold symbolically in `(r^n, r^m)`.
pub fn cond_exp_power_scaled(
    family: &ReferenceFamily,
    scale_n: &Q,
    scale_m: &Q,
    k: usize,
) -> Result<CoefficientPolynomial, CondExpError> {
    let (re, im) = cond_exp_power_parts(family, scale_n, scale_m, k)?;
    if let Some(ell) = im.iter().position(|c| !c.is_zero()) {
        return Err(CondExpError::ImaginaryResidue { k, ell });
    }
    Ok(CoefficientPolynomial::new(re))
}

pub fn cond_exp_power(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    k: usize,
) -> Result<CoefficientPolynomial, CondExpError> {
    cond_exp_power_scaled(family, &family.r_pow(n as i64), &family.r_pow(m as i64), k)
}

/// Exponents `(k_1, ..., k_p)` on `p` distinct fine children of one coarse
/// site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MonomialSpec {
    exponents: Vec<usize>,
}

impl MonomialSpec {
    pub fn new(exponents: Vec<usize>) -> Result<Self, CondExpError> {
        if exponents.contains(&0) {
            return Err(CondExpError::ZeroExponent);
        }
        Ok(MonomialSpec { exponents })
    }

    pub fn exponents(&self) -> &[usize] {
        &self.exponents
    }

    pub fn total(&self) -> usize {
        self.exponents.iter().sum()
    }
}

/// Coefficient of `x_i^k` in `E[(x_ij_1)^k_1 ... (x_ij_p)^k_p | x^n]` for the
/// Gamma field.
pub fn gamma_cond_exp_monomial(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    spec: &MonomialSpec,
) -> Result<Q, CondExpError> {
    let (Some(alpha_n), Some(alpha_fine)) = (family.alpha(n as i64), family.alpha((n + m) as i64))
    else {
        return Err(CondExpError::NoClosedForm(family.name()));
    };
    let children = family.r_pow(m as i64);
    let p = spec.exponents.len();
    if Q::from_integer(p.into()) > children {
        return Err(CondExpError::TooManyChildren {
            p,
            children: children.to_string(),
        });
    }
    let k = spec.total();
    let numer: Q = spec.exponents.iter().map(|&kt| poch(&alpha_fine, kt)).product();
    Ok(qpow(&children, k as i64) * numer / poch(&alpha_n, k))
}

/// `E[y_ij y_ij' | x^n]` for `j ≠ j'`.
pub fn cross_moment_yy(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
) -> Result<CoefficientPolynomial, CondExpError> {
    if m == 0 {
        return Err(CondExpError::NoRefinement);
    }
    let square = CoefficientPolynomial::monomial(Q::one(), 2);
    let second = cond_exp_power(family, n, m, 2)?;
    let denom = family.r_pow(m as i64) - Q::one();
    Ok(square.sub(&second).scale(&denom.recip()))
}

/// `E[x_ij x_ij' | x^n]` for two fine sites of the same coarse cell
/// (`same` selects `j = j'`).
pub fn pair_moment(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    same: bool,
) -> Result<CoefficientPolynomial, CondExpError> {
    if same {
        cond_exp_power(family, n, m, 2)
    } else {
        let square = CoefficientPolynomial::monomial(Q::one(), 2);
        Ok(square.add(&cross_moment_yy(family, n, m)?))
    }
}

/// Compare `n -> n+m1 -> n+m1+m2` against the direct `n -> n+m1+m2`
/// conditional expectation of `x^k`.
pub fn tower_check(
    family: &ReferenceFamily,
    n: usize,
    m1: usize,
    m2: usize,
    k: usize,
) -> Result<bool, CondExpError> {
    let direct = cond_exp_power(family, n, m1 + m2, k)?;
    let inner = cond_exp_power(family, n + m1, m2, k)?;
    let mut composed = CoefficientPolynomial::new(vec![Q::zero()]);
    for (ell, c) in inner.coeffs.iter().enumerate() {
        if !c.is_zero() {
            composed = composed.add(&cond_exp_power(family, n, m1, ell)?.scale(c));
        }
    }
    Ok(composed == direct)
}

/// R-matrix estimated from characteristic-function values alone.
/// Experimental: derivatives are numeric and the fit is least squares.
#[derive(Debug, Clone)]
pub struct NumericRMatrix {
    pub entries: DMatrix<Complex64>,
    pub residual: f64,
    pub experimental: bool,
}

/// Solve `f̂^{λ-1} f̂^{(a)} = Σ_{b ≤ a} R_ab (f̂^λ)^{(b)}` row by row on `grid`.
pub fn numeric_r_matrix<F: CharacteristicFn + ?Sized>(
    cf: &F,
    lambda: f64,
    order: usize,
    grid: &[f64],
) -> Result<NumericRMatrix, CondExpError> {
    if grid.len() <= order {
        return Err(CondExpError::NumericFit(format!(
            "grid of {} points for order {order}",
            grid.len()
        )));
    }
    let width = grid.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let h = 2e-2 * width.sqrt();
    let base = |x: f64| cf.log_char(0.0, x).exp();
    let powered = |x: f64| (lambda * cf.log_char(0.0, x)).exp();
    let rows = grid.len();
    let mut target = DMatrix::<Complex64>::zeros(rows, order + 1);
    let mut basis = DMatrix::<Complex64>::zeros(rows, order + 1);
    for (i, &xi) in grid.iter().enumerate() {
        let weight = ((lambda - 1.0) * cf.log_char(0.0, xi)).exp();
        for a in 0..=order {
            target[(i, a)] = weight * numeric_derivative(&base, xi, a, h).0;
            basis[(i, a)] = numeric_derivative(&powered, xi, a, h).0;
        }
    }
    let mut entries = DMatrix::<Complex64>::zeros(order + 1, order + 1);
    let mut residual = 0.0f64;
    for a in 0..=order {
        let cols = basis.columns(0, a + 1).into_owned();
        let rhs: DVector<Complex64> = target.column(a).into_owned();
        let svd = cols.clone().svd(true, true);
        let cutoff = svd.singular_values.max() * 1e-12;
        let sol = svd
            .solve(&rhs, cutoff)
            .map_err(|e| CondExpError::NumericFit(e.to_string()))?;
        let fit = &cols * &sol - &rhs;
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.norm()));
        residual = residual.max(fit.iter().fold(0.0f64, |m, v| m.max(v.norm())) / scale);
        for b in 0..=a {
            entries[(a, b)] = sol[b];
        }
    }
    Ok(NumericRMatrix {
        entries,
        residual,
        experimental: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::qf;

    fn gamma1() -> ReferenceFamily {
        ReferenceFamily::gamma(1, q(1), q(1)).unwrap()
    }

    fn gauss1() -> ReferenceFamily {
        ReferenceFamily::gaussian(1, q(1)).unwrap()
    }

    #[test]
    fn order_one_is_universal() {
        for fam in [gamma1(), gauss1()] {
            let lam = qf(3, 7);
            let r = r_matrix(&fam, &lam, 1).unwrap();
            assert_eq!(r, RMatrix::from_fn(1, |a, b| match (a, b) {
                (0, 0) => q(1),
                (1, 1) => lam.recip(),
                _ => q(0),
            }));
        }
    }

    #[test]
    fn ratio_identity_and_cocycle() {
        let fam = ReferenceFamily::gamma(2, qf(3, 2), q(1)).unwrap();
        let (a, b, c) = (qf(1, 3), qf(5, 4), qf(2, 9));
        assert_eq!(r_ratio(&fam, &a, &a, 5).unwrap(), RMatrix::identity(5));
        let lhs = r_ratio(&fam, &a, &b, 5).unwrap().mul(&r_ratio(&fam, &b, &c, 5).unwrap()).unwrap();
        assert_eq!(lhs, r_ratio(&fam, &a, &c, 5).unwrap());
    }

    #[test]
    fn truncation_consistency() {
        let fam = gauss1();
        let big = r_matrix(&fam, &qf(1, 4), 6).unwrap();
        assert_eq!(big.truncate(4), r_matrix(&fam, &qf(1, 4), 4).unwrap());
    }

    #[test]
    fn gaussian_inverse_entry() {
        let lam = qf(1, 8);
        let inv = r_matrix_inverse(&gauss1(), &lam, 4).unwrap();
        assert_eq!(inv.get(2, 0), &lam * &lam * (q(1) - lam.recip()));
        assert_eq!(inv.get(4, 2), q(6) * qpow(&lam, 4) * (q(1) - lam.recip()));
    }

    #[test]
    fn cauchy_has_no_closed_form() {
        let fam = ReferenceFamily::cauchy(1, q(1)).unwrap();
        assert!(matches!(r_matrix(&fam, &q(2), 2), Err(CondExpError::NoClosedForm(_))));
    }

    #[test]
    fn spec_examples() {
        let x2 = cond_exp_power(&gamma1(), 0, 1, 2).unwrap();
        assert_eq!(x2, CoefficientPolynomial::monomial(qf(3, 2), 2));
        let g2 = cond_exp_power(&gauss1(), 1, 2, 2).unwrap();
        assert_eq!(g2.coeffs, vec![q(8) * (q(1) - qf(1, 4)), q(0), q(1)]);
        for fam in [gamma1(), gauss1()] {
            assert_eq!(
                cond_exp_power(&fam, 2, 3, 1).unwrap(),
                CoefficientPolynomial::monomial(q(1), 1)
            );
        }
    }

    #[test]
    fn monomial_examples() {
        let fam = gamma1();
        let one = MonomialSpec::new(vec![1]).unwrap();
        assert_eq!(gamma_cond_exp_monomial(&fam, 0, 1, &one).unwrap(), q(1));
        let pair = MonomialSpec::new(vec![1, 1]).unwrap();
        let half = gamma_cond_exp_monomial(&fam, 0, 1, &pair).unwrap();
        assert_eq!(half, qf(1, 2));
        let sq = gamma_cond_exp_monomial(&fam, 0, 1, &MonomialSpec::new(vec![2]).unwrap()).unwrap();
        assert_eq!((&sq + q(2) * &half + &sq) / q(4), q(1));
        let three = MonomialSpec::new(vec![1, 1, 1]).unwrap();
        assert!(matches!(
            gamma_cond_exp_monomial(&fam, 0, 1, &three),
            Err(CondExpError::TooManyChildren { .. })
        ));
        assert!(MonomialSpec::new(vec![1, 0]).is_err());
    }

    #[test]
    fn cross_moments() {
        assert_eq!(
            cross_moment_yy(&gamma1(), 0, 1).unwrap(),
            CoefficientPolynomial::monomial(qf(-1, 2), 2)
        );
        let fam = ReferenceFamily::gaussian(2, q(1)).unwrap();
        assert_eq!(cross_moment_yy(&fam, 1, 2).unwrap().coeffs, vec![q(-4)]);
        assert!(cross_moment_yy(&fam, 1, 0).is_err());
    }

    #[test]
    fn towers() {
        for fam in [gamma1(), gauss1()] {
            for k in 0..=6 {
                assert!(tower_check(&fam, 1, 1, 2, k).unwrap());
                assert!(tower_check(&fam, 0, 2, 0, k).unwrap());
            }
        }
    }

    #[test]
    fn numeric_path_tracks_exact() {
        let grid = crate::reference::symmetric_grid(1.5, 31);
        for fam in [gamma1(), gauss1()] {
            let lam = 0.5;
            let num = numeric_r_matrix(&fam, lam, 3, &grid).unwrap();
            assert!(num.experimental);
            let exact = r_matrix(&fam, &qf(1, 2), 3).unwrap().to_f64();
            for a in 0..=3 {
                for b in 0..=a {
                    let err = (num.entries[(a, b)] - Complex64::new(exact[a][b], 0.0)).norm();
                    assert!(err < 1e-4, "{} ({a},{b}) err {err}", fam.name());
                }
            }
        }
    }
}
