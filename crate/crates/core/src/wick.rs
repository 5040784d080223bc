//! Generalized Wick ordering `V^n_k`: the finite part of the ultraviolet
//! limit of `E[(x_ij)^k | x^n]`, normalized so that `V^0_k` is monic.

use crate::condexp::{cond_exp_power, CondExpError, CoefficientPolynomial};
use crate::exact::{factorial_q, poch, q, qpow, solve_exact, Q};
use crate::reference::{FamilyKind, ReferenceFamily};
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WickError {
    #[error(transparent)]
    CondExp(#[from] CondExpError),
    #[error("no Wick polynomial for the {0} family")]
    Unsupported(&'static str),
    #[error("Gaussian Wick polynomials are provided for k <= 4, got {0}")]
    DegreeTooHigh(usize),
    #[error("need m_max >= {need} to resolve degree {k}, got {got}")]
    TooFewSamples { k: usize, need: usize, got: usize },
    #[error("coefficient of x^{0} is not a Laurent polynomial in r^m")]
    NotGeometric(usize),
    #[error("finite part of the leading coefficient vanishes")]
    VanishingLeading,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WickPolynomial {
    pub family: &'static str,
    pub n: usize,
    pub k: usize,
    pub poly: CoefficientPolynomial,
}

/// `V^n_k(x) = (α_0)_k / (r^{kn} (α_n)_k) x^k`.
pub fn wick_gamma(family: &ReferenceFamily, n: usize, k: usize) -> Result<WickPolynomial, WickError> {
    let FamilyKind::Gamma { alpha0, .. } = family.kind() else {
        return Err(WickError::Unsupported(family.name()));
    };
    let alpha_n = family.alpha(n as i64).expect("gamma");
    let coef = poch(alpha0, k) / (qpow(&family.r_pow(n as i64), k as i64) * poch(&alpha_n, k));
    Ok(WickPolynomial {
        family: "gamma",
        n,
        k,
        poly: CoefficientPolynomial::monomial(coef, k),
    })
}

/// `V^n_k(x) = σ^{k/2} He_k(x / √σ)` with `σ = r^n σ_0`, `k <= 4`.
pub fn wick_gaussian(
    family: &ReferenceFamily,
    n: usize,
    k: usize,
) -> Result<WickPolynomial, WickError> {
    if !matches!(family.kind(), FamilyKind::Gaussian { .. }) {
        return Err(WickError::Unsupported(family.name()));
    }
    if k > 4 {
        return Err(WickError::DegreeTooHigh(k));
    }
    let sigma = family.sigma(n as i64).expect("gaussian");
    let mut coeffs = vec![Q::zero(); k + 1];
    for i in 0..=k / 2 {
        let sign = if i % 2 == 0 { Q::one() } else { -Q::one() };
        coeffs[k - 2 * i] = sign * factorial_q(k as u64) * qpow(&sigma, i as i64)
            / (factorial_q(i as u64) * factorial_q((k - 2 * i) as u64) * qpow(&q(2), i as i64));
    }
    Ok(WickPolynomial {
        family: "gaussian",
        n,
        k,
        poly: CoefficientPolynomial::new(coeffs),
    })
}

/// Closed-form Wick polynomial for the family.
pub fn wick(family: &ReferenceFamily, n: usize, k: usize) -> Result<WickPolynomial, WickError> {
    match family.kind() {
        FamilyKind::Gamma { .. } => wick_gamma(family, n, k),
        FamilyKind::Gaussian { .. } => wick_gaussian(family, n, k),
        FamilyKind::Cauchy { .. } => Err(WickError::Unsupported("cauchy")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Growth {
    Divergent,
    Finite,
    Vanishing,
}

/// Behaviour of one coefficient `c_ℓ(m) = Σ_a β_a (r^m)^a` as `m -> ∞`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientClass {
    pub ell: usize,
    /// `(a, β_a)` for the nonzero terms, increasing in `a`.
    pub terms: Vec<(i64, Q)>,
    pub growth: Growth,
    pub finite_part: Q,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtractionReport {
    pub classes: Vec<CoefficientClass>,
    pub normalization: Q,
}

/// Laurent coefficients in `r^m` of every coefficient of `E[(x_ij)^k | x^n]`.
fn laurent_expansion(
    family: &ReferenceFamily,
    n: usize,
    k: usize,
    m_max: usize,
) -> Result<Vec<CoefficientClass>, WickError> {
    let unknowns = 2 * k + 1;
    if m_max < unknowns {
        return Err(WickError::TooFewSamples {
            k,
            need: unknowns,
            got: m_max,
        });
    }
    let samples: Vec<(Q, CoefficientPolynomial)> = (0..=m_max)
        .map(|m| Ok((family.r_pow(m as i64), cond_exp_power(family, n, m, k)?)))
        .collect::<Result<_, CondExpError>>()?;
    let exponents: Vec<i64> = (-(k as i64)..=k as i64).collect();
    let row = |big_m: &Q| -> Vec<Q> { exponents.iter().map(|&a| qpow(big_m, a)).collect() };
    let matrix: Vec<Vec<Q>> = samples[..unknowns].iter().map(|(mm, _)| row(mm)).collect();

    let mut classes = Vec::with_capacity(k + 1);
    for ell in 0..=k {
        let rhs: Vec<Q> = samples[..unknowns].iter().map(|(_, p)| p.coeff(ell)).collect();
        let beta = solve_exact(matrix.clone(), rhs).ok_or(WickError::NotGeometric(ell))?;
        for (mm, p) in &samples[unknowns..] {
            let predicted: Q = row(mm).iter().zip(&beta).map(|(a, b)| a * b).sum();
            if predicted != p.coeff(ell) {
                return Err(WickError::NotGeometric(ell));
            }
        }
        let terms: Vec<(i64, Q)> = exponents
            .iter()
            .zip(beta)
            .filter(|(_, b)| !b.is_zero())
            .map(|(&a, b)| (a, b))
            .collect();
        let growth = match terms.last().map(|(a, _)| *a) {
            Some(a) if a > 0 => Growth::Divergent,
            Some(a) if a < 0 => Growth::Vanishing,
            _ => Growth::Finite,
        };
        let finite_part = terms
            .iter()
            .find(|(a, _)| *a == 0)
            .map(|(_, b)| b.clone())
            .unwrap_or_else(Q::zero);
        classes.push(CoefficientClass {
            ell,
            terms,
            growth,
            finite_part,
        });
    }
    Ok(classes)
}

/// Wick polynomial from the subtraction recipe: expand each coefficient of
/// `E[(x_ij)^k | x^n]` in powers of `r^m`, drop the growing and decaying
/// terms, keep the constant term, and normalize with the level-0 leading
/// coefficient.
pub fn wick_by_subtraction(
    family: &ReferenceFamily,
    n: usize,
    k: usize,
    m_max: usize,
) -> Result<(WickPolynomial, SubtractionReport), WickError> {
    if matches!(family.kind(), FamilyKind::Cauchy { .. }) {
        return Err(WickError::Unsupported("cauchy"));
    }
    let classes = laurent_expansion(family, n, k, m_max)?;
    let base_leading = if n == 0 {
        classes[k].finite_part.clone()
    } else {
        laurent_expansion(family, 0, k, m_max)?[k].finite_part.clone()
    };
    if base_leading.is_zero() {
        return Err(WickError::VanishingLeading);
    }
    let normalization = base_leading.recip();
    let poly = CoefficientPolynomial::new(
        classes.iter().map(|c| &c.finite_part * &normalization).collect(),
    );
    Ok((
        WickPolynomial {
            family: family.name(),
            n,
            k,
            poly,
        },
        SubtractionReport {
            classes,
            normalization,
        },
    ))
}

/// `E[V^{n+m}_k(x_ij) | x^n] - V^n_k(x_i)`, the per-site residual of the
/// cylinder-density identity (up to the common factor `1/r^n`).
pub fn martingale_check(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    k: usize,
) -> Result<CoefficientPolynomial, WickError> {
    let fine = wick(family, n + m, k)?;
    let coarse = wick(family, n, k)?;
    let mut lifted = CoefficientPolynomial::new(vec![Q::zero()]);
    for (ell, c) in fine.poly.coeffs.iter().enumerate() {
        if !c.is_zero() {
            lifted = lifted.add(&cond_exp_power(family, n, m, ell)?.scale(c));
        }
    }
    Ok(lifted.sub(&coarse.poly))
}
