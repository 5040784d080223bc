//! Exact rational helpers shared by the Gamma and Gaussian closed-form paths.
//!
//! Every closed-form quantity in this crate (Pochhammer ratios, dyadic level
//! parameters, Hermite coefficients) is a rational number once the family
//! parameters are rational, so the arithmetic is carried out in `BigRational`.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::str::FromStr;

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qf(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

/// `base^exp` for a possibly negative integer exponent.
pub fn qpow(base: &Q, exp: i64) -> Q {
    if exp >= 0 {
        num_traits::pow(base.clone(), exp as usize)
    } else {
        num_traits::pow(base.recip(), (-exp) as usize)
    }
}

/// `2^exp` as an exact rational (negative exponents allowed).
pub fn pow2(exp: i64) -> Q {
    qpow(&q(2), exp)
}

/// Rising factorial `(x)_k = x (x+1) ... (x+k-1)`, with `(x)_0 = 1`.
pub fn poch(x: &Q, k: usize) -> Q {
    let mut acc = Q::one();
    for t in 0..k {
        acc *= x + q(t as i64);
    }
    acc
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

pub fn binomial_q(n: u64, k: u64) -> Q {
    Q::from_integer(BigInt::from(binomial(n, k)))
}

pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, i| acc * BigUint::from(i))
}

pub fn factorial_q(n: u64) -> Q {
    Q::from_integer(BigInt::from(factorial(n)))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // Fall back to a ratio of logs for values whose parts overflow f64.
        let sign = if x.is_negative() { -1.0 } else { 1.0 };
        let ln = ln_big(&x.numer().abs()) - ln_big(&x.denom().abs());
        sign * ln.exp()
    })
}

fn ln_big(v: &BigInt) -> f64 {
    let bits = v.bits();
    if bits < 1000 {
        return v.to_f64().unwrap().ln();
    }
    let shift = bits - 64;
    let top: BigInt = v >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

/// Parse `"3"`, `"-3/4"`, or a finite decimal such as `"0.125"` exactly.
pub fn parse_rational(s: &str) -> Option<Q> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let num = BigInt::from_str(a.trim()).ok()?;
        let den = BigInt::from_str(b.trim()).ok()?;
        if den.is_zero() {
            return None;
        }
        return Some(Q::new(num, den));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], s[pos + 1..].parse::<i64>().ok()?),
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if frac_part.chars().any(|c| !c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let num = BigInt::from_str(&digits).ok()?;
    let scale = exp - frac_part.len() as i64;
    Some(Q::from_integer(num) * qpow(&q(10), scale))
}

/// Exact rational rendered as `"p/q"` (or `"p"` when integral).
pub fn fmt_exact(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn max_abs<'a>(values: impl IntoIterator<Item = &'a Q>) -> Q {
    values
        .into_iter()
        .map(|v| v.abs())
        .fold(Q::zero(), |acc, v| if v > acc { v } else { acc })
}

/// Solve the square system `a x = b` exactly by Gaussian elimination.
/// Returns `None` when `a` is singular.
pub fn solve_exact(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Option<Vec<Q>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            if a[row][col].is_zero() {
                continue;
            }
            let factor = &a[row][col] / &a[col][col];
            for c in col..n {
                let delta = &factor * &a[col][c];
                a[row][c] -= delta;
            }
            let delta = &factor * &b[col];
            b[row] -= delta;
        }
    }
    let mut x = vec![Q::zero(); n];
    for row in (0..n).rev() {
        let s: Q = (row + 1..n).map(|c| &a[row][c] * &x[c]).sum();
        x[row] = (&b[row] - s) / &a[row][row];
    }
    Some(x)
}
