//! Infinitely divisible reference families and their characteristic functions.
//!
//! A family is fixed by its base characteristic function `f̂_0`; the level-`t`
//! member is `f̂_t(ξ) = f̂_0(r^t ξ)^{1/r^t}`. Everything here works with the
//! analytic logarithm `log f̂_t`, which avoids underflow for the wide Gaussian
//! levels and sidesteps the principal-branch ambiguity of complex powers.

use crate::exact::{to_f64, Q};
use crate::lattice::{LatticeConfig, LatticeError};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::{Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use statrs::distribution::Continuous;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("parameter {name} must be positive")]
    NonPositive { name: &'static str },
    #[error("parameter {name} must be nonnegative")]
    Negative { name: &'static str },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("characteristic function vanishes at xi = {0}; its root is ambiguous")]
    Vanishing(f64),
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("{len} values cannot be split into blocks of {block}")]
    BlockMismatch { len: usize, block: usize },
    #[error("least-squares fit is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("the grid must contain at least {0} points")]
    GridTooSmall(usize),
}

/// A characteristic function family `t -> f̂_t` on the refining lattice.
pub trait CharacteristicFn: Sync {
    /// Children per cell.
    fn r(&self) -> f64;

    /// `log f̂_0(ξ)`, continuous in `ξ` with value 0 at the origin.
    fn log_base(&self, xi: f64) -> Complex64;

    fn log_char(&self, t: f64, xi: f64) -> Complex64 {
        let s = self.r().powf(t);
        self.log_base(s * xi) / s
    }

    fn char_fn(&self, t: f64, xi: f64) -> Complex64 {
        self.log_char(t, xi).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    /// Shape/rate parameters at level 0.
    Gamma { alpha0: Q, beta0: Q },
    /// Variance at level 0.
    Gaussian { sigma0: Q },
    Cauchy { scale: Q },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFamily {
    kind: FamilyKind,
    lattice: LatticeConfig,
}

impl ReferenceFamily {
    pub fn new(kind: FamilyKind, d: usize) -> Result<Self, ReferenceError> {
        let positive = |x: &Q, name| {
            if x.is_positive() {
                Ok(())
            } else {
                Err(ReferenceError::NonPositive { name })
            }
        };
        match &kind {
            FamilyKind::Gamma { alpha0, beta0 } => {
                positive(alpha0, "alpha0")?;
                positive(beta0, "beta0")?;
            }
            FamilyKind::Gaussian { sigma0 } => positive(sigma0, "sigma0")?,
            FamilyKind::Cauchy { scale } => positive(scale, "scale")?,
        }
        Ok(ReferenceFamily {
            kind,
            lattice: LatticeConfig::new(d)?,
        })
    }

    pub fn gamma(d: usize, alpha0: Q, beta0: Q) -> Result<Self, ReferenceError> {
        Self::new(FamilyKind::Gamma { alpha0, beta0 }, d)
    }

    pub fn gaussian(d: usize, sigma0: Q) -> Result<Self, ReferenceError> {
        Self::new(FamilyKind::Gaussian { sigma0 }, d)
    }

    pub fn cauchy(d: usize, scale: Q) -> Result<Self, ReferenceError> {
        Self::new(FamilyKind::Cauchy { scale }, d)
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Gamma { .. } => "gamma",
            FamilyKind::Gaussian { .. } => "gaussian",
            FamilyKind::Cauchy { .. } => "cauchy",
        }
    }

    pub fn lattice(&self) -> LatticeConfig {
        self.lattice
    }

    pub fn d(&self) -> usize {
        self.lattice.d()
    }

    /// `r^n` as an exact rational.
    pub fn r_pow(&self, n: i64) -> Q {
        crate::exact::pow2(n * self.d() as i64)
    }

    /// Shape `α_n = α_0 / r^n` (Gamma only).
    pub fn alpha(&self, n: i64) -> Option<Q> {
        match &self.kind {
            FamilyKind::Gamma { alpha0, .. } => Some(alpha0 * self.r_pow(-n)),
            _ => None,
        }
    }

    /// Rate `β_n = β_0 / r^n` (Gamma only).
    pub fn beta(&self, n: i64) -> Option<Q> {
        match &self.kind {
            FamilyKind::Gamma { beta0, .. } => Some(beta0 * self.r_pow(-n)),
            _ => None,
        }
    }

    /// Variance `σ_n = r^n σ_0` (Gaussian only).
    pub fn sigma(&self, n: i64) -> Option<Q> {
        match &self.kind {
            FamilyKind::Gaussian { sigma0 } => Some(sigma0 * self.r_pow(n)),
            _ => None,
        }
    }

    fn level_params(&self, t: f64) -> (f64, f64) {
        let s = self.r().powf(t);
        match &self.kind {
            FamilyKind::Gamma { alpha0, beta0 } => (to_f64(alpha0) / s, to_f64(beta0) / s),
            FamilyKind::Gaussian { sigma0 } => (to_f64(sigma0) * s, 0.0),
            FamilyKind::Cauchy { scale } => (to_f64(scale), 0.0),
        }
    }

    /// Density of the level-`n` marginal.
    pub fn density(&self, n: i64, x: f64) -> f64 {
        let (a, b) = self.level_params(n as f64);
        match self.kind {
            FamilyKind::Gamma { .. } => {
                if x <= 0.0 {
                    0.0
                } else {
                    statrs::distribution::Gamma::new(a, b)
                        .map(|g| g.pdf(x))
                        .unwrap_or(0.0)
                }
            }
            FamilyKind::Gaussian { .. } => statrs::distribution::Normal::new(0.0, a.sqrt())
                .map(|g| g.pdf(x))
                .unwrap_or(0.0),
            FamilyKind::Cauchy { .. } => statrs::distribution::Cauchy::new(0.0, a)
                .map(|g| g.pdf(x))
                .unwrap_or(0.0),
        }
    }

    /// Sampler for the level-`n` marginal.
    pub fn sampler(&self, n: i64) -> Result<LevelSampler, ReferenceError> {
        let (a, b) = self.level_params(n as f64);
        let bad = ReferenceError::NonPositive { name: "level parameter" };
        Ok(match self.kind {
            FamilyKind::Gamma { .. } => {
                LevelSampler::Gamma(rand_distr::Gamma::new(a, 1.0 / b).map_err(|_| bad)?)
            }
            FamilyKind::Gaussian { .. } => {
                LevelSampler::Normal(rand_distr::Normal::new(0.0, a.sqrt()).map_err(|_| bad)?)
            }
            FamilyKind::Cauchy { .. } => {
                LevelSampler::Cauchy(rand_distr::Cauchy::new(0.0, a).map_err(|_| bad)?)
            }
        })
    }

    /// `count` iid draws from the level-`n` marginal, reproducible per seed.
    pub fn sample(&self, n: i64, count: usize, seed: u64) -> Result<Vec<f64>, ReferenceError> {
        if count == 0 {
            return Err(ReferenceError::EmptySample);
        }
        let sampler = self.sampler(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
    }

    /// Closed-form `k`-th derivative of `f̂_t` at `ξ` (Gamma and Gaussian).
    pub fn derivative(&self, t: f64, k: usize, xi: f64) -> Option<Complex64> {
        let (a, b) = self.level_params(t);
        let i = Complex64::i();
        match self.kind {
            FamilyKind::Gamma { .. } => {
                let base = Complex64::new(1.0, -xi / b);
                let mut coef = Complex64::new(1.0, 0.0);
                for j in 0..k {
                    coef *= i * (a + j as f64) / b;
                }
                Some(coef * base.powc(Complex64::new(-a - k as f64, 0.0)))
            }
            FamilyKind::Gaussian { .. } => {
                // f' = -σξ f, so f^{(j+1)} = -σ(ξ f^{(j)} + j f^{(j-1)}).
                let f0 = Complex64::new((-a * xi * xi / 2.0).exp(), 0.0);
                let (mut prev, mut cur) = (Complex64::zero(), f0);
                for j in 0..k {
                    let next = -a * (xi * cur + j as f64 * prev);
                    prev = cur;
                    cur = next;
                }
                Some(cur)
            }
            FamilyKind::Cauchy { .. } => None,
        }
    }
}

impl CharacteristicFn for ReferenceFamily {
    fn r(&self) -> f64 {
        self.lattice.r() as f64
    }

    fn log_base(&self, xi: f64) -> Complex64 {
        self.log_char(0.0, xi)
    }

    fn log_char(&self, t: f64, xi: f64) -> Complex64 {
        let (a, b) = self.level_params(t);
        match self.kind {
            FamilyKind::Gamma { .. } => -a * Complex64::new(1.0, -xi / b).ln(),
            FamilyKind::Gaussian { .. } => Complex64::new(-a * xi * xi / 2.0, 0.0),
            FamilyKind::Cauchy { .. } => Complex64::new(-a * xi.abs(), 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LevelSampler {
    Gamma(rand_distr::Gamma<f64>),
    Normal(rand_distr::Normal<f64>),
    Cauchy(rand_distr::Cauchy<f64>),
}

impl Distribution<f64> for LevelSampler {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LevelSampler::Gamma(g) => g.sample(rng),
            LevelSampler::Normal(g) => g.sample(rng),
            LevelSampler::Cauchy(g) => g.sample(rng),
        }
    }
}

/// Jump law of a Lévy characteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpLaw {
    Exponential { rate: f64 },
    Normal { mean: f64, sd: f64 },
}

/// `c(ξ) = i b ξ - σ ξ²/2 + λ ∫ (e^{iξy} - 1) r(dy)`, with `f̂_0 = e^{c}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyCharacteristic {
    pub drift: f64,
    pub diffusion: f64,
    pub jump_intensity: f64,
    pub jump: JumpLaw,
    pub d: usize,
}

impl LevyCharacteristic {
    pub fn new(
        drift: f64,
        diffusion: f64,
        jump_intensity: f64,
        jump: JumpLaw,
        d: usize,
    ) -> Result<Self, ReferenceError> {
        if diffusion < 0.0 {
            return Err(ReferenceError::Negative { name: "diffusion" });
        }
        if jump_intensity < 0.0 {
            return Err(ReferenceError::Negative { name: "jump_intensity" });
        }
        match jump {
            JumpLaw::Exponential { rate } if rate <= 0.0 => {
                return Err(ReferenceError::NonPositive { name: "rate" })
            }
            JumpLaw::Normal { sd, .. } if sd < 0.0 => {
                return Err(ReferenceError::Negative { name: "sd" })
            }
            _ => {}
        }
        LatticeConfig::new(d)?;
        Ok(LevyCharacteristic {
            drift,
            diffusion,
            jump_intensity,
            jump,
            d,
        })
    }
}

impl CharacteristicFn for LevyCharacteristic {
    fn r(&self) -> f64 {
        (1usize << self.d) as f64
    }

    fn log_base(&self, xi: f64) -> Complex64 {
        let i = Complex64::i();
        let jump = match self.jump {
            JumpLaw::Exponential { rate } => Complex64::new(1.0, 0.0) / Complex64::new(1.0, -xi / rate),
            JumpLaw::Normal { mean, sd } => (i * mean * xi - sd * sd * xi * xi / 2.0).exp(),
        };
        i * self.drift * xi - self.diffusion * xi * xi / 2.0
            + self.jump_intensity * (jump - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatReport {
    pub n: i64,
    pub max_deviation: f64,
    /// Grid points where the principal power of `f̂_n(rξ)` would pick the
    /// wrong root; the analytic branch is used there.
    pub branch_points: usize,
}

/// `max_ξ |f̂_{n+1}(ξ) - f̂_n(rξ)^{1/r}|`, with the root taken along the
/// analytic logarithm.
pub fn verify_compatibility<F: CharacteristicFn + ?Sized>(
    family: &F,
    n: i64,
    grid: &[f64],
) -> CompatReport {
    let r = family.r();
    let mut max_deviation = 0.0f64;
    let mut branch_points = 0;
    for &xi in grid {
        let lhs = family.log_char(n as f64 + 1.0, xi).exp();
        let log_coarse = family.log_char(n as f64, r * xi);
        if log_coarse.im <= -PI || log_coarse.im > PI {
            branch_points += 1;
        }
        let rhs = (log_coarse / r).exp();
        max_deviation = max_deviation.max((lhs - rhs).norm());
    }
    CompatReport {
        n,
        max_deviation,
        branch_points,
    }
}

/// Compatibility check for a family known only through its values, using
/// principal-branch roots. Fails where the value vanishes.
pub fn verify_compatibility_values<G>(f: G, r: f64, n: i64, grid: &[f64]) -> Result<f64, ReferenceError>
where
    G: Fn(f64, f64) -> Complex64,
{
    let mut max_deviation = 0.0f64;
    for &xi in grid {
        let coarse = f(n as f64, r * xi);
        if coarse.norm() == 0.0 {
            return Err(ReferenceError::Vanishing(xi));
        }
        let rhs = (coarse.ln() / r).exp();
        max_deviation = max_deviation.max((f(n as f64 + 1.0, xi) - rhs).norm());
    }
    Ok(max_deviation)
}

/// Evenly spaced grid of `count` points on `[-half_width, half_width]`.
pub fn symmetric_grid(half_width: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|j| -half_width + 2.0 * half_width * j as f64 / (count - 1) as f64)
        .collect()
}

/// Block means of `values`, blocks of `block` consecutive entries.
pub fn coarse_grain(values: &[f64], block: usize) -> Result<Vec<f64>, ReferenceError> {
    if block == 0 || values.len() % block != 0 {
        return Err(ReferenceError::BlockMismatch {
            len: values.len(),
            block,
        });
    }
    Ok(values
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect())
}

/// Central-difference `order`-th derivative with one Richardson step.
/// Returns the estimate and the magnitude of the Richardson correction.
pub fn numeric_derivative<G>(f: &G, xi: f64, order: usize, h: f64) -> (Complex64, f64)
where
    G: Fn(f64) -> Complex64 + ?Sized,
{
    if order == 0 {
        return (f(xi), 0.0);
    }
    let central = |h: f64| {
        let mut acc = Complex64::zero();
        let mut c = 1.0f64;
        for j in 0..=order {
            let offset = (order as f64 / 2.0 - j as f64) * h;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * c * f(xi + offset);
            c = c * (order - j) as f64 / (j + 1) as f64;
        }
        acc / h.powi(order as i32)
    };
    let coarse = central(h);
    let fine = central(h / 2.0);
    let extrapolated = (4.0 * fine - coarse) / 3.0;
    (extrapolated, (extrapolated - fine).norm())
}

/// Solution of the first-order renormalizability relation
/// `f̂_t^{(i)} f̂_t' = Σ_{j ≤ i+1} c_{ij}(t) f̂_t^{(j)} f̂_t` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormCertificate {
    pub family: String,
    pub order: usize,
    pub t: f64,
    /// `c_{i0}, ..., c_{i,i+1}`.
    pub coefficients: Vec<Complex64>,
    pub residual: f64,
    pub valid: bool,
    /// Ratio of extreme singular values of the basis matrix. A rank-deficient
    /// basis means the coefficients are not determined.
    pub condition: f64,
    pub numeric_derivatives: bool,
}

const MAX_CONDITION: f64 = 1e12;

/// Derivative table `f̂_t^{(j)}(ξ)` for `j ≤ order` with error estimates.
fn derivative_table(
    family: &ReferenceFamily,
    t: f64,
    order: usize,
    xi: f64,
    h: f64,
) -> Vec<(Complex64, f64)> {
    (0..=order)
        .map(|j| match family.derivative(t, j, xi) {
            Some(v) => (v, 0.0),
            None => numeric_derivative(&|x| family.char_fn(t, x), xi, j, h),
        })
        .collect()
}

pub fn check_hypothesis1(
    family: &ReferenceFamily,
    order: usize,
    t: f64,
    grid: &[f64],
    tol: f64,
) -> Result<RenormCertificate, ReferenceError> {
    let unknowns = order + 2;
    if grid.len() < unknowns {
        return Err(ReferenceError::GridTooSmall(unknowns));
    }
    let width = grid.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let h = 1e-2 * width.sqrt();
    let numeric = matches!(family.kind, FamilyKind::Cauchy { .. });

    let rows = grid.len();
    let mut a = DMatrix::<Complex64>::zeros(rows, unknowns);
    let mut b = DVector::<Complex64>::zeros(rows);
    let mut errs = Vec::with_capacity(rows);
    for (row, &xi) in grid.iter().enumerate() {
        let table = derivative_table(family, t, order + 1, xi, h);
        let (f0, e0) = table[0];
        let (f1, e1) = table[1];
        let (fi, ei) = table[order];
        b[row] = fi * f1;
        let lhs_err = ei * f1.norm() + fi.norm() * e1;
        let mut basis_err = Vec::with_capacity(unknowns);
        for (j, &(fj, ej)) in table.iter().enumerate() {
            a[(row, j)] = fj * f0;
            basis_err.push(ej * f0.norm() + fj.norm() * e0);
        }
        errs.push((lhs_err, basis_err));
    }

    if a.iter().chain(b.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(ReferenceError::IllConditioned(f64::INFINITY));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = smax / smin.max(f64::MIN_POSITIVE);
    let coef = svd
        .solve(&b, smax * 1e-13)
        .map_err(|_| ReferenceError::IllConditioned(condition))?;

    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.norm()));
    let fit = &a * &coef - &b;
    let mut residual = 0.0f64;
    for (row, (lhs_err, basis_err)) in errs.iter().enumerate() {
        let propagated: f64 = basis_err
            .iter()
            .zip(coef.iter())
            .map(|(e, c)| e * c.norm().max(1.0))
            .sum();
        residual = residual.max(fit[row].norm() + lhs_err + propagated);
    }
    residual /= scale;
    let well_conditioned = condition < MAX_CONDITION;

    Ok(RenormCertificate {
        family: family.name().to_string(),
        order,
        t,
        coefficients: coef.iter().copied().collect(),
        residual,
        valid: well_conditioned && residual < tol,
        condition,
        numeric_derivatives: numeric,
    })
}
