//! Effective-Lagrangian series for the Gamma reference: mass-perturbation
//! bouquet sums and their `m -> ∞` diagnostics, partition combinatorics,
//! power counting for the kinetic case and a numerical divergence scan.

use crate::condexp::{gamma_cond_exp_monomial, CondExpError, MonomialSpec};
use crate::exact::{binomial, binomial_q, factorial, factorial_q, poch, pow2, q, qpow, to_f64, Q};
use crate::graphs::{GraphContext, GraphError, MultiGraph};
use crate::kinetic::QuadraticForm;
use crate::lattice::LatticeConfig;
use crate::reference::{FamilyKind, ReferenceError, ReferenceFamily};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub const MAX_ORDER: usize = 6;
pub const MAX_DEPTH: usize = 6;
pub const MAX_PARTITION_K: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectiveError {
    #[error("order k = {0} outside 1..={MAX_ORDER}")]
    Order(usize),
    #[error("depth m = {0} outside 1..={MAX_DEPTH}")]
    Depth(usize),
    #[error("the {0} family has no mass perturbation closed form")]
    NotGamma(&'static str),
    #[error("scan needs d <= 2 and k <= 3, got d = {d}, k = {k}")]
    ScanScope { d: usize, k: usize },
    #[error("slope fit needs at least two depths with nonzero values")]
    FitDegenerate,
    #[error("invalid argument: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    CondExp(#[from] CondExpError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

fn require_gamma(family: &ReferenceFamily) -> Result<(Q, Q), EffectiveError> {
    match family.kind() {
        FamilyKind::Gamma { alpha0, beta0 } => Ok((alpha0.clone(), beta0.clone())),
        _ => Err(EffectiveError::NotGamma(family.name())),
    }
}

/// Per-site mass coefficient `(α_0+1)/(α_0+r^n)` of `L_ren^n`.
pub fn mass_coefficient(family: &ReferenceFamily, n: usize) -> Result<Q, EffectiveError> {
    let (alpha0, _) = require_gamma(family)?;
    Ok((&alpha0 + Q::one()) / (&alpha0 + family.r_pow(n as i64)))
}

/// `L_ren^n = (1/r^n) Σ (α_0+1)/(α_0+r^n) x_i²`.
pub fn mass_lren(family: &ReferenceFamily, n: usize) -> Result<QuadraticForm, EffectiveError> {
    Ok(QuadraticForm::diagonal(family.lattice(), n, mass_coefficient(family, n)?))
}

/// Compositions of `k` into `parts` positive parts.
pub fn compositions(k: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for first in 1..=left.saturating_sub(parts - 1) {
            cur.push(first);
            rec(left - first, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts >= 1 && parts <= k {
        rec(k, parts, &mut Vec::new(), &mut out);
    }
    out
}

fn multinomial(parts: &[usize]) -> Q {
    let k: usize = parts.iter().sum();
    let mut v = factorial_q(k as u64);
    for &p in parts {
        v /= factorial_q(p as u64);
    }
    v
}

fn big(n: BigUint) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// `I_{m,ℓ} = Σ_{k_1+..+k_ℓ=k} C(R,ℓ)/R^ℓ · multinomial`, `R = r^m`.
pub fn combinatorial_factor(r_m: &Q, k: usize, ell: usize) -> Q {
    let Some(big_r) = r_m.to_integer().to_u64() else {
        return Q::zero();
    };
    let choose = big(binomial(big_r, ell as u64));
    let count: Q = compositions(k, ell).iter().map(|c| multinomial(c)).sum();
    choose * count / qpow(r_m, ell as i64)
}

/// `lim_{m->∞} I_{m,ℓ} = (1/ℓ!) Σ multinomial`, which is `{k brace ℓ}`.
pub fn combinatorial_limit(k: usize, ell: usize) -> Q {
    let count: Q = compositions(k, ell).iter().map(|c| multinomial(c)).sum();
    count / factorial_q(ell as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stat {
    Moment,
    Cumulant,
}

fn bouquet(family: &ReferenceFamily, n: usize, m: usize, k: usize, stat: Stat) -> Result<Q, EffectiveError> {
    require_gamma(family)?;
    if k == 0 || k > MAX_ORDER {
        return Err(EffectiveError::Order(k));
    }
    if m == 0 || m > MAX_DEPTH {
        return Err(EffectiveError::Depth(m));
    }
    let ctx = GraphContext::new(family.clone(), n, m)?;
    let r_m = family.r_pow(m as i64);
    let c = mass_coefficient(family, n + m)?;
    let mut total = Q::zero();
    for ell in 1..=k {
        if Q::from_integer(ell.into()) > r_m {
            break;
        }
        let choose = big(binomial(r_m.to_integer().to_u64().expect("small"), ell as u64));
        for comp in compositions(k, ell) {
            let g = MultiGraph::new(
                comp.iter()
                    .enumerate()
                    .flat_map(|(site, &mult)| std::iter::repeat_n((site, site), mult)),
            );
            let chi = match stat {
                Stat::Moment => ctx.chi_scalar(&g)?,
                Stat::Cumulant => ctx.chi_connected_recursive(&g)?,
            };
            total += &choose * multinomial(&comp) * chi;
        }
    }
    Ok(total * qpow(&c, k as i64) / qpow(&r_m, k as i64))
}

/// Per-site `𝓛̃_eff,k^{n,m}`: the ordered sum over `k` fine loops under one
/// coarse site of `c^{n+m} χ̃_c`, divided by `r^{km}`, grouped by the number
/// `ℓ` of distinct loops.
pub fn bouquet_sum(family: &ReferenceFamily, n: usize, m: usize, k: usize) -> Result<Q, EffectiveError> {
    bouquet(family, n, m, k, Stat::Cumulant)
}

/// Same grouping with `χ̃` in place of `χ̃_c`: the loop part of `b_eff`.
pub fn bouquet_moment(family: &ReferenceFamily, n: usize, m: usize, k: usize) -> Result<Q, EffectiveError> {
    bouquet(family, n, m, k, Stat::Moment)
}

/// `c_eff(e^k) = b_eff(e^k) - Σ_{j<k} C(k-1, j-1) c_eff(e^j) b_eff(e^{k-j})`
/// on a single-edge tower; `b[i]` is the entry for `e^{i+1}`. The binomial
/// weights count the sub-tuples containing the anchor position.
pub fn c_eff_from_b_eff(b: &[Q]) -> Vec<Q> {
    let mut c: Vec<Q> = Vec::with_capacity(b.len());
    for k in 1..=b.len() {
        let mut v = b[k - 1].clone();
        for j in 1..k {
            v -= binomial_q(k as u64 - 1, j as u64 - 1) * &c[j - 1] * &b[k - j - 1];
        }
        c.push(v);
    }
    c
}

/// Order-`k` coefficients of the mass-case effective series at fixed depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveSeries {
    pub n: usize,
    pub m: usize,
    /// `𝓛̃_eff,k^{n,m}` for `k = 1..`.
    #[serde(serialize_with = "ser_q_vec")]
    pub coefficients: Vec<Q>,
    /// The limits `b_eff` were assumed to exist; their existence does not
    /// follow from that of the `c_eff`.
    pub converse_unverified: bool,
}

fn ser_q_vec<S: serde::Serializer>(v: &[Q], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_string()))
}

impl EffectiveSeries {
    pub fn mass(family: &ReferenceFamily, n: usize, m: usize, max_k: usize) -> Result<Self, EffectiveError> {
        let coefficients = (1..=max_k)
            .map(|k| bouquet_sum(family, n, m, k))
            .collect::<Result<_, _>>()?;
        Ok(EffectiveSeries {
            n,
            m,
            coefficients,
            converse_unverified: true,
        })
    }

    /// Per-site effective potential `-log E[e^{-λ L} | x_i]` truncated at
    /// the stored order: `Σ_k (-1)^{k+1} λ^k 𝓛̃_k x^{2k} / (r^{n(k-1)} k!)`.
    pub fn site_potential(&self, family: &ReferenceFamily, lambda: &Q, x: &Q) -> Q {
        let mut total = Q::zero();
        for (i, c) in self.coefficients.iter().enumerate() {
            let k = i + 1;
            let sign = if k % 2 == 1 { Q::one() } else { -Q::one() };
            total += sign * qpow(lambda, k as i64) * c * qpow(x, 2 * k as i64)
                / (family.r_pow((self.n * (k - 1)) as i64) * factorial_q(k as u64));
        }
        total
    }
}

/// Exact combinatorial counts for one `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionCombinatorics {
    pub k: usize,
    /// `{k brace ℓ}` for `ℓ = 0..=k`.
    pub stirling: Vec<BigUint>,
    pub bell: BigUint,
    pub integer_partitions: BigUint,
    pub fubini: BigUint,
}

pub fn stirling2_table(max_k: usize) -> Vec<Vec<BigUint>> {
    let mut table = vec![vec![BigUint::one()]];
    for k in 1..=max_k {
        let prev = &table[k - 1];
        let mut row = vec![BigUint::zero(); k + 1];
        for ell in 1..=k {
            let stay = if ell < k { prev[ell].clone() * ell } else { BigUint::zero() };
            row[ell] = stay + prev[ell - 1].clone();
        }
        table.push(row);
    }
    table
}

/// Number of integer partitions `p(k)`.
pub fn integer_partitions(k: usize) -> BigUint {
    let mut ways = vec![BigUint::zero(); k + 1];
    ways[0] = BigUint::one();
    for part in 1..=k {
        for total in part..=k {
            let add = ways[total - part].clone();
            ways[total] += add;
        }
    }
    ways[k].clone()
}

pub fn partition_numbers(k: usize) -> Result<PartitionCombinatorics, EffectiveError> {
    if k > MAX_PARTITION_K {
        return Err(EffectiveError::Order(k));
    }
    let stirling = stirling2_table(k).pop().expect("row k");
    let bell = stirling.iter().sum();
    let fubini = stirling
        .iter()
        .enumerate()
        .map(|(ell, s)| factorial(ell as u64) * s)
        .sum();
    Ok(PartitionCombinatorics {
        k,
        stirling,
        bell,
        integer_partitions: integer_partitions(k),
        fubini,
    })
}

/// `exp(π √(2k/3)) / (4k√3)`.
pub fn partition_asymptotic(k: usize) -> f64 {
    let k = k as f64;
    (std::f64::consts::PI * (2.0 * k / 3.0).sqrt()).exp() / (4.0 * k * 3f64.sqrt())
}

/// `k! / (2 (ln 2)^{k+1})`.
pub fn fubini_asymptotic(k: usize) -> f64 {
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    fact / (2.0 * std::f64::consts::LN_2.powi(k as i32 + 1))
}

/// Geometric extrapolation of a sequence from its last two differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub values: Vec<f64>,
    pub differences: Vec<f64>,
    pub ratios: Vec<f64>,
    pub monotone_decay: bool,
    pub converged: bool,
    pub limit: f64,
}

pub fn geometric_limit(values: &[f64]) -> LimitReport {
    let differences: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = differences
        .windows(2)
        .map(|w| if w[0] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect();
    let monotone_decay = differences.windows(2).all(|w| w[1].abs() < w[0].abs() || w[0] == 0.0);
    let converged = differences.iter().all(|&x| x == 0.0)
        || ratios.windows(3).any(|w| {
            let scale = w[2].abs().max(f64::MIN_POSITIVE);
            (w[0] - w[2]).abs() <= 0.01 * scale && (w[1] - w[2]).abs() <= 0.01 * scale
        });
    let last = *values.last().unwrap_or(&f64::NAN);
    let limit = match (differences.last(), ratios.last()) {
        (Some(&dl), Some(&rho)) if rho.abs() < 1.0 => last + dl * rho / (1.0 - rho),
        _ => last,
    };
    LimitReport {
        values: values.to_vec(),
        differences,
        ratios,
        monotone_decay,
        converged,
        limit,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassLimitReport {
    pub n: usize,
    pub k: usize,
    pub sequence: LimitReport,
    /// `k! / (2 (r^{2n} (α_n)_2 ln 2)^k)`.
    pub term_bound: f64,
    pub bell: u64,
    pub integer_partitions: u64,
    pub within_bell_envelope: bool,
    pub within_partition_envelope: bool,
}

/// `𝓛̃_eff,k^{n,m}` for `m = 1..=m_max` with difference diagnostics and the
/// envelope from the bound on the limits of the `II` factors.
pub fn mass_coefficient_limit(
    family: &ReferenceFamily,
    n: usize,
    k: usize,
    m_max: usize,
) -> Result<MassLimitReport, EffectiveError> {
    if m_max < 2 {
        return Err(EffectiveError::Invalid("m_max must be at least 2"));
    }
    let values: Vec<f64> = (1..=m_max)
        .into_par_iter()
        .map(|m| bouquet_sum(family, n, m, k).map(|v| to_f64(&v)))
        .collect::<Result<_, _>>()?;
    let sequence = geometric_limit(&values);
    let alpha_n = family.alpha(n as i64).expect("gamma");
    let scale = to_f64(&(qpow(&family.r_pow(n as i64), 2) * poch(&alpha_n, 2))) * std::f64::consts::LN_2;
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    let term_bound = fact / (2.0 * scale.powi(k as i32));
    let pc = partition_numbers(k)?;
    let bell = pc.bell.to_u64().expect("small k");
    let parts = pc.integer_partitions.to_u64().expect("small k");
    let magnitude = sequence.limit.abs();
    Ok(MassLimitReport {
        n,
        k,
        within_bell_envelope: magnitude <= term_bound * bell as f64,
        within_partition_envelope: magnitude <= term_bound * parts as f64,
        sequence,
        term_bound,
        bell,
        integer_partitions: parts,
    })
}

/// Fine diagram shape relative to a source site `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagramKind {
    /// `loops` loops at `j` plus, for each used direction, that many
    /// parallel edges `(j, σ(j))`; multiplicities sorted decreasingly.
    Shape { loops: usize, branches: Vec<usize> },
    /// Loop at `j` together with its branches, summed per source.
    Bouquet,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DiagramClass {
    pub kind: DiagramKind,
    /// Stratum `ℓ` of the source.
    pub stratum: usize,
}

impl DiagramClass {
    pub fn shape(loops: usize, mut branches: Vec<usize>, stratum: usize) -> Self {
        branches.retain(|&b| b > 0);
        branches.sort_unstable_by(|a, b| b.cmp(a));
        DiagramClass {
            kind: DiagramKind::Shape { loops, branches },
            stratum,
        }
    }

    pub fn eye(stratum: usize) -> Self {
        Self::shape(0, vec![2], stratum)
    }

    pub fn bouquet(stratum: usize) -> Self {
        DiagramClass {
            kind: DiagramKind::Bouquet,
            stratum,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            DiagramKind::Bouquet => "bouquet".into(),
            DiagramKind::Shape { loops, branches } => match (loops, branches.as_slice()) {
                (1, []) => "loop".into(),
                (0, [1]) => "branch".into(),
                (2, []) => "eight".into(),
                (1, [1]) => "tadpole".into(),
                (0, [1, 1]) => "ell".into(),
                (0, [2]) => "eye".into(),
                (l, []) => format!("L{l}"),
                (l, b) => format!(
                    "L{l}B{}",
                    b.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-")
                ),
            },
        }
    }

    pub fn edges(&self) -> usize {
        match &self.kind {
            DiagramKind::Bouquet => 1,
            DiagramKind::Shape { loops, branches } => loops + branches.iter().sum::<usize>(),
        }
    }

    /// Degrees of the source followed by one entry per used direction.
    pub fn degrees(&self) -> Vec<usize> {
        match &self.kind {
            DiagramKind::Bouquet => vec![2],
            DiagramKind::Shape { loops, branches } => {
                let mut deg = vec![2 * loops + branches.iter().sum::<usize>()];
                deg.extend(branches.iter().copied());
                deg
            }
        }
    }
}

/// Exponent `a` with contribution `~ ε^{-a m}`: `ℓ` from the stratum size,
/// `+1` per edge, `-d` per loop, `d(deg_v - 1)` per vertex and `-d` per edge
/// from the `1/r^{km}` prefactor. A bouquet sums a loop and its `ℓ` branches,
/// whose leading terms cancel in proportion to `d - ℓ`; at `ℓ = d` it is
/// identically zero and `None` is returned.
pub fn power_count(class: &DiagramClass, d: usize) -> Option<i64> {
    let d = d as i64;
    let ell = class.stratum as i64;
    match &class.kind {
        DiagramKind::Bouquet => (ell != d).then_some(ell + 1 - d),
        DiagramKind::Shape { loops, .. } => {
            let e = class.edges() as i64;
            let vertex: i64 = class.degrees().iter().map(|&g| d * (g as i64 - 1)).sum();
            Some(ell + e - d * (*loops as i64) + vertex - d * e)
        }
    }
}

/// Ordered `k`-tuples from `{loop, branch_1..branch_ℓ}` at one source,
/// grouped by shape, with their counts.
fn shapes_at(stratum: usize, k: usize) -> Vec<(DiagramClass, u64)> {
    let items = stratum + 1;
    let mut counts: std::collections::BTreeMap<DiagramClass, u64> = Default::default();
    let total = items.pow(k as u32);
    for code in 0..total {
        let mut loops = 0;
        let mut branches = vec![0usize; stratum];
        let mut c = code;
        for _ in 0..k {
            match c % items {
                0 => loops += 1,
                b => branches[b - 1] += 1,
            }
            c /= items;
        }
        *counts.entry(DiagramClass::shape(loops, branches, stratum)).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// Level-`n+m` loop and bond weights of the Gamma `T_ren`.
fn t_ren_weights(family: &ReferenceFamily, level: usize) -> (Q, Q) {
    let alpha = family.alpha(level as i64).expect("gamma");
    let eps_inv = pow2(level as i64);
    let loop_w = q(family.d() as i64) * &alpha * &eps_inv / (Q::one() + &alpha);
    (loop_w, -eps_inv)
}

/// `(1/r^{km}) Σ_{j∈Λ_ℓ} (count) c(h) χ̃(h)` for one class at depth `m`.
pub fn class_value(family: &ReferenceFamily, n: usize, m: usize, class: &DiagramClass) -> Result<Q, EffectiveError> {
    require_gamma(family)?;
    let lattice: LatticeConfig = family.lattice();
    let d = lattice.d();
    let ell = class.stratum;
    let side = pow2(m as i64).to_integer().to_u64().expect("small") as i64;
    let stratum_size = big(binomial(d as u64, ell as u64)) * qpow(&q(side - 1), ell as i64);
    let (loop_w, bond_w) = t_ren_weights(family, n + m);
    let r_m = family.r_pow(m as i64);
    let term = |loops: usize, branches: &[usize]| -> Result<Q, EffectiveError> {
        let mut exps = vec![2 * loops + branches.iter().sum::<usize>()];
        exps.extend(branches.iter().copied());
        let chi = gamma_cond_exp_monomial(family, n, m, &MonomialSpec::new(exps)?)?;
        let e = loops + branches.iter().sum::<usize>();
        Ok(qpow(&loop_w, loops as i64) * qpow(&bond_w, (e - loops) as i64) * chi / qpow(&r_m, e as i64))
    };
    let value = match &class.kind {
        DiagramKind::Bouquet => {
            let mut v = term(1, &[])?;
            if ell > 0 {
                v += q(ell as i64) * term(0, &[1])?;
            }
            v
        }
        DiagramKind::Shape { loops, branches } => {
            if branches.len() > ell {
                return Ok(Q::zero());
            }
            let k = class.edges();
            let count = shapes_at(ell, k)
                .into_iter()
                .find(|(c, _)| c == class)
                .map(|(_, n)| n)
                .unwrap_or(0);
            q(count as i64) * term(*loops, branches)?
        }
    };
    Ok(stratum_size * value)
}

/// Least-squares slope `a` of `ln |v| ≈ a m + b`, or of
/// `ln |v| ≈ a m + b + c 2^{-m}` when `corrected` and at least four points
/// are available. The extra column absorbs the leading finite-size
/// correction of the stratum counts `(2^m - 1)^ℓ`.
pub fn fit_log_slope(points: &[(usize, f64)], corrected: bool) -> Result<f64, EffectiveError> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|(m, v)| (*m as f64, v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return Err(EffectiveError::FitDegenerate);
    }
    let cols = if corrected && pts.len() >= 4 { 3 } else { 2 };
    let design = nalgebra::DMatrix::from_fn(pts.len(), cols, |i, j| match j {
        0 => pts[i].0,
        1 => 1.0,
        _ => (-pts[i].0 * std::f64::consts::LN_2).exp(),
    });
    let rhs = nalgebra::DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let svd = design.svd(true, true);
    if svd.singular_values.min() <= 1e-12 * svd.singular_values.max() {
        return Err(EffectiveError::FitDegenerate);
    }
    let sol = svd.solve(&rhs, 1e-14).map_err(|_| EffectiveError::FitDegenerate)?;
    Ok(sol[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Divergent,
    Finite,
    Vanishing,
    Cancels,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub class: String,
    pub stratum: usize,
    pub k: usize,
    pub values: Vec<(usize, f64)>,
    pub fitted_slope: Option<f64>,
    pub predicted_exponent: Option<i64>,
    pub verdict: Verdict,
    /// Plain linear fit, without the finite-size column.
    pub plain_slope: Option<f64>,
    /// Fitted slope within [`slope_tolerance`] of `a ln 2`.
    pub agrees: bool,
    /// Extrapolated `m -> ∞` value for finite classes.
    pub limit: Option<f64>,
}

/// Slope tolerance in natural-log units per `m`: 5% of `a ln 2`, or 0.05
/// absolute when `a = 0`.
pub fn slope_tolerance(predicted: i64) -> f64 {
    if predicted == 0 {
        0.05
    } else {
        0.05 * (predicted as f64 * std::f64::consts::LN_2).abs()
    }
}

/// Evaluate every single-source class of `b_eff(e^k)` (and the bouquet for
/// `k = 1`) over `m_range`, fit `ln |value|` against `m`, and compare with
/// the power count.
pub fn divergence_scan(
    family: &ReferenceFamily,
    n: usize,
    k: usize,
    m_range: std::ops::RangeInclusive<usize>,
) -> Result<Vec<ScanRow>, EffectiveError> {
    require_gamma(family)?;
    let d = family.d();
    if d > 2 || k == 0 || k > 3 {
        return Err(EffectiveError::ScanScope { d, k });
    }
    if *m_range.end() > MAX_DEPTH || *m_range.start() == 0 {
        return Err(EffectiveError::Depth(*m_range.end()));
    }
    let mut classes: Vec<DiagramClass> = Vec::new();
    for ell in 0..=d {
        classes.extend(shapes_at(ell, k).into_iter().map(|(c, _)| c));
        if k == 1 {
            classes.push(DiagramClass::bouquet(ell));
        }
    }
    let ms: Vec<usize> = m_range.collect();
    classes
        .par_iter()
        .map(|class| {
            let values: Vec<(usize, f64)> = ms
                .iter()
                .map(|&m| class_value(family, n, m, class).map(|v| (m, to_f64(&v))))
                .collect::<Result<_, _>>()?;
            let predicted = power_count(class, d);
            let nonzero = values.iter().any(|(_, v)| *v != 0.0);
            let fitted_slope = if nonzero { Some(fit_log_slope(&values, true)?) } else { None };
            let plain_slope = if nonzero { Some(fit_log_slope(&values, false)?) } else { None };
            let verdict = match predicted {
                None => Verdict::Cancels,
                Some(a) if a > 0 => Verdict::Divergent,
                Some(0) => Verdict::Finite,
                Some(_) => Verdict::Vanishing,
            };
            let agrees = match (predicted, fitted_slope) {
                (Some(a), Some(s)) => (s - a as f64 * std::f64::consts::LN_2).abs() <= slope_tolerance(a),
                (None, None) => true,
                _ => false,
            };
            let limit = (verdict == Verdict::Finite)
                .then(|| geometric_limit(&values.iter().map(|v| v.1).collect::<Vec<_>>()).limit);
            Ok(ScanRow {
                class: class.name(),
                stratum: class.stratum,
                k,
                values,
                fitted_slope,
                plain_slope,
                predicted_exponent: predicted,
                verdict,
                agrees,
                limit,
            })
        })
        .collect()
}

/// `Σ_ℓ` bouquet values at depth `m`, i.e. `b_eff(e)` before the limit.
pub fn b_eff_loop(family: &ReferenceFamily, n: usize, m: usize) -> Result<Q, EffectiveError> {
    (0..=family.d()).try_fold(Q::zero(), |acc, ell| {
        Ok(acc + class_value(family, n, m, &DiagramClass::bouquet(ell))?)
    })
}

/// `d ε^{-n} α_n / (1 + α_n)`, the loop weight of the Gamma `T_ren^n`.
pub fn t_ren_counterterm(family: &ReferenceFamily, n: usize) -> Result<Q, EffectiveError> {
    require_gamma(family)?;
    Ok(t_ren_weights(family, n).0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JensenReport {
    pub lower: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub upper: f64,
    pub holds: bool,
}

/// `∫ e^{-λ c_0 x²} f_0(x) dx` by Simpson's rule in `u = x^{α}`, where the
/// Gamma density becomes `β^α/Γ(α+1) e^{-β u^{1/α}}`.
fn jensen_lower(alpha: f64, beta: f64, c0: f64) -> f64 {
    let x_max = (60.0 + 10.0 * alpha) / beta;
    let u_max = x_max.powf(alpha);
    let steps = 20_000usize;
    let h = u_max / steps as f64;
    let norm = (alpha * beta.ln() - statrs::function::gamma::ln_gamma(alpha + 1.0)).exp();
    let f = |u: f64| {
        let x = u.powf(1.0 / alpha);
        (-beta * x - c0 * x * x).exp()
    };
    let mut sum = f(0.0) + f(u_max);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    norm * sum * h / 3.0
}

/// MC estimate of `E[e^{-λ L_ren^n}]` against the Jensen lower bound
/// `∫ e^{-E[λ L_ren^n | x^0]} f_0` and the upper bound 1.
pub fn jensen_bounds_check(
    family: &ReferenceFamily,
    n: usize,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<JensenReport, EffectiveError> {
    let (alpha0, beta0) = require_gamma(family)?;
    if samples < 2 {
        return Err(EffectiveError::Invalid("need at least two samples"));
    }
    if lambda == 0.0 {
        return Ok(JensenReport {
            lower: 1.0,
            estimate: 1.0,
            standard_error: 0.0,
            upper: 1.0,
            holds: true,
        });
    }
    let sites = family.lattice().num_sites(n);
    let c_n = to_f64(&mass_coefficient(family, n)?);
    let c_0 = to_f64(&mass_coefficient(family, 0)?);
    let sampler = family.sampler(n as i64)?;
    const CHUNK: usize = 1 << 14;
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = CHUNK.min(samples - chunk * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let l: f64 = (0..sites).map(|_| rng.sample(sampler).powi(2)).sum::<f64>() * c_n / sites as f64;
                let v = (-lambda * l).exp();
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = samples as f64;
    let estimate = s / nf;
    let var = (s2 / nf - estimate * estimate).max(0.0) * nf / (nf - 1.0);
    let standard_error = (var / nf).sqrt();
    let lower = jensen_lower(to_f64(&alpha0), to_f64(&beta0), lambda * c_0);
    Ok(JensenReport {
        lower,
        estimate,
        standard_error,
        upper: 1.0,
        holds: lower < estimate && estimate < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::qf;

    fn gamma(d: usize) -> ReferenceFamily {
        ReferenceFamily::gamma(d, q(1), q(1)).unwrap()
    }

    #[test]
    fn mass_coefficients() {
        assert_eq!(mass_coefficient(&gamma(1), 0).unwrap(), q(1));
        assert_eq!(mass_coefficient(&gamma(1), 1).unwrap(), qf(2, 3));
        let w = crate::wick::wick_gamma(&gamma(1), 1, 2).unwrap();
        assert_eq!(w.poly.coeff(2), qf(2, 3));
    }

    #[test]
    fn first_order_is_martingale() {
        for m in 1..=4 {
            assert_eq!(bouquet_sum(&gamma(1), 0, m, 1).unwrap(), q(1));
            assert_eq!(bouquet_sum(&gamma(2), 1, m, 1).unwrap(), mass_coefficient(&gamma(2), 1).unwrap());
        }
    }

    #[test]
    fn stirling_and_friends() {
        let bells: Vec<u64> = (1..=6).map(|k| partition_numbers(k).unwrap().bell.to_u64().unwrap()).collect();
        assert_eq!(bells, vec![1, 2, 5, 15, 52, 203]);
        let p: Vec<u64> = (1..=6)
            .map(|k| partition_numbers(k).unwrap().integer_partitions.to_u64().unwrap())
            .collect();
        assert_eq!(p, vec![1, 2, 3, 5, 7, 11]);
        let three = partition_numbers(3).unwrap();
        assert_eq!(three.fubini, BigUint::from(13u32));
        assert!((fubini_asymptotic(3) / 13.0 - 1.0).abs() < 0.15);
        for k in 1..=6 {
            for ell in 1..=k {
                assert_eq!(
                    combinatorial_limit(k, ell),
                    big(partition_numbers(k).unwrap().stirling[ell].clone())
                );
            }
        }
    }

    #[test]
    fn combinatorial_factor_tends_to_stirling() {
        let far = pow2(40);
        let v = to_f64(&combinatorial_factor(&far, 3, 2));
        assert!((v - 3.0).abs() < 1e-9);
        assert_eq!(combinatorial_factor(&q(2), 3, 3), q(0));
    }

    #[test]
    fn power_counts() {
        for d in 1..=4 {
            for ell in 0..=d {
                assert_eq!(power_count(&DiagramClass::eye(ell), d), Some(2 + ell as i64));
            }
            assert_eq!(power_count(&DiagramClass::bouquet(d - 1), d), Some(0));
            assert_eq!(power_count(&DiagramClass::bouquet(d), d), None);
            if d >= 2 {
                assert!(power_count(&DiagramClass::bouquet(d - 2), d).unwrap() < 0);
            }
        }
    }

    #[test]
    fn b_eff_loop_is_counterterm() {
        for d in 1..=2 {
            for n in 0..=2 {
                for m in 1..=4 {
                    assert_eq!(
                        b_eff_loop(&gamma(d), n, m).unwrap(),
                        t_ren_counterterm(&gamma(d), n).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn c_eff_recursion_matches_cumulant_sums() {
        let fam = gamma(1);
        for m in 1..=3 {
            let b: Vec<Q> = (1..=4).map(|k| bouquet_moment(&fam, 0, m, k).unwrap()).collect();
            let c: Vec<Q> = (1..=4).map(|k| bouquet_sum(&fam, 0, m, k).unwrap()).collect();
            assert_eq!(c_eff_from_b_eff(&b), c);
        }
    }

    #[test]
    fn geometric_extrapolation_exact_for_geometric() {
        let vals: Vec<f64> = (0..6).map(|m| 2.0 - 0.5f64.powi(m)).collect();
        let rep = geometric_limit(&vals);
        assert!((rep.limit - 2.0).abs() < 1e-12);
        assert!(rep.monotone_decay && rep.converged);
    }

    #[test]
    fn jensen_zero_coupling() {
        let rep = jensen_bounds_check(&gamma(1), 0, 0.0, 10, 1).unwrap();
        assert_eq!(rep.estimate, 1.0);
    }

    #[test]
    fn jensen_lower_quadrature() {
        // α = β = 1, c = 1: ∫ e^{-x - x²} dx = √π e^{1/4} erfc(1/2) / 2.
        let exact = 0.5 * std::f64::consts::PI.sqrt() * 0.25f64.exp() * statrs::function::erf::erfc(0.5);
        assert!((jensen_lower(1.0, 1.0, 1.0) - exact).abs() < 1e-10);
    }
}
