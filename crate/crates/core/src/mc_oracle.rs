//! Monte Carlo oracle: weak tests of the closed-form conditional identities.
//!
//! A conditional identity `E[F | x^n] = F̂(x^n)` is tested against each test
//! function `H` through `E[(F - F̂(x^n)) H(x^n)] = 0`. Samples are drawn in
//! fixed-size chunks, each from its own ChaCha stream, so results do not
//! depend on the number of worker threads.

use crate::condexp::{cond_exp_power, gamma_cond_exp_monomial, CondExpError, MonomialSpec};
use crate::effective::{mass_lren, EffectiveError};
use crate::exact::{to_f64, Q};
use crate::graphs::{lagrangian_cumulant, CoarsePoly, GraphContext, GraphError};
use crate::kinetic::{kinetic_identity_rhs, CoarsePolynomial, KineticError, QuadraticForm};
use crate::reference::{coarse_grain, FamilyKind, ReferenceError, ReferenceFamily};
use crate::wick::{wick, WickError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

/// Samples per independently seeded chunk.
pub const CHUNK: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("sample count must be positive")]
    NoSamples,
    #[error("no identity named {0}")]
    UnknownIdentity(String),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    CondExp(#[from] CondExpError),
    #[error(transparent)]
    Wick(#[from] WickError),
    #[error(transparent)]
    Kinetic(#[from] KineticError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Effective(#[from] EffectiveError),
}

/// One draw of the resolution process.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    /// Level `n+m` values.
    pub fine: Vec<f64>,
    /// Level `n` values, block means of `fine`.
    pub coarse: Vec<f64>,
}

/// Seeded generator of [`FieldSample`]s for fixed `(family, n, m)`.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    family: ReferenceFamily,
    n: usize,
    m: usize,
    seed: u64,
}

impl FieldSampler {
    pub fn new(family: ReferenceFamily, n: usize, m: usize, seed: u64) -> Result<Self, McError> {
        family.sampler((n + m) as i64)?;
        Ok(FieldSampler { family, n, m, seed })
    }

    /// Samples `index * CHUNK ..` of the stream; at most [`CHUNK`].
    pub fn chunk(&self, index: usize, count: usize) -> Vec<FieldSample> {
        let sampler = self.family.sampler((self.n + self.m) as i64).expect("validated");
        let lattice = self.family.lattice();
        let fine_sites = lattice.num_sites(self.n + self.m);
        let block = lattice.num_sites(self.m);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        (0..count.min(CHUNK))
            .map(|_| {
                let fine: Vec<f64> = (0..fine_sites).map(|_| rng.sample(sampler)).collect();
                let coarse = coarse_grain(&fine, block).expect("block divides");
                FieldSample { fine, coarse }
            })
            .collect()
    }

    /// The first `count` samples of the stream.
    pub fn take(&self, count: usize) -> Vec<FieldSample> {
        (0..count.div_ceil(CHUNK))
            .flat_map(|c| self.chunk(c, count - c * CHUNK))
            .collect()
    }
}

/// `sample_field`: the first `count` draws for `(family, n, m)`.
pub fn sample_field(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<FieldSample>, McError> {
    if count == 0 {
        return Err(McError::NoSamples);
    }
    Ok(FieldSampler::new(family.clone(), n, m, seed)?.take(count))
}

/// Compensated (Neumaier) sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Neumaier) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestFunction {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "x_1")]
    First,
    #[serde(rename = "x_1^2")]
    FirstSquared,
    #[serde(rename = "sum_x^2")]
    SumSquares,
}

impl TestFunction {
    pub const BASIS: [TestFunction; 4] = [
        TestFunction::One,
        TestFunction::First,
        TestFunction::FirstSquared,
        TestFunction::SumSquares,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::One => "1",
            TestFunction::First => "x_1",
            TestFunction::FirstSquared => "x_1^2",
            TestFunction::SumSquares => "sum_x^2",
        }
    }

    pub fn eval(&self, coarse: &[f64]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::First => coarse[0],
            TestFunction::FirstSquared => coarse[0] * coarse[0],
            TestFunction::SumSquares => coarse.iter().map(|x| x * x).sum(),
        }
    }
}

type Functional = Arc<dyn Fn(&FieldSample) -> f64 + Send + Sync>;

/// A registered identity `E[lhs | x^n] = rhs(x^n)`.
#[derive(Clone)]
pub struct Identity {
    pub id: String,
    lhs: Functional,
    rhs: Functional,
}

impl std::fmt::Debug for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Identity").field("id", &self.id).finish()
    }
}

impl Identity {
    pub fn new(
        id: impl Into<String>,
        lhs: impl Fn(&FieldSample) -> f64 + Send + Sync + 'static,
        rhs: impl Fn(&FieldSample) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Identity {
            id: id.into(),
            lhs: Arc::new(lhs),
            rhs: Arc::new(rhs),
        }
    }
}

fn poly_f64(coeffs: &[Q]) -> Vec<f64> {
    coeffs.iter().map(to_f64).collect()
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

struct FormF64 {
    terms: Vec<(usize, usize, f64)>,
    norm: f64,
}

impl FormF64 {
    fn new(form: &QuadraticForm) -> Self {
        FormF64 {
            terms: form.terms.iter().map(|(a, b, c)| (*a, *b, to_f64(c))).collect(),
            norm: to_f64(&form.lattice.cell_volume(form.level)),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(a, b, c)| c * x[*a] * x[*b]).sum::<f64>() * self.norm
    }
}

struct CoarseF64 {
    quadratic: Vec<(usize, usize, f64)>,
    linear: Vec<(usize, f64)>,
    constant: f64,
}

impl CoarseF64 {
    fn new(p: &CoarsePolynomial) -> Self {
        CoarseF64 {
            quadratic: p.quadratic.iter().map(|((a, b), c)| (*a, *b, to_f64(c))).collect(),
            linear: p.linear.iter().map(|(a, c)| (*a, to_f64(c))).collect(),
            constant: to_f64(&p.constant),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.quadratic.iter().map(|(a, b, c)| c * x[*a] * x[*b]).sum::<f64>()
            + self.linear.iter().map(|(a, c)| c * x[*a]).sum::<f64>()
            + self.constant
    }
}

fn monomials_f64(p: &CoarsePoly) -> Vec<(Vec<i32>, f64)> {
    p.terms
        .iter()
        .map(|(k, v)| (k.iter().map(|&e| e as i32).collect(), to_f64(v)))
        .collect()
}

fn eval_monomials(p: &[(Vec<i32>, f64)], x: &[f64]) -> f64 {
    p.iter()
        .map(|(k, c)| k.iter().zip(x).fold(*c, |acc, (&e, &xi)| acc * xi.powi(e)))
        .sum()
}

/// Closed-form identities for `(family, n, m)`:
/// - `power_k`: `E[(x_ij)^k | x^n]`, `k = 1..=4`;
/// - `wick_k`: `E[V^{n+m}_k(x_ij) | x^n] = V^n_k(x_i)`, `k = 2..=4`;
/// - `monomial_2_1` (Gamma, `r^m >= 2`): `E[x_ij² x_ij' | x^n]`;
/// - `kinetic` (`n >= 1`, `m >= 1`): the conditional kinetic identity;
/// - `cumulant_k` (Gamma, `k = 1..=3`): conditional cumulants of the mass
///   perturbation from the graph expansion.
pub fn registered_identities(family: &ReferenceFamily, n: usize, m: usize) -> Result<Vec<Identity>, McError> {
    let mut out = Vec::new();
    if matches!(family.kind(), FamilyKind::Cauchy { .. }) {
        return Ok(out);
    }
    let block = family.lattice().num_sites(m);
    for k in 1..=4usize {
        let c = poly_f64(&cond_exp_power(family, n, m, k)?.coeffs);
        out.push(Identity::new(
            format!("power_{k}"),
            move |s| s.fine[0].powi(k as i32),
            move |s| horner(&c, s.coarse[0]),
        ));
    }
    for k in 2..=4usize {
        let fine = poly_f64(&wick(family, n + m, k)?.poly.coeffs);
        let coarse = poly_f64(&wick(family, n, k)?.poly.coeffs);
        out.push(Identity::new(
            format!("wick_{k}"),
            move |s| horner(&fine, s.fine[0]),
            move |s| horner(&coarse, s.coarse[0]),
        ));
    }
    let gamma = matches!(family.kind(), FamilyKind::Gamma { .. });
    if gamma && block >= 2 {
        let c = to_f64(&gamma_cond_exp_monomial(family, n, m, &MonomialSpec::new(vec![2, 1])?)?);
        out.push(Identity::new(
            "monomial_2_1",
            |s| s.fine[0] * s.fine[0] * s.fine[1],
            move |s| c * s.coarse[0].powi(3),
        ));
    }
    if n >= 1 && m >= 1 {
        let fine = FormF64::new(&QuadraticForm::kinetic(family.lattice(), n + m));
        let rhs = CoarseF64::new(&kinetic_identity_rhs(family, n, m)?);
        out.push(Identity::new("kinetic", move |s| fine.eval(&s.fine), move |s| rhs.eval(&s.coarse)));
    }
    if gamma {
        out.extend(cumulant_identities(family, n, m, 3, 1.0)?);
    }
    Ok(out)
}

/// `cumulant_1`: `E[L | x^n] = κ_1`; `cumulant_2`: `E[(L-κ_1)² | x^n] = κ_2`;
/// `cumulant_3`: `E[(L-κ_1)³ | x^n] = κ_3`, with `L = λ L_ren^{n+m}` the
/// mass perturbation and `κ_k` from [`lagrangian_cumulant`].
pub fn cumulant_identities(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    max_k: usize,
    lambda: f64,
) -> Result<Vec<Identity>, McError> {
    let ctx = GraphContext::new(family.clone(), n, m)?;
    let form = mass_lren(family, n + m)?;
    let kappas: Vec<Vec<(Vec<i32>, f64)>> = (1..=max_k.min(3))
        .map(|k| lagrangian_cumulant(&ctx, &form, k).map(|p| monomials_f64(&p)))
        .collect::<Result<_, _>>()?;
    let fine = Arc::new(FormF64::new(&form));
    let k1 = Arc::new(kappas[0].clone());
    let mut out = Vec::new();
    for (i, kappa) in kappas.into_iter().enumerate() {
        let order = i + 1;
        let (fine, k1) = (fine.clone(), k1.clone());
        let lhs = move |s: &FieldSample| {
            let l = lambda * fine.eval(&s.fine);
            if order == 1 {
                l
            } else {
                (l - lambda * eval_monomials(&k1, &s.coarse)).powi(order as i32)
            }
        };
        let scale = lambda.powi(order as i32);
        let rhs = move |s: &FieldSample| scale * eval_monomials(&kappa, &s.coarse);
        out.push(Identity::new(format!("cumulant_{order}"), lhs, rhs));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakTestReport {
    pub identity: String,
    pub test_function: TestFunction,
    /// Sample mean of `F H`.
    pub estimate: f64,
    /// Sample mean of `F̂ H`.
    pub reference: f64,
    /// Standard error of the mean of `(F - F̂) H`.
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    lhs: Neumaier,
    rhs: Neumaier,
    diff: Neumaier,
    diff2: Neumaier,
}

/// Run every identity against every test function on one sample stream.
/// Passes iff `|mean((F - F̂) H)| < z · SE`; a difference that vanishes on
/// every sample passes with `SE = 0`.
pub fn weak_test(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    identities: &[Identity],
    tests: &[TestFunction],
    count: usize,
    seed: u64,
    z: f64,
) -> Result<Vec<WeakTestReport>, McError> {
    if count == 0 {
        return Err(McError::NoSamples);
    }
    let sampler = FieldSampler::new(family.clone(), n, m, seed)?;
    let cells = identities.len() * tests.len();
    let chunks: Vec<Vec<Acc>> = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Acc::default(); cells];
            for s in sampler.chunk(c, count - c * CHUNK) {
                let hs: Vec<f64> = tests.iter().map(|t| t.eval(&s.coarse)).collect();
                for (i, ident) in identities.iter().enumerate() {
                    let (f, fh) = ((ident.lhs)(&s), (ident.rhs)(&s));
                    for (j, h) in hs.iter().enumerate() {
                        let a = &mut acc[i * tests.len() + j];
                        let dh = (f - fh) * h;
                        a.lhs.add(f * h);
                        a.rhs.add(fh * h);
                        a.diff.add(dh);
                        a.diff2.add(dh * dh);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Acc::default(); cells];
    for chunk in &chunks {
        for (t, a) in total.iter_mut().zip(chunk) {
            t.lhs.merge(&a.lhs);
            t.rhs.merge(&a.rhs);
            t.diff.merge(&a.diff);
            t.diff2.merge(&a.diff2);
        }
    }
    let nf = count as f64;
    let mut out = Vec::with_capacity(cells);
    for (i, ident) in identities.iter().enumerate() {
        for (j, t) in tests.iter().enumerate() {
            let a = &total[i * tests.len() + j];
            let mean = a.diff.value() / nf;
            let var = if count > 1 {
                ((a.diff2.value() / nf - mean * mean) * nf / (nf - 1.0)).max(0.0)
            } else {
                0.0
            };
            let se = (var / nf).sqrt();
            let pass = if se == 0.0 { mean == 0.0 } else { mean.abs() < z * se };
            out.push(WeakTestReport {
                identity: ident.id.clone(),
                test_function: *t,
                estimate: a.lhs.value() / nf,
                reference: a.rhs.value() / nf,
                se,
                z,
                pass,
            });
        }
    }
    Ok(out)
}

/// Weak tests of the conditional cumulants of `λ L_ren^{n+m}`.
pub fn mc_cumulants(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    max_k: usize,
    lambda: f64,
    count: usize,
    seed: u64,
    z: f64,
) -> Result<Vec<WeakTestReport>, McError> {
    let idents = cumulant_identities(family, n, m, max_k, lambda)?;
    weak_test(family, n, m, &idents, &TestFunction::BASIS, count, seed, z)
}

/// Secondary diagnostic: means of `F` and `F̂` in equal-count bins of the
/// first coarse value.
pub fn binned_conditional_means(
    family: &ReferenceFamily,
    n: usize,
    m: usize,
    identity: &Identity,
    bins: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>, McError> {
    if bins == 0 || count < bins {
        return Err(McError::NoSamples);
    }
    let mut rows: Vec<(f64, f64, f64)> = sample_field(family, n, m, count, seed)?
        .iter()
        .map(|s| (s.coarse[0], (identity.lhs)(s), (identity.rhs)(s)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows
        .chunks(count.div_ceil(bins))
        .map(|c| {
            let k = c.len() as f64;
            let sum = c.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2));
            (sum.0 / k, sum.1 / k, sum.2 / k)
        })
        .collect())
}

pub fn find_identity<'a>(idents: &'a [Identity], id: &str) -> Result<&'a Identity, McError> {
    idents
        .iter()
        .find(|i| i.id == id)
        .ok_or_else(|| McError::UnknownIdentity(id.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::q;

    fn gamma() -> ReferenceFamily {
        ReferenceFamily::gamma(1, q(1), q(1)).unwrap()
    }

    #[test]
    fn neumaier_beats_naive() {
        let mut acc = Neumaier::default();
        for x in [1.0, 1e100, 1.0, -1e100] {
            acc.add(x);
        }
        assert_eq!(acc.value(), 2.0);
    }

    #[test]
    fn sampler_is_deterministic_and_averages() {
        let a = sample_field(&gamma(), 0, 1, 100, 3).unwrap();
        let b = sample_field(&gamma(), 0, 1, 100, 3).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!((s.coarse[0] - 0.5 * (s.fine[0] + s.fine[1])).abs() < 1e-15);
        }
        let c = sample_field(&gamma(), 0, 1, CHUNK + 10, 3).unwrap();
        assert_eq!(&c[..100], &a[..]);
        assert_ne!(c[CHUNK], c[0]);
    }

    #[test]
    fn registry_contents() {
        let ids: Vec<String> = registered_identities(&gamma(), 0, 1).unwrap().into_iter().map(|i| i.id).collect();
        assert!(ids.contains(&"power_2".to_string()));
        assert!(ids.contains(&"cumulant_3".to_string()));
        assert!(!ids.contains(&"kinetic".to_string()));
        let ids: Vec<String> = registered_identities(&gamma(), 1, 1).unwrap().into_iter().map(|i| i.id).collect();
        assert!(ids.contains(&"kinetic".to_string()));
    }

    #[test]
    fn small_weak_test_runs() {
        let idents = registered_identities(&gamma(), 0, 1).unwrap();
        let reps = weak_test(&gamma(), 0, 1, &idents, &TestFunction::BASIS, 20_000, 9, 5.0).unwrap();
        assert_eq!(reps.len(), idents.len() * 4);
        assert!(reps.iter().all(|r| r.pass), "{reps:?}");
    }

    #[test]
    fn zero_coupling_cumulants_vanish() {
        let reps = mc_cumulants(&gamma(), 0, 1, 3, 0.0, 1000, 1, 5.0).unwrap();
        assert!(reps.iter().all(|r| r.pass && r.estimate == 0.0 && r.se == 0.0));
    }
}
