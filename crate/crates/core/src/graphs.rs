//! Multigraph cumulant calculus for quadratic Lagrangians over a Gamma
//! reference.
//!
//! A graph is a multiset of fine-level edges (loops allowed). Its conditional
//! moment `χ(g) = E[x(g) | x^n]` is a single monomial in the coarse values,
//! and `χ_c` is the joint cumulant of the edge variables, i.e. the Möbius sum
//! over set partitions of the edges with repeated edges treated as distinct
//! copies. Multiset partitions are enumerated once and weighted by the number
//! of labeled set partitions they stand for.

use crate::condexp::{gamma_cond_exp_monomial, CondExpError, MonomialSpec};
use crate::exact::{binomial, factorial, factorial_q, Q};
use crate::kinetic::QuadraticForm;
use crate::lattice::LatticeConfig;
use crate::reference::ReferenceFamily;
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

/// Largest graph handed to the partition enumerator.
pub const MAX_GRAPH_EDGES: usize = 8;

/// Largest number of ordered edge tuples a cumulant sum may visit.
pub const MAX_TUPLES: u128 = 20_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has {0} edges; the cap is {MAX_GRAPH_EDGES}")]
    TooLarge(usize),
    #[error(transparent)]
    CondExp(#[from] CondExpError),
    #[error("the graph calculus needs a Gamma reference, got {0}")]
    NotGamma(&'static str),
    #[error("edge endpoint {site} is outside level {level}")]
    SiteOutOfRange { site: usize, level: usize },
    #[error("form level {form} is below the coarse level {coarse}")]
    LevelMismatch { form: usize, coarse: usize },
    #[error("recursion and Möbius formula disagree: {recursive} vs {mobius}")]
    Disagreement { recursive: String, mobius: String },
    #[error("{0} ordered edge tuples exceed the enumeration cap")]
    ScaleCap(u128),
}

pub type Edge = (usize, usize);

fn canonical(e: Edge) -> Edge {
    (e.0.min(e.1), e.0.max(e.1))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiGraph {
    edges: Vec<Edge>,
}

impl MultiGraph {
    pub fn new(edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut edges: Vec<Edge> = edges.into_iter().map(canonical).collect();
        edges.sort_unstable();
        MultiGraph { edges }
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn size(&self) -> usize {
        self.edges.len()
    }

    pub fn product(&self, other: &MultiGraph) -> MultiGraph {
        MultiGraph::new(self.edges.iter().chain(&other.edges).copied())
    }

    /// Distinct edges with multiplicities, in edge order.
    pub fn types(&self) -> (Vec<Edge>, Vec<usize>) {
        let mut types: Vec<Edge> = Vec::new();
        let mut mult = Vec::new();
        for &e in &self.edges {
            if types.last() == Some(&e) {
                *mult.last_mut().unwrap() += 1;
            } else {
                types.push(e);
                mult.push(1);
            }
        }
        (types, mult)
    }

    /// Vertex degrees; a loop adds 2.
    pub fn degrees(&self) -> BTreeMap<usize, usize> {
        let mut deg = BTreeMap::new();
        for &(a, b) in &self.edges {
            *deg.entry(a).or_insert(0) += 1;
            *deg.entry(b).or_insert(0) += 1;
        }
        deg
    }

    /// Number of independent cycles `E - V + components`.
    pub fn loop_number(&self) -> usize {
        let deg = self.degrees();
        let verts: Vec<usize> = deg.keys().copied().collect();
        let mut uf = UnionFind::new(&verts);
        for &(a, b) in &self.edges {
            uf.union(a, b);
        }
        self.edges.len() + uf.components() - verts.len()
    }
}

struct UnionFind {
    parent: HashMap<usize, usize>,
}

impl UnionFind {
    fn new(verts: &[usize]) -> Self {
        UnionFind {
            parent: verts.iter().map(|&v| (v, v)).collect(),
        }
    }

    fn find(&mut self, v: usize) -> usize {
        let p = self.parent[&v];
        if p == v {
            return v;
        }
        let root = self.find(p);
        self.parent.insert(v, root);
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra, rb);
        }
    }

    fn components(&mut self) -> usize {
        let keys: Vec<usize> = self.parent.keys().copied().collect();
        let mut roots: Vec<usize> = keys.into_iter().map(|v| self.find(v)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }
}

/// `coefficient · Π_i x_i^{exponents[i]}` over the coarse sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChiValue {
    pub coef: Q,
    pub exponents: Vec<usize>,
}

/// Every multiset partition of the multiplicity vector `mult`, each exactly
/// once, as non-increasing (lexicographic) block sequences.
pub fn multiplicity_partitions(mult: &[usize]) -> Vec<Vec<Vec<usize>>> {
    fn blocks_below(rem: &[usize], max: &[usize]) -> Vec<Vec<usize>> {
        // All nonzero b <= rem componentwise with b <=_lex max.
        let mut out = Vec::new();
        let mut cur = vec![0usize; rem.len()];
        fn rec(
            t: usize,
            rem: &[usize],
            max: &[usize],
            tight: bool,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if t == rem.len() {
                if cur.iter().any(|&c| c > 0) {
                    out.push(cur.clone());
                }
                return;
            }
            let hi = if tight { rem[t].min(max[t]) } else { rem[t] };
            for v in (0..=hi).rev() {
                cur[t] = v;
                rec(t + 1, rem, max, tight && v == max[t], cur, out);
            }
            cur[t] = 0;
        }
        rec(0, rem, max, true, &mut cur, &mut out);
        out
    }
    fn go(rem: &[usize], max: &[usize], acc: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
        if rem.iter().all(|&r| r == 0) {
            out.push(acc.clone());
            return;
        }
        for b in blocks_below(rem, max) {
            let next: Vec<usize> = rem.iter().zip(&b).map(|(r, x)| r - x).collect();
            acc.push(b.clone());
            go(&next, &b, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    go(mult, mult, &mut Vec::new(), &mut out);
    out
}

/// Multiset partitions of `g`, each once. Errors above the size cap.
pub fn multiset_partitions(g: &MultiGraph) -> Result<Vec<Vec<MultiGraph>>, GraphError> {
    if g.size() > MAX_GRAPH_EDGES {
        return Err(GraphError::TooLarge(g.size()));
    }
    let (types, mult) = g.types();
    Ok(multiplicity_partitions(&mult)
        .into_iter()
        .map(|blocks| {
            blocks
                .iter()
                .map(|b| {
                    MultiGraph::new(
                        b.iter()
                            .zip(&types)
                            .flat_map(|(&c, &e)| std::iter::repeat_n(e, c)),
                    )
                })
                .collect()
        })
        .collect())
}

/// Number of set partitions of the labeled edge copies that collapse to the
/// given multiset partition.
pub fn labeled_weight(mult: &[usize], blocks: &[Vec<usize>]) -> BigUint {
    let mut num: BigUint = mult.iter().map(|&m| factorial(m as u64)).product();
    let mut den = BigUint::one();
    for b in blocks {
        for &c in b {
            den *= factorial(c as u64);
        }
    }
    let mut sorted = blocks.to_vec();
    sorted.sort();
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            den *= factorial(run);
            run = 1;
        }
    }
    den *= factorial(run);
    num /= den;
    num
}

fn big(n: BigUint) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Refinement context: Gamma family, coarse level `n`, depth `m`.
#[derive(Debug, Clone)]
pub struct GraphContext {
    family: ReferenceFamily,
    n: usize,
    m: usize,
}

impl GraphContext {
    pub fn new(family: ReferenceFamily, n: usize, m: usize) -> Result<Self, GraphError> {
        if family.alpha(0).is_none() {
            return Err(GraphError::NotGamma(family.name()));
        }
        Ok(GraphContext { family, n, m })
    }

    pub fn lattice(&self) -> LatticeConfig {
        self.family.lattice()
    }

    pub fn family(&self) -> &ReferenceFamily {
        &self.family
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coarse_sites(&self) -> usize {
        self.lattice().num_sites(self.n)
    }

    pub fn fine_sites(&self) -> usize {
        self.lattice().num_sites(self.n + self.m)
    }

    fn block(&self) -> usize {
        self.lattice().num_sites(self.m)
    }

    pub fn validate(&self, g: &MultiGraph) -> Result<(), GraphError> {
        let limit = self.fine_sites();
        for &(a, b) in g.edges() {
            for site in [a, b] {
                if site >= limit {
                    return Err(GraphError::SiteOutOfRange {
                        site,
                        level: self.n + self.m,
                    });
                }
            }
        }
        Ok(())
    }

    /// `P^n(g)`: every endpoint replaced by its level-`n` ancestor.
    pub fn coarse(&self, g: &MultiGraph) -> MultiGraph {
        let block = self.block();
        MultiGraph::new(g.edges().iter().map(|&(a, b)| (a / block, b / block)))
    }

    pub fn is_coarsely_connected(&self, g: &MultiGraph) -> bool {
        is_connected(&self.coarse(g))
    }

    /// Coarse degree profile `K` with `χ(g) ∝ Π x_i^{K_i}`.
    pub fn coarse_exponents(&self, g: &MultiGraph) -> Vec<usize> {
        let mut k = vec![0usize; self.coarse_sites()];
        for (site, deg) in self.coarse(g).degrees() {
            k[site] += deg;
        }
        k
    }

    /// Scalar `χ̃(g)`: product over coarse cells of Gamma monomial
    /// coefficients.
    pub fn chi_scalar(&self, g: &MultiGraph) -> Result<Q, GraphError> {
        self.validate(g)?;
        let block = self.block();
        let mut per_cell: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (site, deg) in g.degrees() {
            per_cell.entry(site / block).or_default().push(deg);
        }
        let mut coef = Q::one();
        for exps in per_cell.into_values() {
            let spec = MonomialSpec::new(exps)?;
            coef *= gamma_cond_exp_monomial(&self.family, self.n, self.m, &spec)?;
        }
        Ok(coef)
    }

    pub fn chi(&self, g: &MultiGraph) -> Result<ChiValue, GraphError> {
        Ok(ChiValue {
            coef: self.chi_scalar(g)?,
            exponents: self.coarse_exponents(g),
        })
    }

    fn with_cache<T>(&self, g: &MultiGraph, f: impl FnOnce(&mut CumulantCache<'_>) -> Result<T, GraphError>) -> Result<T, GraphError> {
        if g.size() > MAX_GRAPH_EDGES {
            return Err(GraphError::TooLarge(g.size()));
        }
        self.validate(g)?;
        let (types, _) = g.types();
        let mut cache = CumulantCache::new(self, types);
        f(&mut cache)
    }

    /// `χ̃_c` from the Möbius sum over partitions.
    pub fn chi_connected_mobius(&self, g: &MultiGraph) -> Result<Q, GraphError> {
        let (_, mult) = g.types();
        self.with_cache(g, |c| c.connected_mobius(&mult))
    }

    /// `χ̃_c` from the edge-anchored recursion.
    pub fn chi_connected_recursive(&self, g: &MultiGraph) -> Result<Q, GraphError> {
        let (_, mult) = g.types();
        self.with_cache(g, |c| c.connected_recursive(&mult))
    }

    /// `χ_c(g)`, computed both ways; disagreement is an error.
    pub fn chi_connected(&self, g: &MultiGraph) -> Result<ChiValue, GraphError> {
        let (_, mult) = g.types();
        let (rec, mob) = self.with_cache(g, |c| {
            Ok((c.connected_recursive(&mult)?, c.connected_mobius(&mult)?))
        })?;
        if rec != mob {
            return Err(GraphError::Disagreement {
                recursive: rec.to_string(),
                mobius: mob.to_string(),
            });
        }
        Ok(ChiValue {
            coef: rec,
            exponents: self.coarse_exponents(g),
        })
    }

    /// Rebuild `χ(g)` from the connected parts and compare.
    pub fn moment_cumulant_roundtrip(&self, g: &MultiGraph) -> Result<bool, GraphError> {
        let (_, mult) = g.types();
        self.with_cache(g, |c| {
            let direct = c.chi(&mult)?;
            let mut rebuilt = Q::zero();
            for blocks in multiplicity_partitions(&mult) {
                let mut term = big(labeled_weight(&mult, &blocks));
                for b in &blocks {
                    term *= c.connected_recursive(b)?;
                }
                rebuilt += term;
            }
            Ok(rebuilt == direct)
        })
    }
}

fn is_connected(g: &MultiGraph) -> bool {
    let verts: Vec<usize> = g.degrees().keys().copied().collect();
    if verts.is_empty() {
        return true;
    }
    let mut uf = UnionFind::new(&verts);
    for &(a, b) in g.edges() {
        uf.union(a, b);
    }
    uf.components() == 1
}

/// Memoized `χ̃` and `χ̃_c` on sub-multisets of one graph's edge types.
struct CumulantCache<'a> {
    ctx: &'a GraphContext,
    types: Vec<Edge>,
    chi: HashMap<Vec<usize>, Q>,
    connected: HashMap<Vec<usize>, Q>,
}

impl<'a> CumulantCache<'a> {
    fn new(ctx: &'a GraphContext, types: Vec<Edge>) -> Self {
        CumulantCache {
            ctx,
            types,
            chi: HashMap::new(),
            connected: HashMap::new(),
        }
    }

    fn graph(&self, mult: &[usize]) -> MultiGraph {
        MultiGraph::new(
            mult.iter()
                .zip(&self.types)
                .flat_map(|(&c, &e)| std::iter::repeat_n(e, c)),
        )
    }

    fn chi(&mut self, mult: &[usize]) -> Result<Q, GraphError> {
        if let Some(v) = self.chi.get(mult) {
            return Ok(v.clone());
        }
        let v = self.ctx.chi_scalar(&self.graph(mult))?;
        self.chi.insert(mult.to_vec(), v.clone());
        Ok(v)
    }

    fn connected_mobius(&mut self, mult: &[usize]) -> Result<Q, GraphError> {
        let mut total = Q::zero();
        for blocks in multiplicity_partitions(mult) {
            let p = blocks.len();
            let sign = if p % 2 == 1 { Q::one() } else { -Q::one() };
            let mut term = big(labeled_weight(mult, &blocks)) * factorial_q(p as u64 - 1) * sign;
            for b in &blocks {
                term *= self.chi(b)?;
            }
            total += term;
        }
        Ok(total)
    }

    fn connected_recursive(&mut self, mult: &[usize]) -> Result<Q, GraphError> {
        if let Some(v) = self.connected.get(mult) {
            return Ok(v.clone());
        }
        let anchor = mult.iter().position(|&c| c > 0).expect("nonempty graph");
        let mut value = self.chi(mult)?;
        let mut h = vec![0usize; mult.len()];
        h[anchor] = 1;
        loop {
            if h != mult {
                let mut weight = big(binomial(mult[anchor] as u64 - 1, h[anchor] as u64 - 1));
                for (t, (&ht, &mt)) in h.iter().zip(mult).enumerate() {
                    if t != anchor {
                        weight *= big(binomial(mt as u64, ht as u64));
                    }
                }
                let rest: Vec<usize> = mult.iter().zip(&h).map(|(a, b)| a - b).collect();
                value -= weight * self.connected_recursive(&h)? * self.chi(&rest)?;
            }
            // Odometer over sub-multisets with h[anchor] >= 1.
            let mut t = 0;
            loop {
                if t == mult.len() {
                    self.connected.insert(mult.to_vec(), value.clone());
                    return Ok(value);
                }
                let lo = usize::from(t == anchor);
                if h[t] < mult[t] {
                    h[t] += 1;
                    break;
                }
                h[t] = lo;
                t += 1;
            }
        }
    }
}

/// Polynomial in coarse values keyed by exponent vectors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoarsePoly {
    pub terms: BTreeMap<Vec<usize>, Q>,
}

impl CoarsePoly {
    pub fn constant(c: Q, sites: usize) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(vec![0; sites], c);
        }
        CoarsePoly { terms }
    }

    pub fn add_term(&mut self, exps: Vec<usize>, c: Q) {
        let entry = self.terms.entry(exps).or_insert_with(Q::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), v.clone());
        }
        out
    }

    pub fn scale(&self, s: &Q) -> Self {
        let mut out = CoarsePoly::default();
        for (k, v) in &self.terms {
            out.add_term(k.clone(), v * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = CoarsePoly::default();
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                let k: Vec<usize> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                out.add_term(k, va * vb);
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|v| v.is_zero())
    }

    pub fn coeff(&self, exps: &[usize]) -> Q {
        self.terms.get(exps).cloned().unwrap_or_else(Q::zero)
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, v)| {
                k.iter()
                    .zip(x)
                    .fold(crate::exact::to_f64(v), |acc, (&e, &xi)| acc * xi.powi(e as i32))
            })
            .sum()
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = CoarsePoly::default();
        for (k, v) in &self.terms {
            let mut moved = vec![0usize; k.len()];
            for (i, &e) in k.iter().enumerate() {
                moved[perm[i]] = e;
            }
            out.add_term(moved, v.clone());
        }
        out
    }
}

/// Merged edge weights `c^{n+m}(e)` of a bond form.
fn edge_weights(form: &QuadraticForm) -> BTreeMap<Edge, Q> {
    let mut w: BTreeMap<Edge, Q> = BTreeMap::new();
    for (a, b, c) in &form.terms {
        *w.entry(canonical((*a, *b))).or_insert_with(Q::zero) += c;
    }
    w.retain(|_, v| !v.is_zero());
    w
}

/// `c(g)`: product of the merged edge weights of `form` over the edges of
/// `g`, with multiplicity. Zero if `g` uses an edge the form lacks.
pub fn coupling(form: &QuadraticForm, g: &MultiGraph) -> Q {
    let w = edge_weights(form);
    g.edges()
        .iter()
        .map(|e| w.get(e).cloned().unwrap_or_else(Q::zero))
        .product()
}

/// Site permutations of the coarse torus translations, acting on level `level`.
fn translations(lattice: LatticeConfig, n: usize, level: usize) -> Vec<Vec<usize>> {
    let coarse_side = lattice.side(n);
    let fine_side = lattice.side(level);
    let stride = fine_side / coarse_side;
    (0..lattice.num_sites(n))
        .map(|t| {
            let shift = lattice.coords(&lattice.site_at(n, t));
            (0..lattice.num_sites(level))
                .map(|s| {
                    let mut c = lattice.coords(&lattice.site_at(level, s));
                    for (x, dx) in c.iter_mut().zip(&shift) {
                        *x = (*x + dx * stride) % fine_side;
                    }
                    lattice.index(&lattice.site_from_coords(level, &c).expect("on torus"))
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Statistic {
    Moment,
    Cumulant,
}

fn tuple_sum(
    ctx: &GraphContext,
    form: &QuadraticForm,
    k: usize,
    stat: Statistic,
) -> Result<CoarsePoly, GraphError> {
    if form.level != ctx.n + ctx.m {
        return Err(GraphError::LevelMismatch {
            form: form.level,
            coarse: ctx.n,
        });
    }
    let sites = ctx.coarse_sites();
    if k == 0 {
        return Ok(CoarsePoly::constant(Q::one(), sites));
    }
    let weights = edge_weights(form);
    let edges: Vec<(Edge, Q)> = weights.iter().map(|(e, c)| (*e, c.clone())).collect();

    // Orbit representatives for the first edge when the form is invariant
    // under coarse translations.
    let coarse_perms = translations(ctx.lattice(), ctx.n, ctx.n);
    let fine_perms = translations(ctx.lattice(), ctx.n, form.level);
    let invariant = fine_perms.iter().all(|p| {
        weights
            .iter()
            .all(|(&(a, b), c)| weights.get(&canonical((p[a], p[b]))) == Some(c))
    });
    let mut firsts: Vec<(usize, Q)> = Vec::new();
    if invariant {
        let mut seen = std::collections::BTreeSet::new();
        for (idx, &(e, _)) in edges.iter().enumerate() {
            if seen.contains(&e) {
                continue;
            }
            let orbit: std::collections::BTreeSet<Edge> =
                fine_perms.iter().map(|p| canonical((p[e.0], p[e.1]))).collect();
            let stabilizer = fine_perms.len() / orbit.len();
            seen.extend(orbit);
            firsts.push((idx, Q::new(BigInt::one(), BigInt::from(stabilizer))));
        }
    } else {
        firsts = (0..edges.len()).map(|i| (i, Q::one())).collect();
    }

    let visits = firsts.len() as u128 * (edges.len() as u128).pow(k as u32 - 1);
    if visits > MAX_TUPLES {
        return Err(GraphError::ScaleCap(visits));
    }

    let partials: Vec<Result<CoarsePoly, GraphError>> = firsts
        .par_iter()
        .map(|(first, orbit_weight)| {
            let mut memo: HashMap<MultiGraph, Q> = HashMap::new();
            let mut out = CoarsePoly::default();
            let mut rest = vec![0usize; k - 1];
            loop {
                let mut coef = edges[*first].1.clone();
                let mut list = vec![edges[*first].0];
                for &r in &rest {
                    coef *= &edges[r].1;
                    list.push(edges[r].0);
                }
                let g = MultiGraph::new(list);
                let keep = stat == Statistic::Moment || ctx.is_coarsely_connected(&g);
                if keep {
                    let scalar = match memo.get(&g) {
                        Some(v) => v.clone(),
                        None => {
                            let v = match stat {
                                Statistic::Moment => ctx.chi_scalar(&g)?,
                                Statistic::Cumulant => ctx.chi_connected_recursive(&g)?,
                            };
                            memo.insert(g.clone(), v.clone());
                            v
                        }
                    };
                    if !scalar.is_zero() {
                        out.add_term(ctx.coarse_exponents(&g), coef * scalar * orbit_weight);
                    }
                }
                let mut t = 0;
                loop {
                    if t == rest.len() {
                        return Ok(out);
                    }
                    rest[t] += 1;
                    if rest[t] < edges.len() {
                        break;
                    }
                    rest[t] = 0;
                    t += 1;
                }
            }
        })
        .collect();

    let mut anchored = CoarsePoly::default();
    for p in partials {
        anchored = anchored.add(&p?);
    }
    let total = if invariant {
        coarse_perms
            .iter()
            .fold(CoarsePoly::default(), |acc, perm| acc.add(&anchored.permuted(perm)))
    } else {
        anchored
    };
    let norm = ctx.lattice().cell_volume(form.level);
    Ok(total.scale(&crate::exact::qpow(&norm, k as i64)))
}

/// `L_eff,k^{n,m}(x^n) = r^{-k(n+m)} Σ c(g) χ_c(g)` over ordered, coarsely
/// connected `k`-tuples of edges of `form`: the `k`-th conditional cumulant
/// of `form` given `x^n`.
pub fn lagrangian_cumulant(ctx: &GraphContext, form: &QuadraticForm, k: usize) -> Result<CoarsePoly, GraphError> {
    tuple_sum(ctx, form, k, Statistic::Cumulant)
}

/// `E[L^k | x^n]` by direct expansion over all ordered edge tuples.
pub fn lagrangian_moment(ctx: &GraphContext, form: &QuadraticForm, k: usize) -> Result<CoarsePoly, GraphError> {
    tuple_sum(ctx, form, k, Statistic::Moment)
}

/// Moments `E[L^j]`, `j = 0..=k`, from cumulants `κ_1..κ_k` via
/// `E[L^j] = Σ_ℓ C(j-1, ℓ-1) κ_ℓ E[L^{j-ℓ}]`.
pub fn moments_from_cumulants(cumulants: &[CoarsePoly], sites: usize) -> Vec<CoarsePoly> {
    let mut moments = vec![CoarsePoly::constant(Q::one(), sites)];
    for j in 1..=cumulants.len() {
        let mut mj = CoarsePoly::default();
        for ell in 1..=j {
            let w = crate::exact::binomial_q(j as u64 - 1, ell as u64 - 1);
            mj = mj.add(&cumulants[ell - 1].mul(&moments[j - ell]).scale(&w));
        }
        moments.push(mj);
    }
    moments
}

/// All multigraphs with `1..=max_edges` edges on the given fine sites.
pub fn enumerate_graphs(sites: &[usize], max_edges: usize) -> Vec<MultiGraph> {
    let mut edge_pool = Vec::new();
    for (i, &a) in sites.iter().enumerate() {
        for &b in &sites[i..] {
            edge_pool.push(canonical((a, b)));
        }
    }
    edge_pool.sort_unstable();
    let mut out = Vec::new();
    fn rec(pool: &[Edge], start: usize, left: usize, cur: &mut Vec<Edge>, out: &mut Vec<MultiGraph>) {
        if !cur.is_empty() {
            out.push(MultiGraph::new(cur.iter().copied()));
        }
        if left == 0 {
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i]);
            rec(pool, i, left - 1, cur, out);
            cur.pop();
        }
    }
    rec(&edge_pool, 0, max_edges, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{q, qf};

    fn ctx(n: usize, m: usize) -> GraphContext {
        GraphContext::new(ReferenceFamily::gamma(1, q(1), q(1)).unwrap(), n, m).unwrap()
    }

    #[test]
    fn coarse_projection() {
        let c = ctx(1, 1);
        assert_eq!(c.coarse(&MultiGraph::new([(3, 3)])).edges(), &[(1, 1)]);
        assert_eq!(c.coarse(&MultiGraph::new([(0, 1)])).edges(), &[(0, 0)]);
        assert_eq!(c.coarse(&MultiGraph::new([(1, 2)])).edges(), &[(0, 1)]);
    }

    #[test]
    fn connectivity() {
        let c = ctx(1, 1);
        assert!(c.is_coarsely_connected(&MultiGraph::new([(0, 3)])));
        assert!(!c.is_coarsely_connected(&MultiGraph::new([(0, 0), (2, 2)])));
        assert!(c.is_coarsely_connected(&MultiGraph::new([(0, 0), (1, 1)])));
    }

    #[test]
    fn partition_counts() {
        let e = MultiGraph::new([(0, 0)]);
        assert_eq!(multiset_partitions(&e).unwrap().len(), 1);
        let e2 = MultiGraph::new([(0, 0), (0, 0)]);
        assert_eq!(multiset_partitions(&e2).unwrap().len(), 2);
        let three = MultiGraph::new([(0, 0), (0, 1), (1, 1)]);
        assert_eq!(multiset_partitions(&three).unwrap().len(), 5);
        let big = MultiGraph::new((0..9).map(|i| (i, i)));
        assert!(matches!(multiset_partitions(&big), Err(GraphError::TooLarge(9))));
    }

    #[test]
    fn labeled_weights_sum_to_bell() {
        for mult in [vec![4], vec![2, 2], vec![1, 1, 1, 1], vec![3, 1]] {
            let total: BigUint = multiplicity_partitions(&mult)
                .iter()
                .map(|b| labeled_weight(&mult, b))
                .sum();
            assert_eq!(total, BigUint::from(15u32));
        }
    }

    #[test]
    fn chi_examples() {
        let c = ctx(0, 1);
        let lp = c.chi(&MultiGraph::new([(0, 0)])).unwrap();
        assert_eq!(lp, ChiValue { coef: qf(3, 2), exponents: vec![2] });
        assert_eq!(c.chi_scalar(&MultiGraph::new([(0, 1)])).unwrap(), qf(1, 2));
        let c2 = ctx(1, 1);
        let g = MultiGraph::new([(0, 0), (2, 2)]);
        let a = c2.chi_scalar(&MultiGraph::new([(0, 0)])).unwrap();
        let b = c2.chi_scalar(&MultiGraph::new([(2, 2)])).unwrap();
        assert_eq!(c2.chi_scalar(&g).unwrap(), a * b);
    }

    #[test]
    fn connected_examples() {
        let c = ctx(0, 1);
        let e = MultiGraph::new([(0, 0)]);
        assert_eq!(c.chi_connected(&e).unwrap().coef, qf(3, 2));
        let e2 = MultiGraph::new([(0, 0), (0, 0)]);
        assert_eq!(c.chi_scalar(&e2).unwrap(), qf(35, 8));
        assert_eq!(c.chi_connected(&e2).unwrap().coef, qf(17, 8));
        let c2 = ctx(1, 1);
        let disc = MultiGraph::new([(0, 1), (2, 2), (2, 3)]);
        assert_eq!(c2.chi_connected(&disc).unwrap().coef, q(0));
        assert!(c2.moment_cumulant_roundtrip(&disc).unwrap());
    }

    #[test]
    fn mass_first_cumulant_is_wick() {
        let family = ReferenceFamily::gamma(1, q(1), q(1)).unwrap();
        let (n, m) = (1, 2);
        let c = ctx(n, m);
        let coef = |lvl: i64| (q(1) + q(1)) / (q(1) + family.r_pow(lvl));
        let form = QuadraticForm::diagonal(family.lattice(), n + m, coef((n + m) as i64));
        let k1 = lagrangian_cumulant(&c, &form, 1).unwrap();
        let want = coef(n as i64) * family.lattice().cell_volume(n);
        assert_eq!(k1.coeff(&[2, 0]), want);
        assert_eq!(k1.coeff(&[0, 2]), want);
        assert_eq!(k1.terms.len(), 2);
    }

    #[test]
    fn cumulants_rebuild_moments_kinetic() {
        let family = ReferenceFamily::gamma(1, q(1), q(1)).unwrap();
        let c = ctx(1, 1);
        let form = crate::kinetic::kinetic_adjacency_gamma(&family, 2).unwrap();
        let kappas: Vec<CoarsePoly> = (1..=3).map(|k| lagrangian_cumulant(&c, &form, k).unwrap()).collect();
        let rebuilt = moments_from_cumulants(&kappas, c.coarse_sites());
        for k in 1..=3 {
            assert_eq!(rebuilt[k], lagrangian_moment(&c, &form, k).unwrap(), "k={k}");
        }
    }

    #[test]
    fn enumeration_count() {
        assert_eq!(enumerate_graphs(&[0, 1, 2, 3, 4, 5], 4).len(), 12649);
    }
}
