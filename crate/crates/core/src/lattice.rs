//! Hierarchical hypercube lattice on the torus `[0,1]^d / Z^d`.
//!
//! A site at resolution `n` is addressed by its refinement path
//! `(i_1, ..., i_n)` with every `i_k` in `1..=r`, `r = 2^d`. Child digit
//! `c` encodes one bit per dimension: bit `a` of `c - 1` selects the lower or
//! upper half along axis `a`. Sites at a fixed level are ordered
//! lexicographically by path, which makes the level-`n` ancestor of the fine
//! site with linear index `s` at level `n + m` simply `s / r^m`.

use crate::exact::{binomial, Q};
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use std::collections::BTreeMap;
use thiserror::Error;

/// Refinement ratio per side. Every cell splits into `2^d` children.
pub const EPSILON: f64 = 0.5;

/// Largest dimension accepted; keeps `r^level` comfortably inside `usize`.
pub const MAX_DIMENSION: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("dimension must be in 1..={MAX_DIMENSION}, got {0}")]
    BadDimension(usize),
    #[error("path digit {digit} outside 1..={r}")]
    DigitOutOfRange { digit: u8, r: usize },
    #[error("stratum {stratum} outside 0..={d}")]
    StratumOutOfRange { stratum: usize, d: usize },
    #[error("point {0:?} is not in the window")]
    PointOutsideWindow(Vec<usize>),
    #[error("coordinate vector has length {got}, expected {d}")]
    CoordinateLength { got: usize, d: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeConfig {
    d: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteIndex {
    path: Vec<u8>,
}

impl SiteIndex {
    pub fn root() -> Self {
        SiteIndex { path: Vec::new() }
    }

    pub fn path(&self) -> &[u8] {
        &self.path
    }

    pub fn level(&self) -> usize {
        self.path.len()
    }

    pub fn parent(&self) -> Option<SiteIndex> {
        if self.path.is_empty() {
            None
        } else {
            Some(SiteIndex {
                path: self.path[..self.path.len() - 1].to_vec(),
            })
        }
    }

    /// Level-`n` ancestor; `n` is clamped to the site's own level.
    pub fn ancestor(&self, n: usize) -> SiteIndex {
        SiteIndex {
            path: self.path[..n.min(self.path.len())].to_vec(),
        }
    }

    /// Split into the coarse part `i` (first `n` digits) and the fine part `j`.
    pub fn split(&self, n: usize) -> (SiteIndex, SiteIndex) {
        let n = n.min(self.path.len());
        (
            SiteIndex {
                path: self.path[..n].to_vec(),
            },
            SiteIndex {
                path: self.path[n..].to_vec(),
            },
        )
    }

    pub fn join(&self, fine: &SiteIndex) -> SiteIndex {
        let mut path = self.path.clone();
        path.extend_from_slice(&fine.path);
        SiteIndex { path }
    }
}

impl LatticeConfig {
    pub fn new(d: usize) -> Result<Self, LatticeError> {
        if d == 0 || d > MAX_DIMENSION {
            return Err(LatticeError::BadDimension(d));
        }
        Ok(LatticeConfig { d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Children per cell, `2^d`.
    pub fn r(&self) -> usize {
        1 << self.d
    }

    /// Sites per side at `level`, i.e. `ε^{-level}`.
    pub fn side(&self, level: usize) -> usize {
        1 << level
    }

    pub fn num_sites(&self, level: usize) -> usize {
        self.r().pow(level as u32)
    }

    /// Side length `ε^n` of a level-`n` cell, exactly.
    pub fn sidelength(&self, n: usize) -> Q {
        Q::new(BigInt::from(1), BigInt::from(1u64) << n)
    }

    /// Volume `r^{-n}` of a level-`n` cell of a unit base cell.
    pub fn cell_volume(&self, n: usize) -> Q {
        Q::new(BigInt::from(1), BigInt::from(1u64) << (n * self.d))
    }

    pub fn site(&self, path: &[u8]) -> Result<SiteIndex, LatticeError> {
        let r = self.r();
        if let Some(&digit) = path.iter().find(|&&c| c == 0 || c as usize > r) {
            return Err(LatticeError::DigitOutOfRange { digit, r });
        }
        Ok(SiteIndex {
            path: path.to_vec(),
        })
    }

    /// The `r` children of `site`, in digit order.
    pub fn children(&self, site: &SiteIndex) -> Vec<SiteIndex> {
        (1..=self.r() as u8)
            .map(|c| {
                let mut path = site.path.clone();
                path.push(c);
                SiteIndex { path }
            })
            .collect()
    }

    /// Position of `site` in the lexicographic order of its level.
    pub fn index(&self, site: &SiteIndex) -> usize {
        site.path
            .iter()
            .fold(0, |acc, &c| acc * self.r() + (c as usize - 1))
    }

    pub fn site_at(&self, level: usize, mut index: usize) -> SiteIndex {
        let r = self.r();
        let mut path = vec![0u8; level];
        for slot in path.iter_mut().rev() {
            *slot = (index % r) as u8 + 1;
            index /= r;
        }
        SiteIndex { path }
    }

    /// Integer coordinates in `0..side(level)` per axis.
    pub fn coords(&self, site: &SiteIndex) -> Vec<usize> {
        let mut coords = vec![0usize; self.d];
        for &c in &site.path {
            let bits = c as usize - 1;
            for (a, x) in coords.iter_mut().enumerate() {
                *x = 2 * *x + ((bits >> a) & 1);
            }
        }
        coords
    }

    pub fn site_from_coords(
        &self,
        level: usize,
        coords: &[usize],
    ) -> Result<SiteIndex, LatticeError> {
        if coords.len() != self.d {
            return Err(LatticeError::CoordinateLength {
                got: coords.len(),
                d: self.d,
            });
        }
        let side = self.side(level);
        if coords.iter().any(|&x| x >= side) {
            return Err(LatticeError::PointOutsideWindow(coords.to_vec()));
        }
        let mut path = Vec::with_capacity(level);
        for k in (0..level).rev() {
            let mut digit = 0usize;
            for (a, &x) in coords.iter().enumerate() {
                digit |= ((x >> k) & 1) << a;
            }
            path.push(digit as u8 + 1);
        }
        Ok(SiteIndex { path })
    }

    /// The `2d` torus neighbours of `site` at its own level, listed as
    /// (axis 1 down, axis 1 up, axis 2 down, ...). Multiplicity is kept when
    /// the torus is small, so the two-site ring returns the other site twice.
    pub fn coarse_neighbors(&self, site: &SiteIndex) -> Vec<SiteIndex> {
        let level = site.level();
        let side = self.side(level);
        let base = self.coords(site);
        let mut out = Vec::with_capacity(2 * self.d);
        for a in 0..self.d {
            for step in [side - 1, 1] {
                let mut c = base.clone();
                c[a] = (c[a] + step) % side;
                out.push(self.site_from_coords(level, &c).expect("in range"));
            }
        }
        out
    }

    /// Linear index of the torus neighbour one step up along `axis`.
    pub fn step_up(&self, level: usize, index: usize, axis: usize) -> usize {
        let side = self.side(level);
        let site = self.site_at(level, index);
        let mut c = self.coords(&site);
        c[axis] = (c[axis] + 1) % side;
        self.index(&self.site_from_coords(level, &c).expect("in range"))
    }

    /// Every nearest-neighbour bond of the level-`level` torus exactly once,
    /// as `(s, s + e_axis)` pairs of linear indices. There are `d * r^level`
    /// of them; on one- and two-site rings some bonds repeat or close on
    /// themselves, which is the multigraph the torus glueing produces.
    pub fn bonds(&self, level: usize) -> Vec<(usize, usize)> {
        let n = self.num_sites(level);
        let mut out = Vec::with_capacity(n * self.d);
        for s in 0..n {
            for a in 0..self.d {
                out.push((s, self.step_up(level, s, a)));
            }
        }
        out
    }

    pub fn window(&self, m: usize) -> FineWindow {
        FineWindow { cfg: *self, m }
    }
}

/// The fine children `{ij : j in I^m}` of one coarse cell, identified with
/// the grid `Λ = {1, ..., ε^{-m}}^d`. Adjacency inside the window never
/// wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FineWindow {
    cfg: LatticeConfig,
    m: usize,
}

pub type Point = Vec<usize>;

impl FineWindow {
    pub fn d(&self) -> usize {
        self.cfg.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `ε^{-m}`, points per axis.
    pub fn side(&self) -> usize {
        1 << self.m
    }

    pub fn len(&self) -> usize {
        self.cfg.num_sites(self.m)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, p: &[usize]) -> bool {
        p.len() == self.d() && p.iter().all(|&x| (1..=self.side()).contains(&x))
    }

    /// Fine part `j` (a path of length `m`) to its window point.
    pub fn point_of(&self, fine: &SiteIndex) -> Point {
        self.cfg.coords(fine).into_iter().map(|x| x + 1).collect()
    }

    pub fn fine_of(&self, p: &[usize]) -> Result<SiteIndex, LatticeError> {
        if !self.contains(p) {
            return Err(LatticeError::PointOutsideWindow(p.to_vec()));
        }
        let zero_based: Vec<usize> = p.iter().map(|x| x - 1).collect();
        self.cfg.site_from_coords(self.m, &zero_based)
    }

    /// All points, ordered by the lexicographic order of their fine paths.
    pub fn points(&self) -> Vec<Point> {
        (0..self.len())
            .map(|j| self.point_of(&self.cfg.site_at(self.m, j)))
            .collect()
    }

    pub fn within_region_neighbors(&self, p: &[usize]) -> Vec<Point> {
        let mut out = Vec::new();
        for a in 0..self.d() {
            if p[a] > 1 {
                let mut q = p.to_vec();
                q[a] -= 1;
                out.push(q);
            }
            if p[a] < self.side() {
                let mut q = p.to_vec();
                q[a] += 1;
                out.push(q);
            }
        }
        out
    }

    /// Histogram `within-region degree -> number of points`.
    pub fn degree_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for p in self.points() {
            *hist.entry(self.within_region_neighbors(&p).len()).or_insert(0) += 1;
        }
        hist
    }

    /// Number of axes along which `p` can still be shifted up.
    pub fn open_axes(&self, p: &[usize]) -> usize {
        p.iter().filter(|&&x| x < self.side()).count()
    }

    /// `Λ_ℓ`: points with exactly `ℓ` coordinates below `ε^{-m}`.
    pub fn stratum(&self, stratum: usize) -> Result<Vec<Point>, LatticeError> {
        if stratum > self.d() {
            return Err(LatticeError::StratumOutOfRange {
                stratum,
                d: self.d(),
            });
        }
        Ok(self
            .points()
            .into_iter()
            .filter(|p| self.open_axes(p) == stratum)
            .collect())
    }

    /// Closed form `C(d,ℓ) (ε^{-m} - 1)^ℓ` for `|Λ_ℓ|`.
    pub fn stratum_size(&self, stratum: usize) -> usize {
        let c = binomial(self.d() as u64, stratum as u64).to_usize().unwrap_or(0);
        c * (self.side() - 1).pow(stratum as u32)
    }

    /// `σ_axis`, with `axis` in `1..=d`. `None` outside the domain `D_axis`
    /// (the window does not wrap) or for an invalid axis.
    pub fn shift(&self, axis: usize, p: &[usize]) -> Option<Point> {
        if axis == 0 || axis > self.d() || !self.contains(p) || p[axis - 1] >= self.side() {
            return None;
        }
        let mut q = p.to_vec();
        q[axis - 1] += 1;
        Some(q)
    }
}
