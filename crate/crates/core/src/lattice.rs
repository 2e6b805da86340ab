//! Integer lattice points, unit directions, and the real-valued predicates
//! (half-spaces, cubes, cylinders) built on top of them.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported ambient dimension.
pub const MAX_DIM: usize = 4;

/// Tolerance on the Euclidean norm of a [`Direction`].
pub const DIRECTION_TOL: f64 = 1e-12;
/// Tolerance used for orthogonality checks.
pub const ORTHO_TOL: f64 = 1e-9;

/// A site of `Z^d`. Unused trailing coordinates are always zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i32>", into = "Vec<i32>")]
pub struct LatticePoint {
    coords: [i32; MAX_DIM],
    dim: u8,
}

impl LatticePoint {
    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} out of range");
        LatticePoint { coords: [0; MAX_DIM], dim: dim as u8 }
    }

    pub fn new(coords: &[i32]) -> Self {
        let mut p = Self::origin(coords.len());
        p.coords[..coords.len()].copy_from_slice(coords);
        p
    }

    pub fn unit(dim: usize, axis: usize, sign: i32) -> Self {
        let mut p = Self::origin(dim);
        p.coords[axis] = sign;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim()]
    }

    #[inline]
    pub fn coord(&self, i: usize) -> i32 {
        self.coords[i]
    }

    /// `‖x‖∞`
    #[inline]
    pub fn linf(&self) -> i64 {
        self.coords().iter().map(|c| (*c as i64).abs()).max().unwrap_or(0)
    }

    /// ℓ∞ distance to `other` (same dimension assumed).
    #[inline]
    pub fn linf_dist(&self, other: &LatticePoint) -> i64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (*a as i64 - *b as i64).abs())
            .max()
            .unwrap_or(0)
    }

    /// Site reached by the nearest-neighbour step with index `step`, using the
    /// fixed order `(−e₁, +e₁, …, −e_d, +e_d)`.
    #[inline]
    pub fn step(&self, step: usize) -> LatticePoint {
        let mut p = *self;
        let axis = step / 2;
        p.coords[axis] += if step.is_multiple_of(2) { -1 } else { 1 };
        p
    }

    pub fn offset(&self, delta: &LatticePoint) -> LatticePoint {
        let mut p = *self;
        for i in 0..self.dim() {
            p.coords[i] += delta.coords[i];
        }
        p
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.coords().iter().map(|c| *c as f64).collect()
    }

    /// `⟨x, u⟩`
    #[inline]
    pub fn dot(&self, u: &Direction) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            s += self.coords[i] as f64 * u.comps[i];
        }
        s
    }
}

impl Ord for LatticePoint {
    fn cmp(&self, other: &Self) -> Ordering {
        self.coords().cmp(other.coords()).then(self.dim.cmp(&other.dim))
    }
}

impl PartialOrd for LatticePoint {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl TryFrom<Vec<i32>> for LatticePoint {
    type Error = Error;

    fn try_from(v: Vec<i32>) -> Result<Self> {
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!("lattice point of dimension {}", v.len())));
        }
        Ok(LatticePoint::new(&v))
    }
}

impl From<LatticePoint> for Vec<i32> {
    fn from(p: LatticePoint) -> Vec<i32> {
        p.coords().to_vec()
    }
}

/// Strict lexicographic order on sites of equal dimension.
pub fn lex_less(x: &LatticePoint, y: &LatticePoint) -> Result<bool> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch { expected: x.dim(), found: y.dim() });
    }
    Ok(x.coords() < y.coords())
}

/// All sites with `‖x‖∞ = k`, in lexicographic order.
pub fn shell_sites(k: u32, d: usize) -> Vec<LatticePoint> {
    let k = k as i32;
    let mut out = Vec::new();
    let mut cur = LatticePoint::origin(d);
    fn rec(i: usize, d: usize, k: i32, on_shell: bool, cur: &mut LatticePoint, out: &mut Vec<LatticePoint>) {
        if i == d {
            if on_shell {
                out.push(*cur);
            }
            return;
        }
        // Once no earlier coordinate hit ±k, the remaining ones must be able to.
        for c in -k..=k {
            let hit = on_shell || c.abs() == k;
            if !hit && i + 1 == d {
                continue;
            }
            cur.coords[i] = c;
            rec(i + 1, d, k, hit, cur, out);
        }
        cur.coords[i] = 0;
    }
    rec(0, d, k, false, &mut cur, &mut out);
    out
}

/// Every site of `𝒞(k)` in lexicographic order.
pub fn cube_sites(k: u32, d: usize) -> impl Iterator<Item = LatticePoint> {
    let k = k as i32;
    let side = (2 * k + 1) as u64;
    let total = side.pow(d as u32);
    (0..total).map(move |mut n| {
        let mut p = LatticePoint::origin(d);
        for i in (0..d).rev() {
            p.coords[i] = (n % side) as i32 - k;
            n /= side;
        }
        p
    })
}

/// A unit vector in `ℝ^d`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Direction {
    comps: [f64; MAX_DIM],
    dim: u8,
}

impl Direction {
    /// Normalises `v`; fails on zero or non-finite input.
    pub fn new(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(Error::InvalidArgument(format!("direction of dimension {}", v.len())));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument("direction must be finite and nonzero".into()));
        }
        let mut comps = [0.0; MAX_DIM];
        for (c, x) in comps.iter_mut().zip(v) {
            *c = x / norm;
        }
        Ok(Direction { comps, dim: v.len() as u8 })
    }

    pub fn axis(dim: usize, axis: usize, positive: bool) -> Self {
        let mut comps = [0.0; MAX_DIM];
        comps[axis] = if positive { 1.0 } else { -1.0 };
        Direction { comps, dim: dim as u8 }
    }

    /// Unit vector at angle `theta` in the plane.
    pub fn from_angle(theta: f64) -> Self {
        let mut comps = [0.0; MAX_DIM];
        comps[0] = theta.cos();
        comps[1] = theta.sin();
        Direction { comps, dim: 2 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn components(&self) -> &[f64] {
        &self.comps[..self.dim()]
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.components().iter().zip(v).map(|(a, b)| a * b).sum()
    }

    pub fn l1(&self) -> f64 {
        self.components().iter().map(|c| c.abs()).sum()
    }

    pub fn neg(&self) -> Direction {
        let mut d = *self;
        for c in d.comps.iter_mut() {
            *c = -*c;
        }
        d
    }

    /// Image under a signed coordinate permutation: component `i` of the
    /// result is `signs[i] * self[perm[i]]`.
    pub fn transform(&self, perm: &[usize], signs: &[f64]) -> Direction {
        let mut d = *self;
        for i in 0..self.dim() {
            d.comps[i] = signs[i] * self.comps[perm[i]];
        }
        d
    }
}

impl fmt::Debug for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.components()).finish()
    }
}

impl TryFrom<Vec<f64>> for Direction {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Direction::new(&v)
    }
}

impl From<Direction> for Vec<f64> {
    fn from(d: Direction) -> Vec<f64> {
        d.components().to_vec()
    }
}

/// Parses comma-separated decimals, e.g. `"1,0"`, and normalises.
impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad direction component {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Direction::new(&v)
    }
}

/// `v − ⟨v,u⟩u`
pub fn perp_component(v: &[f64], u: &Direction) -> Vec<f64> {
    let p = u.dot(v);
    v.iter().zip(u.components()).map(|(x, c)| x - p * c).collect()
}

/// Closed half-space `{x : ⟨x,u⟩ ≥ c}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub u: Direction,
    pub c: f64,
}

impl HalfSpace {
    pub fn new(u: Direction, c: f64) -> Self {
        HalfSpace { u, c }
    }

    #[inline]
    pub fn contains(&self, x: &LatticePoint) -> bool {
        x.dot(&self.u) >= self.c
    }
}

/// `𝒞(r) = [−r, r]^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    pub r: f64,
}

impl Cube {
    pub fn contains(&self, x: &LatticePoint) -> bool {
        (x.linf() as f64) <= self.r
    }
}

/// `{x : ⟨x,u⟩ ≥ α, ‖x⊥ − γ‖∞ ≤ β}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cylinder {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub u: Direction,
}

impl Cylinder {
    pub fn new(alpha: f64, beta: f64, gamma: Vec<f64>, u: Direction) -> Result<Self> {
        if gamma.len() != u.dim() {
            return Err(Error::DimensionMismatch { expected: u.dim(), found: gamma.len() });
        }
        if beta.is_nan() || beta < 0.0 {
            return Err(Error::InvalidArgument("cylinder radius must be nonnegative".into()));
        }
        if u.dot(&gamma).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument("cylinder offset must be orthogonal to its axis".into()));
        }
        Ok(Cylinder { alpha, beta, gamma, u })
    }
}

pub fn in_cylinder(x: &LatticePoint, g: &Cylinder) -> bool {
    if x.dot(&g.u) < g.alpha {
        return false;
    }
    if g.beta.is_infinite() {
        return true;
    }
    let perp = perp_component(&x.to_real(), &g.u);
    perp.iter().zip(&g.gamma).all(|(p, c)| (p - c).abs() <= g.beta)
}
