//! Read-only functionals of a run: B-sets, directional extents, argmax
//! sites, count fields and cylinder hits.
//!
//! Most functions take the set of B-occupied sites at the query time
//! (see [`TypeTimeline::b_sites`]) so they apply equally to simulated
//! layers and hand-built configurations.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{in_cylinder, perp_component, Cylinder, Direction, LatticePoint};
use crate::sim::{TypeTimeline, WorldState};

/// Relative slack on `⟨x,u⟩` before two sites count as tied.
pub const EXTENT_TIE_TOL: f64 = 1e-9;

/// `κ(s) = √((s+1)·ln(s+1))`
pub fn kappa(s: f64) -> f64 {
    ((s + 1.0) * (s + 1.0).ln()).sqrt()
}

/// Maximal `⟨x,u⟩` over B-occupied sites.
pub fn directional_extent(b_sites: &[LatticePoint], u: &Direction) -> Result<f64> {
    b_sites
        .iter()
        .map(|x| x.dot(u))
        .reduce(f64::max)
        .ok_or(Error::NoBParticles(f64::NAN))
}

/// Extents for several directions in one pass.
pub fn directional_extents(b_sites: &[LatticePoint], dirs: &[Direction]) -> Result<Vec<f64>> {
    if b_sites.is_empty() {
        return Err(Error::NoBParticles(f64::NAN));
    }
    let mut out = vec![f64::NEG_INFINITY; dirs.len()];
    for x in b_sites {
        for (m, u) in out.iter_mut().zip(dirs) {
            *m = m.max(x.dot(u));
        }
    }
    Ok(out)
}

/// `ℓ*` with its decomposition `ℓ* = h*·u + m*`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArgmaxRecord {
    pub site: LatticePoint,
    pub h_star: f64,
    pub m_star: Vec<f64>,
}

/// Lexicographically first B-occupied site attaining the maximal `⟨x,u⟩`.
pub fn argmax_site(b_sites: &[LatticePoint], u: &Direction) -> Result<ArgmaxRecord> {
    let h = directional_extent(b_sites, u)?;
    let tol = EXTENT_TIE_TOL * h.abs().max(1.0);
    let site = b_sites
        .iter()
        .filter(|x| x.dot(u) >= h - tol)
        .min()
        .copied()
        .expect("maximum is attained");
    let h_star = site.dot(u);
    Ok(ArgmaxRecord { site, h_star, m_star: perp_component(&site.to_real(), u) })
}

/// `B̃(t)` with membership for the fattened set `B(t) = B̃(t) + [−½,½]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct BSets {
    pub dim: usize,
    pub visited: BTreeSet<LatticePoint>,
}

impl BSets {
    pub fn new(dim: usize, visited: impl IntoIterator<Item = LatticePoint>) -> Self {
        BSets { dim, visited: visited.into_iter().collect() }
    }

    pub fn contains_site(&self, x: &LatticePoint) -> bool {
        self.visited.contains(x)
    }

    /// Whether the real point `p` lies within ℓ∞ distance ½ of `B̃(t)`.
    pub fn contains_point(&self, p: &[f64]) -> bool {
        // Each coordinate has at most two lattice values within ½.
        let cands: Vec<Vec<i32>> = p
            .iter()
            .map(|&c| {
                let lo = (c - 0.5).ceil() as i32;
                let hi = (c + 0.5).floor() as i32;
                (lo..=hi).collect()
            })
            .collect();
        if cands.iter().any(|c| c.is_empty()) {
            return false;
        }
        let mut idx = vec![0usize; p.len()];
        loop {
            let coords: Vec<i32> = idx.iter().zip(&cands).map(|(i, c)| c[*i]).collect();
            if self.visited.contains(&LatticePoint::new(&coords)) {
                return true;
            }
            let mut k = 0;
            loop {
                if k == idx.len() {
                    return false;
                }
                idx[k] += 1;
                if idx[k] < cands[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Largest ℓ∞ norm in `B̃(t)` (0 when empty).
    pub fn outer_radius(&self) -> i64 {
        self.visited.iter().map(|x| x.linf()).max().unwrap_or(0)
    }

    /// Largest `k` with `𝒞(k) ∩ Z^d ⊂ B̃(t)`; 0 if the origin is unvisited.
    pub fn inner_radius(&self) -> i64 {
        inscribed_radius(self.dim, |x| self.visited.contains(x), self.outer_radius())
    }
}

fn inscribed_radius(dim: usize, mut visited: impl FnMut(&LatticePoint) -> bool, max: i64) -> i64 {
    if !visited(&LatticePoint::origin(dim)) {
        return 0;
    }
    let mut k = 0;
    while k < max {
        if !crate::lattice::shell_sites((k + 1) as u32, dim).iter().all(&mut visited) {
            break;
        }
        k += 1;
    }
    k
}

/// `B̃(t)` of a layer.
pub fn b_sets(layer: &TypeTimeline, dim: usize, t: f64) -> BSets {
    BSets::new(dim, layer.b_tilde(t))
}

/// Outer and inscribed ℓ∞ radii of `B̃(t)` for each `t` in `times`, from a
/// layer's first-visit map.
pub fn radius_series(layer: &TypeTimeline, dim: usize, times: &[f64]) -> Vec<(f64, i64, i64)> {
    let visited = layer.visited_b();
    let max_r = visited.keys().map(|x| x.linf()).max().unwrap_or(0);
    // Latest first-visit time within each shell; ∞ if a shell site is unvisited.
    let mut shell_time = Vec::with_capacity(max_r as usize + 1);
    for k in 0..=max_r {
        let worst = crate::lattice::shell_sites(k as u32, dim)
            .iter()
            .map(|x| visited.get(x).copied().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        shell_time.push(worst);
    }
    // Running max: cube 𝒞(k) is covered at time max_{j≤k} shell_time[j].
    let mut covered = shell_time.clone();
    for k in 1..covered.len() {
        covered[k] = covered[k].max(covered[k - 1]);
    }
    // Earliest time any site of norm k is visited.
    let mut first_at = vec![f64::INFINITY; max_r as usize + 1];
    for (x, &s) in visited {
        let k = x.linf() as usize;
        first_at[k] = first_at[k].min(s);
    }
    times
        .iter()
        .map(|&t| {
            let outer = first_at.iter().rposition(|&s| s <= t).map_or(0, |k| k as i64);
            let inner = covered.iter().rposition(|&s| s <= t).map_or(0, |k| k as i64);
            (t, outer, inner)
        })
        .collect()
}

/// `N_A(·,t)` and `N_B(·,t)` for the particles of one layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountFields {
    pub n_a: BTreeMap<LatticePoint, u32>,
    pub n_b: BTreeMap<LatticePoint, u32>,
}

impl CountFields {
    /// Sites holding both types, which the coincidence rule forbids.
    pub fn mixed_sites(&self) -> Vec<LatticePoint> {
        self.n_a.keys().filter(|x| self.n_b.contains_key(x)).copied().collect()
    }

    pub fn total(&self) -> u64 {
        self.n_a.values().chain(self.n_b.values()).map(|&n| n as u64).sum()
    }
}

pub fn count_fields(layer: &TypeTimeline, world: &WorldState) -> CountFields {
    let mut f = CountFields::default();
    for (o, x) in world.positions().iter().enumerate() {
        let o = o as u32;
        if !layer.is_eligible(o) {
            continue;
        }
        let map = if layer.is_b(o, world.now) { &mut f.n_b } else { &mut f.n_a };
        *map.entry(*x).or_default() += 1;
    }
    f
}

/// Whether some B-occupied site lies in `g`.
pub fn cylinder_hit(b_sites: &[LatticePoint], g: &Cylinder) -> bool {
    b_sites.iter().any(|x| in_cylinder(x, g))
}

/// Extents of one layer at one time, per direction index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontRecord {
    pub t: f64,
    /// `None` where the layer had no B-particle.
    pub extents: Vec<Option<f64>>,
}

impl FrontRecord {
    pub fn capture(layer: &TypeTimeline, world: &WorldState, dirs: &[Direction]) -> Self {
        let sites = layer.b_sites(world);
        let extents = match directional_extents(&sites, dirs) {
            Ok(v) => v.into_iter().map(Some).collect(),
            Err(_) => vec![None; dirs.len()],
        };
        FrontRecord { t: world.now, extents }
    }
}
