//! Convex polytopes given by support constraints `{z : ⟨z,u_i⟩ ≤ λ_i}`,
//! with explicit vertices in the plane, and the inclusion tests comparing a
//! rescaled polytope with a simulated `B(t)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Direction, LatticePoint};
use crate::observables::BSets;

/// Vertex comparison tolerance.
pub const VERTEX_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub dim: usize,
    pub directions: Vec<Direction>,
    pub lambdas: Vec<f64>,
    /// Counterclockwise vertex list for `d = 2` (not repeated at the end);
    /// the two endpoints for `d = 1`; `None` for `d ≥ 3`.
    pub vertices: Option<Vec<Vec<f64>>>,
}

impl ShapeEstimate {
    /// Membership of `z` in `scale · shape`.
    pub fn contains_scaled(&self, z: &[f64], scale: f64) -> bool {
        self.directions.iter().zip(&self.lambdas).all(|(u, l)| {
            let bound = scale * l;
            u.dot(z) <= bound + VERTEX_TOL * bound.abs().max(1.0)
        })
    }

    /// `max_{z ∈ shape} ±z_i` for each axis: `(lower, upper)` with `lower ≤ 0 ≤ upper`.
    pub fn axis_bounds(&self) -> Vec<(f64, f64)> {
        if let Some(vs) = &self.vertices {
            return (0..self.dim)
                .map(|i| {
                    let lo = vs.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
                    let hi = vs.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi)
                })
                .collect();
        }
        (0..self.dim)
            .map(|i| {
                let lam = |positive: bool| {
                    let e = Direction::axis(self.dim, i, positive);
                    self.directions
                        .iter()
                        .zip(&self.lambdas)
                        .filter(|(u, _)| close(u.components(), e.components()))
                        .map(|(_, l)| *l)
                        .fold(f64::INFINITY, f64::min)
                };
                (-lam(false), lam(true))
            })
            .collect()
    }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
}

/// Largest angular gap between consecutive planar directions.
fn max_angular_gap(dirs: &[Direction]) -> f64 {
    let mut angles: Vec<f64> = dirs
        .iter()
        .map(|u| {
            let a = u.components()[1].atan2(u.components()[0]);
            if a < 0.0 {
                a + 2.0 * PI
            } else {
                a
            }
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let mut gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    gap
}

/// Clips a counterclockwise convex polygon by `⟨z,u⟩ ≤ lam`.
fn clip(poly: &[[f64; 2]], u: &Direction, lam: f64) -> Vec<[f64; 2]> {
    let (ux, uy) = (u.components()[0], u.components()[1]);
    let f = |p: &[f64; 2]| p[0] * ux + p[1] * uy - lam;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (fa, fb) = (f(&a), f(&b));
        if fa <= 0.0 {
            out.push(a);
        }
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            let s = fa / (fa - fb);
            out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    }
    out
}

fn tidy(poly: Vec<[f64; 2]>, scale: f64) -> Vec<[f64; 2]> {
    let tol = VERTEX_TOL * scale.max(1.0);
    let mut v: Vec<[f64; 2]> = Vec::with_capacity(poly.len());
    for p in poly {
        if v.last().is_none_or(|q| (p[0] - q[0]).abs() > tol || (p[1] - q[1]).abs() > tol) {
            v.push(p);
        }
    }
    while v.len() > 1 {
        let (a, b) = (v[0], v[v.len() - 1]);
        if (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol {
            v.pop();
        } else {
            break;
        }
    }
    // Drop vertices lying on the segment between their neighbours.
    let mut changed = true;
    while changed && v.len() > 3 {
        changed = false;
        for i in 0..v.len() {
            let a = v[(i + v.len() - 1) % v.len()];
            let b = v[i];
            let c = v[(i + 1) % v.len()];
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if cross.abs() <= tol * scale.max(1.0) {
                v.remove(i);
                changed = true;
                break;
            }
        }
    }
    // Start at the vertex with the smallest polar angle in [0, 2π).
    let angle = |p: &[f64; 2]| {
        let a = p[1].atan2(p[0]);
        if a < -1e-12 {
            a + 2.0 * PI
        } else {
            a.max(0.0)
        }
    };
    if let Some(start) = (0..v.len()).min_by(|&i, &j| angle(&v[i]).total_cmp(&angle(&v[j]))) {
        v.rotate_left(start);
    }
    v
}

/// Intersection of the half-spaces `{z : ⟨z,u_i⟩ ≤ λ_i}`.
pub fn build_shape(directions: &[Direction], lambdas: &[f64]) -> Result<ShapeEstimate> {
    if directions.is_empty() || directions.len() != lambdas.len() {
        return Err(Error::InvalidArgument(format!(
            "{} directions but {} speeds",
            directions.len(),
            lambdas.len()
        )));
    }
    let dim = directions[0].dim();
    if let Some(u) = directions.iter().find(|u| u.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: u.dim() });
    }
    if let Some((index, &value)) = lambdas.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::EmptyInterior { index, value });
    }
    let vertices = match dim {
        1 => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::INFINITY;
            for (u, l) in directions.iter().zip(lambdas) {
                if u.components()[0] > 0.0 {
                    hi = hi.min(*l);
                } else {
                    lo = lo.min(*l);
                }
            }
            if lo.is_infinite() || hi.is_infinite() {
                return Err(Error::Unbounded);
            }
            Some(vec![vec![-lo], vec![hi]])
        }
        2 => {
            let gap = max_angular_gap(directions);
            if gap >= PI - 1e-12 {
                return Err(Error::Unbounded);
            }
            let max_l = lambdas.iter().copied().fold(0.0, f64::max);
            let r = 2.0 * max_l / (gap / 2.0).cos();
            let mut poly = vec![[r, r], [-r, r], [-r, -r], [r, -r]];
            for (u, l) in directions.iter().zip(lambdas) {
                poly = clip(&poly, u, *l);
            }
            let poly = tidy(poly, max_l);
            Some(poly.into_iter().map(|p| p.to_vec()).collect())
        }
        _ => {
            for i in 0..dim {
                for positive in [true, false] {
                    let e = Direction::axis(dim, i, positive);
                    if !directions.iter().any(|u| close(u.components(), e.components())) {
                        return Err(Error::Unbounded);
                    }
                }
            }
            None
        }
    };
    Ok(ShapeEstimate { dim, directions: directions.to_vec(), lambdas: lambdas.to_vec(), vertices })
}

/// Exposed points of a polygon or interval: its strict vertices.
pub fn exposed_points(shape: &ShapeEstimate) -> Result<Vec<Vec<f64>>> {
    if shape.dim > 2 {
        return Err(Error::DimensionUnsupported(shape.dim));
    }
    Ok(shape.vertices.clone().unwrap_or_default())
}

/// All signed coordinate permutations of `Z^d` as `(perm, signs)`.
pub fn symmetry_group(dim: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let mut out = Vec::new();
    for p in perms(dim) {
        for mask in 0..(1u32 << dim) {
            let signs = (0..dim).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            out.push((p.clone(), signs));
        }
    }
    out
}

/// Outcome of comparing `B(t)/t` with `(1 ± ε)·shape`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Sandwich {
    pub inner: bool,
    pub outer: bool,
}

/// Inner: every lattice point of `t(1−ε)·shape` lies in `B̃(t)`.
/// Outer: every cube `x + [−½,½]^d`, `x ∈ B̃(t)`, lies in `t(1+ε)·shape`.
pub fn shape_sandwich_check(b: &BSets, t: f64, shape: &ShapeEstimate, eps: f64) -> Sandwich {
    let inner_scale = t * (1.0 - eps);
    let bounds = shape.axis_bounds();
    let ranges: Vec<(i32, i32)> = bounds
        .iter()
        .map(|(lo, hi)| ((inner_scale * lo).floor() as i32 - 1, (inner_scale * hi).ceil() as i32 + 1))
        .collect();
    let mut inner = true;
    let mut coords: Vec<i32> = ranges.iter().map(|r| r.0).collect();
    'scan: loop {
        let zr: Vec<f64> = coords.iter().map(|&c| c as f64).collect();
        if shape.contains_scaled(&zr, inner_scale) && !b.contains_site(&LatticePoint::new(&coords)) {
            inner = false;
            break 'scan;
        }
        let mut k = 0;
        loop {
            if k == coords.len() {
                break 'scan;
            }
            coords[k] += 1;
            if coords[k] <= ranges[k].1 {
                break;
            }
            coords[k] = ranges[k].0;
            k += 1;
        }
    }
    let outer_scale = t * (1.0 + eps);
    let outer = b.visited.iter().all(|x| {
        shape.directions.iter().zip(&shape.lambdas).all(|(u, l)| {
            let bound = outer_scale * l;
            x.dot(u) + 0.5 * u.l1() <= bound + VERTEX_TOL * bound.abs().max(1.0)
        })
    });
    Sandwich { inner, outer }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::cube_sites;

    fn axes(d: usize) -> Vec<Direction> {
        (0..d).flat_map(|i| [Direction::axis(d, i, true), Direction::axis(d, i, false)]).collect()
    }

    fn same_vertices(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
        a.len() == b.len()
            && a.iter().all(|p| b.iter().any(|q| p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-9)))
    }

    #[test]
    fn square() {
        let s = build_shape(&axes(2), &[2.0; 4]).unwrap();
        let v = s.vertices.unwrap();
        let expect = [[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]];
        assert_eq!(v.len(), 4);
        for (p, q) in v.iter().zip(expect) {
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn diamond() {
        let mut dirs = axes(2);
        let mut lams = vec![2.0; 4];
        for (a, b) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
            dirs.push(Direction::new(&[a, b]).unwrap());
            lams.push(2f64.sqrt());
        }
        let s = build_shape(&dirs, &lams).unwrap();
        let v = s.vertices.clone().unwrap();
        let expect = vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![-2.0, 0.0], vec![0.0, -2.0]];
        assert!(same_vertices(&v, &expect), "{v:?}");
        assert!((v[0][0] - 2.0).abs() < 1e-9 && v[0][1].abs() < 1e-9);
        assert!(same_vertices(&exposed_points(&s).unwrap(), &expect));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(build_shape(&axes(2), &[2.0, 0.0, 2.0, 2.0]), Err(Error::EmptyInterior { index: 1, .. })));
        let e1 = axes(2)[..2].to_vec();
        assert_eq!(build_shape(&e1, &[1.0, 1.0]), Err(Error::Unbounded));
        assert_eq!(build_shape(&axes(3)[..5], &[1.0; 5]), Err(Error::Unbounded));
        let s3 = build_shape(&axes(3), &[1.0; 6]).unwrap();
        assert_eq!(exposed_points(&s3), Err(Error::DimensionUnsupported(3)));
    }

    #[test]
    fn interval() {
        let s = build_shape(&axes(1), &[1.5, 0.5]).unwrap();
        assert_eq!(s.vertices.unwrap(), vec![vec![-0.5], vec![1.5]]);
    }

    #[test]
    fn permutation_invariance() {
        let n = 12;
        let dirs: Vec<Direction> = (0..n).map(|k| Direction::from_angle(2.0 * PI * k as f64 / n as f64)).collect();
        let lams: Vec<f64> = (0..n).map(|k| 1.0 + 0.3 * ((k * 7 % 5) as f64)).collect();
        let base = build_shape(&dirs, &lams).unwrap().vertices.unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        for shift in 1..n {
            idx.rotate_left(1);
            idx.swap(0, shift % n);
            let d: Vec<_> = idx.iter().map(|&i| dirs[i]).collect();
            let l: Vec<_> = idx.iter().map(|&i| lams[i]).collect();
            assert!(same_vertices(&base, &build_shape(&d, &l).unwrap().vertices.unwrap()));
        }
    }

    #[test]
    fn symmetrized_inputs_give_symmetric_polygon() {
        let seeds = [(Direction::new(&[1.0, 0.3]).unwrap(), 1.7), (Direction::new(&[1.0, 0.0]).unwrap(), 1.5)];
        let group = symmetry_group(2);
        assert_eq!(group.len(), 8);
        let mut dirs = Vec::new();
        let mut lams = Vec::new();
        for (u, l) in seeds {
            for (p, s) in &group {
                dirs.push(u.transform(p, s));
                lams.push(l);
            }
        }
        let v = build_shape(&dirs, &lams).unwrap().vertices.unwrap();
        for (p, s) in &group {
            let img: Vec<Vec<f64>> = v.iter().map(|x| (0..2).map(|i| s[i] * x[p[i]]).collect()).collect();
            assert!(same_vertices(&v, &img));
        }
    }

    #[test]
    fn sandwich_box_case() {
        let shape = build_shape(&axes(2), &[1.0; 4]).unwrap();
        let b = BSets::new(2, cube_sites(5, 2));
        assert_eq!(shape_sandwich_check(&b, 5.0, &shape, 0.1), Sandwich { inner: true, outer: true });
        let empty = BSets::new(2, []);
        assert_eq!(shape_sandwich_check(&empty, 5.0, &shape, 0.1), Sandwich { inner: false, outer: true });
        // ε = 0: t·shape = [−4,4]², exactly the visited set.
        let b4 = BSets::new(2, cube_sites(4, 2));
        assert!(shape_sandwich_check(&b4, 4.0, &shape, 0.0).inner);
        // One missing interior site breaks the inner inclusion.
        let holed = BSets::new(2, cube_sites(5, 2).filter(|x| x.coords() != [1, 1]));
        assert!(!shape_sandwich_check(&holed, 5.0, &shape, 0.1).inner);
        // A far site breaks the outer inclusion.
        let far = BSets::new(2, cube_sites(5, 2).chain([LatticePoint::new(&[7, 0])]));
        assert!(!shape_sandwich_check(&far, 5.0, &shape, 0.1).outer);
        // Sites fit in 5.25·shape, their unit cubes do not.
        assert!(!shape_sandwich_check(&b, 5.0, &shape, 0.05).outer);
    }
}
