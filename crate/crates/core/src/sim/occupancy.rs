//! Site → occupants map as intrusive linked lists: a dense head array over a
//! cube around the origin and a hash map for sites outside it.

use rustc_hash::FxHashMap;

use crate::lattice::LatticePoint;

pub(crate) const NIL: u32 = u32::MAX;

/// Upper bound on dense cells.
const MAX_DENSE: u64 = 1 << 24;

#[derive(Clone, Debug)]
pub(crate) struct Occupancy {
    dim: usize,
    radius: i32,
    side: i64,
    dense: Vec<u32>,
    sparse: FxHashMap<LatticePoint, u32>,
    /// `links[o] = [next, prev]`.
    links: Vec<[u32; 2]>,
}

impl Occupancy {
    pub(crate) fn new(dim: usize, wanted_radius: u32, particles: usize) -> Self {
        let mut radius = wanted_radius as i64;
        while radius > 0 && ((2 * radius + 1) as u64).pow(dim as u32) > MAX_DENSE {
            radius = (radius * 3) / 4;
        }
        let side = 2 * radius + 1;
        Occupancy {
            dim,
            radius: radius as i32,
            side,
            dense: vec![NIL; (side as u64).pow(dim as u32) as usize],
            sparse: FxHashMap::default(),
            links: vec![[NIL; 2]; particles],
        }
    }

    #[inline]
    fn slot(&self, x: &LatticePoint) -> Option<usize> {
        let mut idx: i64 = 0;
        for &c in x.coords() {
            if c.abs() > self.radius {
                return None;
            }
            idx = idx * self.side + (c + self.radius) as i64;
        }
        Some(idx as usize)
    }

    #[inline]
    pub(crate) fn head(&self, x: &LatticePoint) -> u32 {
        match self.slot(x) {
            Some(i) => self.dense[i],
            None => self.sparse.get(x).copied().unwrap_or(NIL),
        }
    }

    #[inline]
    fn set_head(&mut self, x: &LatticePoint, o: u32) {
        match self.slot(x) {
            Some(i) => self.dense[i] = o,
            None => {
                if o == NIL {
                    self.sparse.remove(x);
                } else {
                    self.sparse.insert(*x, o);
                }
            }
        }
    }

    #[inline]
    pub(crate) fn insert(&mut self, o: u32, x: &LatticePoint) {
        let h = self.head(x);
        self.links[o as usize] = [h, NIL];
        if h != NIL {
            self.links[h as usize][1] = o;
        }
        self.set_head(x, o);
    }

    #[inline]
    pub(crate) fn remove(&mut self, o: u32, x: &LatticePoint) {
        let [n, p] = self.links[o as usize];
        if p == NIL {
            self.set_head(x, n);
        } else {
            self.links[p as usize][0] = n;
        }
        if n != NIL {
            self.links[n as usize][1] = p;
        }
    }

    #[inline]
    pub(crate) fn iter(&self, x: &LatticePoint) -> Occupants<'_> {
        Occupants { links: &self.links, cur: self.head(x) }
    }

    /// Every occupied site (unordered).
    pub(crate) fn sites(&self) -> Vec<LatticePoint> {
        let mut out: Vec<LatticePoint> = self.sparse.keys().copied().collect();
        let side = self.side;
        for (i, &h) in self.dense.iter().enumerate() {
            if h == NIL {
                continue;
            }
            let mut rem = i as i64;
            let mut coords = vec![0i32; self.dim];
            for c in coords.iter_mut().rev() {
                *c = (rem % side) as i32 - self.radius;
                rem /= side;
            }
            out.push(LatticePoint::new(&coords));
        }
        out
    }
}

/// Occupants of one site, most recent arrival first.
#[derive(Clone)]
pub struct Occupants<'a> {
    links: &'a [[u32; 2]],
    cur: u32,
}

impl Iterator for Occupants<'_> {
    type Item = u32;

    #[inline]
    fn next(&mut self) -> Option<u32> {
        if self.cur == NIL {
            return None;
        }
        let o = self.cur;
        self.cur = self.links[o as usize][0];
        Some(o)
    }
}
