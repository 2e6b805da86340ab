//! Counter-based randomness keyed by `(seed, particle/site, counter)`.
//!
//! Every draw is a pure function of its key and counter, so two processes
//! built on the same [`MasterSeed`] give a shared particle the identical
//! trajectory without storing it, and any draw can be regenerated directly.
//!
//! The mixing function is the SplitMix64 output function; the stream for a
//! key `k` is the SplitMix64 sequence started from state `k`. The algorithm is
//! pinned by [`STREAM_ALGORITHM`] / [`STREAM_VERSION`] and must not change
//! without bumping the version.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lattice::LatticePoint;

pub const STREAM_ALGORITHM: &str = "splitmix64-keyed";
pub const STREAM_VERSION: u32 = 1;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n`-th output of the SplitMix64 sequence seeded with `key`.
#[inline]
fn word(key: u64, n: u64) -> u64 {
    mix64(key.wrapping_add(n.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// Uniform on the open interval `(0, 1)` with 53-bit resolution.
#[inline]
pub fn open_unit(w: u64) -> f64 {
    ((w >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Root seed of a run. Serialized as a decimal string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MasterSeed(pub u64);

impl MasterSeed {
    /// Derives an independent seed from a byte label.
    pub fn substream(self, label: &[u8]) -> MasterSeed {
        let mut h = mix64(self.0 ^ 0x5851_f42d_4c95_7f2d);
        for chunk in label.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            h = mix64(h.wrapping_add(GAMMA) ^ u64::from_le_bytes(buf));
        }
        MasterSeed(mix64(h ^ (label.len() as u64).wrapping_mul(GAMMA)))
    }

    /// Seed of replica `i` in a bank rooted at `self`.
    pub fn replica(self, i: u64) -> MasterSeed {
        let mut label = b"replica/".to_vec();
        label.extend_from_slice(&i.to_le_bytes());
        self.substream(&label)
    }
}

impl fmt::Display for MasterSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for MasterSeed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        s.trim()
            .parse::<u64>()
            .map(MasterSeed)
            .map_err(|e| Error::InvalidArgument(format!("seed {s:?}: {e}")))
    }
}

impl Serialize for MasterSeed {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for MasterSeed {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(u64),
        }
        match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Number(n) => Ok(MasterSeed(n)),
        }
    }
}

/// Stable particle identity: birth site and rank among the particles born there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticleId {
    pub origin: LatticePoint,
    pub index: u32,
}

impl ParticleId {
    pub fn new(origin: LatticePoint, index: u32) -> Self {
        ParticleId { origin, index }
    }
}

impl fmt::Display for ParticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.index)
    }
}

fn site_hash(base: u64, x: &LatticePoint) -> u64 {
    let mut h = mix64(base ^ (x.dim() as u64).wrapping_mul(GAMMA));
    for &c in x.coords() {
        h = mix64(h.wrapping_add(GAMMA) ^ (c as u32 as u64));
    }
    h
}

/// Keys derived once per run from the master seed.
#[derive(Clone, Copy, Debug)]
pub struct Streams {
    init: u64,
    paths: u64,
}

impl Streams {
    pub fn new(seed: MasterSeed) -> Self {
        Streams { init: seed.substream(b"init").0, paths: seed.substream(b"paths").0 }
    }

    /// Initial particle count at `x`, Poisson(`mu`) by inverse CDF.
    pub fn initial_count(&self, x: &LatticePoint, mu: f64) -> u32 {
        poisson_inverse(open_unit(word(site_hash(self.init, x), 0)), mu)
    }

    pub fn path(&self, owner: ParticleId) -> PathStream {
        PathStream { key: self.path_key(&owner), cursor: 0 }
    }

    pub fn path_key(&self, owner: &ParticleId) -> u64 {
        mix64(site_hash(self.paths, &owner.origin) ^ mix64((owner.index as u64).wrapping_add(GAMMA)))
    }
}

/// Convenience form of [`Streams::initial_count`].
pub fn initial_count(seed: MasterSeed, x: &LatticePoint, mu: f64) -> u32 {
    Streams::new(seed).initial_count(x, mu)
}

/// Smallest `k` with `F(k) ≥ u` for the Poisson(`mu`) CDF.
pub fn poisson_inverse(u: f64, mu: f64) -> u32 {
    let mut p = (-mu).exp();
    let mut cdf = p;
    let mut k = 0u32;
    while u > cdf {
        k += 1;
        p *= mu / k as f64;
        cdf += p;
        // Tail mass is below double resolution by now.
        if p == 0.0 && k as f64 > mu {
            break;
        }
    }
    k
}

/// One jump of a continuous-time simple random walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    pub wait: f64,
    /// Index into `(−e₁, +e₁, …, −e_d, +e_d)`.
    pub step: usize,
}

/// The `cursor`-th jump of the stream keyed by `key`; random access.
#[inline]
pub fn jump_at(key: u64, cursor: u64, rate: f64, dim: usize) -> Jump {
    let w_time = word(key, 2 * cursor);
    let w_dir = word(key, 2 * cursor + 1);
    Jump { wait: -open_unit(w_time).ln() / rate, step: (w_dir % (2 * dim as u64)) as usize }
}

/// Sequential reader over one particle's jumps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathStream {
    pub key: u64,
    pub cursor: u64,
}

impl PathStream {
    pub fn next_jump(&mut self, rate: f64, dim: usize) -> Jump {
        let j = jump_at(self.key, self.cursor, rate, dim);
        self.cursor += 1;
        j
    }
}
