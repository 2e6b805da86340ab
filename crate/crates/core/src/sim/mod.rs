//! Event-driven simulation of the A/B infection model with one common jump
//! rate.
//!
//! Every particle carries its own exponential clock; the queue is keyed by
//! each particle's next jump time with ties broken by [`ParticleId`] order.
//! Types are tracked per [`TypeTimeline`] ("type layer"): several layers ride
//! the same event stream, so processes that differ only in their initial types
//! or in which particles they contain are coupled through identical paths.

#[cfg(test)]
mod invariants;
mod occupancy;
mod queue;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

pub use occupancy::Occupants;
use occupancy::Occupancy;
use queue::EventQueue;

use crate::error::{Error, Result};
use crate::lattice::{cube_sites, shell_sites, Direction, HalfSpace, LatticePoint, MAX_DIM};
use crate::streams::{jump_at, MasterSeed, ParticleId, Streams};

/// Default `c_guard` in the box rule `L ≥ ⌈c_guard·T⌉ + 10⌈√T⌉`.
pub const DEFAULT_C_GUARD: f64 = 4.0;

/// Upper bound on `μ_A` accepted by validation (the inverse-CDF sampler
/// starts from `e^{−μ}`).
pub const MAX_MU: f64 = 500.0;

/// Which of the process variants a run realises.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessMode {
    /// Poisson field plus extra B-particles at the listed sites.
    Original { added_b: Vec<(LatticePoint, u32)> },
    /// Particles at the occupied site nearest the origin become B.
    FullSpace,
    /// Field restricted to `{⟨x,u⟩ ≥ −r}`; nearest occupied site to the origin becomes B.
    HalfSpaceStart { u: Direction, r: f64 },
    /// Field restricted to `restriction` (everything if `None`); at `time` the
    /// occupants of the nearest occupied site to `at` become B, all others A.
    StartedAt { restriction: Option<HalfSpace>, at: LatticePoint, time: f64 },
}

impl ProcessMode {
    pub fn original_at_origin(dim: usize) -> Self {
        ProcessMode::Original { added_b: vec![(LatticePoint::origin(dim), 1)] }
    }

    /// Half-space that initial particles are drawn from, if any.
    pub fn restriction(&self) -> Option<HalfSpace> {
        match self {
            ProcessMode::HalfSpaceStart { u, r } => Some(HalfSpace::new(*u, -r)),
            ProcessMode::StartedAt { restriction, .. } => *restriction,
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ProcessMode::Original { .. } => "original",
            ProcessMode::FullSpace => "full",
            ProcessMode::HalfSpaceStart { .. } => "half",
            ProcessMode::StartedAt { .. } => "started_at",
        }
    }
}

/// Source of the initial counts `N_A(x, 0−)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialField {
    #[default]
    Poisson,
    /// Hand-specified counts; every other site is empty.
    Explicit { counts: Vec<(LatticePoint, u32)> },
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub dim: usize,
    pub mu_a: f64,
    /// Common jump rate `D = D_A = D_B`.
    pub rate: f64,
    pub horizon: f64,
    /// Initial particles are placed in `𝒞(init_box)` only.
    pub init_box: u32,
    pub mode: ProcessMode,
    pub seed: MasterSeed,
    pub c_guard: f64,
    #[serde(default)]
    pub field: InitialField,
}

/// `⌈c_guard·T⌉ + 10⌈√T⌉`
pub fn guard_box(horizon: f64, c_guard: f64) -> u32 {
    ((c_guard * horizon).ceil() + guard_margin(horizon) as f64) as u32
}

/// Width of the band inside `𝒞(L)` that a B-particle may not enter.
pub fn guard_margin(horizon: f64) -> i64 {
    10 * horizon.max(0.0).sqrt().ceil() as i64
}

impl ProcessSpec {
    /// Spec with the box sized by the default guard rule.
    pub fn new(dim: usize, mu_a: f64, rate: f64, horizon: f64, mode: ProcessMode, seed: MasterSeed) -> Self {
        ProcessSpec {
            dim,
            mu_a,
            rate,
            horizon,
            init_box: guard_box(horizon, DEFAULT_C_GUARD),
            mode,
            seed,
            c_guard: DEFAULT_C_GUARD,
            field: InitialField::Poisson,
        }
    }

    /// Sets `c_guard` and resizes the box to the guard rule.
    pub fn with_guard(mut self, c_guard: f64) -> Self {
        self.c_guard = c_guard;
        self.init_box = guard_box(self.horizon, c_guard);
        self
    }

    pub fn with_seed(mut self, seed: MasterSeed) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: ProcessMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self.init_box = guard_box(horizon, self.c_guard);
        self
    }

    pub fn with_field(mut self, counts: Vec<(LatticePoint, u32)>) -> Self {
        self.field = InitialField::Explicit { counts };
        self
    }

    pub fn guard_radius(&self) -> i64 {
        self.init_box as i64 - guard_margin(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Error {
            Error::InvalidSpec { field, reason: reason.into() }
        }
        if !(1..=MAX_DIM).contains(&self.dim) {
            return Err(bad("dim", format!("must be in 1..={MAX_DIM}")));
        }
        if !(self.mu_a > 0.0 && self.mu_a <= MAX_MU) {
            return Err(bad("mu_a", format!("must be in (0, {MAX_MU}]")));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(bad("rate", "must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(bad("horizon", "must be positive"));
        }
        if !(self.c_guard >= 0.0 && self.c_guard.is_finite()) {
            return Err(bad("c_guard", "must be nonnegative"));
        }
        if self.init_box == 0 {
            return Err(bad("init_box", "must be positive"));
        }
        if matches!(self.field, InitialField::Poisson) {
            let need = guard_box(self.horizon, self.c_guard);
            if self.init_box < need {
                return Err(bad("init_box", format!("{} is below the guard value {need}", self.init_box)));
            }
        }
        let check_point = |p: &LatticePoint, field: &'static str| {
            if p.dim() != self.dim {
                Err(bad(field, format!("site {p} has dimension {}", p.dim())))
            } else {
                Ok(())
            }
        };
        let check_dir = |u: &Direction, field: &'static str| {
            if u.dim() != self.dim {
                Err(bad(field, format!("direction has dimension {}", u.dim())))
            } else {
                Ok(())
            }
        };
        match &self.mode {
            ProcessMode::Original { added_b } => {
                for (x, n) in added_b {
                    check_point(x, "mode.added_b")?;
                    if *n == 0 {
                        return Err(bad("mode.added_b", "counts must be at least 1"));
                    }
                }
            }
            ProcessMode::FullSpace => {}
            ProcessMode::HalfSpaceStart { u, r } => {
                check_dir(u, "mode.u")?;
                if !(*r >= 0.0) {
                    return Err(bad("mode.r", "half-space starts require r >= 0"));
                }
            }
            ProcessMode::StartedAt { restriction, at, time } => {
                check_point(at, "mode.at")?;
                if let Some(h) = restriction {
                    check_dir(&h.u, "mode.restriction")?;
                }
                if !(*time >= 0.0 && *time <= self.horizon) {
                    return Err(bad("mode.time", "must lie in [0, horizon]"));
                }
            }
        }
        if let InitialField::Explicit { counts } = &self.field {
            for (x, _) in counts {
                check_point(x, "field")?;
            }
        }
        Ok(())
    }
}

/// `D · T · μ_A · |𝒞(L) ∩ restriction|`, the mean number of jumps in a run.
pub fn expected_event_count(spec: &ProcessSpec) -> f64 {
    let sites = match spec.mode.restriction() {
        None => (2.0 * spec.init_box as f64 + 1.0).powi(spec.dim as i32),
        Some(h) => cube_sites(spec.init_box, spec.dim).filter(|x| h.contains(x)).count() as f64,
    };
    spec.rate * spec.horizon * spec.mu_a * sites
}

/// One particle jump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    /// Ordinal of the mover; particle ids are sorted, so ordinal order is id order.
    pub who: u32,
    pub from: LatticePoint,
    pub to: LatticePoint,
}

/// Positions of all particles and the inverse site map.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub now: f64,
    pub dim: usize,
    ids: Vec<ParticleId>,
    positions: Vec<LatticePoint>,
    occupancy: Occupancy,
    pub containment_ok: bool,
}

impl WorldState {
    fn new(dim: usize, ids: Vec<ParticleId>, dense_radius: u32) -> Self {
        let positions: Vec<LatticePoint> = ids.iter().map(|id| id.origin).collect();
        let mut occupancy = Occupancy::new(dim, dense_radius, ids.len());
        for (o, x) in positions.iter().enumerate() {
            occupancy.insert(o as u32, x);
        }
        WorldState { now: 0.0, dim, ids, positions, occupancy, containment_ok: true }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ParticleId] {
        &self.ids
    }

    pub fn id(&self, ordinal: u32) -> ParticleId {
        self.ids[ordinal as usize]
    }

    pub fn ordinal(&self, id: &ParticleId) -> Option<u32> {
        self.ids.binary_search(id).ok().map(|o| o as u32)
    }

    pub fn positions(&self) -> &[LatticePoint] {
        &self.positions
    }

    pub fn position(&self, ordinal: u32) -> LatticePoint {
        self.positions[ordinal as usize]
    }

    pub fn occupants(&self, x: &LatticePoint) -> Occupants<'_> {
        self.occupancy.iter(x)
    }

    /// Occupied sites with their occupants, sorted by site.
    pub fn occupied_sites(&self) -> Vec<(LatticePoint, Vec<u32>)> {
        let mut v: Vec<(LatticePoint, Vec<u32>)> = self
            .occupancy
            .sites()
            .into_iter()
            .map(|x| {
                let mut occ: Vec<u32> = self.occupants(&x).collect();
                occ.sort_unstable();
                (x, occ)
            })
            .collect();
        v.sort_unstable();
        v
    }

    #[inline]
    fn move_particle(&mut self, o: u32, to: LatticePoint) -> LatticePoint {
        let from = self.positions[o as usize];
        self.occupancy.remove(o, &from);
        self.occupancy.insert(o, &to);
        self.positions[o as usize] = to;
        from
    }

    /// Nearest site to `center` (ℓ∞ distance, then lexicographic) holding a
    /// particle accepted by `eligible`, within distance `radius`.
    pub fn nearest_occupied(
        &self,
        center: &LatticePoint,
        radius: i64,
        mut eligible: impl FnMut(u32) -> bool,
    ) -> Result<LatticePoint> {
        for k in 0..=radius.max(0) {
            for offset in shell_sites(k as u32, self.dim) {
                let x = center.offset(&offset);
                if self.occupants(&x).any(&mut eligible) {
                    return Ok(x);
                }
            }
        }
        Err(Error::NoOccupiedSite { center: *center, radius })
    }
}

/// How a layer chooses its initial B-particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BSeed {
    Particles { ids: Vec<ParticleId> },
    /// All eligible occupants of the nearest eligible occupied site to `center`
    /// at the layer's start time.
    NearestOccupied { center: LatticePoint },
}

/// Recipe for a type layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInit {
    /// Only particles born in this half-space exist for the layer.
    pub restriction: Option<HalfSpace>,
    /// Particles that do not exist for the layer.
    #[serde(default)]
    pub excluded: Vec<ParticleId>,
    pub start: f64,
    pub seed_b: BSeed,
}

impl LayerInit {
    pub fn particles(ids: Vec<ParticleId>) -> Self {
        LayerInit { restriction: None, excluded: Vec::new(), start: 0.0, seed_b: BSeed::Particles { ids } }
    }

    pub fn nearest(center: LatticePoint) -> Self {
        LayerInit { restriction: None, excluded: Vec::new(), start: 0.0, seed_b: BSeed::NearestOccupied { center } }
    }

    pub fn restricted(mut self, h: HalfSpace) -> Self {
        self.restriction = Some(h);
        self
    }

    pub fn starting_at(mut self, t: f64) -> Self {
        self.start = t;
        self
    }

    pub fn excluding(mut self, ids: Vec<ParticleId>) -> Self {
        self.excluded = ids;
        self
    }
}

/// Added B-particles take indices from here on, so their ids do not depend
/// on the sampled field.
pub const ADDED_INDEX_BASE: u32 = 1 << 31;

/// The layer realising `spec`'s own process on its particle set.
pub fn default_layer(spec: &ProcessSpec) -> LayerInit {
    match &spec.mode {
        ProcessMode::Original { added_b } => {
            let mut ids = Vec::new();
            let mut extra: FxHashMap<LatticePoint, u32> = FxHashMap::default();
            for (x, n) in added_b {
                let first = ADDED_INDEX_BASE + *extra.get(x).unwrap_or(&0);
                ids.extend((0..*n).map(|j| ParticleId::new(*x, first + j)));
                *extra.entry(*x).or_default() += n;
            }
            LayerInit::particles(ids)
        }
        ProcessMode::FullSpace | ProcessMode::HalfSpaceStart { .. } => LayerInit::nearest(LatticePoint::origin(spec.dim)),
        ProcessMode::StartedAt { at, time, .. } => LayerInit::nearest(*at).starting_at(*time),
    }
}

/// Sorted particle ids of the initial configuration (added B-particles included).
pub fn initial_particles(spec: &ProcessSpec) -> Vec<ParticleId> {
    let restriction = spec.mode.restriction();
    let mut ids = Vec::new();
    match &spec.field {
        InitialField::Poisson => {
            let streams = Streams::new(spec.seed);
            for x in cube_sites(spec.init_box, spec.dim) {
                if restriction.is_none_or(|h| h.contains(&x)) {
                    let n = streams.initial_count(&x, spec.mu_a);
                    ids.extend((0..n).map(|i| ParticleId::new(x, i)));
                }
            }
        }
        InitialField::Explicit { counts } => {
            let mut seen: FxHashMap<LatticePoint, u32> = FxHashMap::default();
            for (x, n) in counts {
                if restriction.is_none_or(|h| h.contains(x)) {
                    let first = seen.entry(*x).or_default();
                    ids.extend((*first..*first + n).map(|i| ParticleId::new(*x, i)));
                    *first += n;
                }
            }
        }
    }
    if let ProcessMode::Original { .. } = spec.mode {
        if let BSeed::Particles { ids: added } = default_layer(spec).seed_b {
            ids.extend(added);
        }
    }
    ids.sort_unstable();
    ids
}

/// Initial world and the sites whose particles start as B (empty for
/// [`ProcessMode::StartedAt`], whose designation happens at its start time).
pub fn build_initial_state(spec: &ProcessSpec) -> Result<(WorldState, Vec<LatticePoint>)> {
    spec.validate()?;
    let world = WorldState::new(spec.dim, initial_particles(spec), spec.init_box);
    let designated = match &spec.mode {
        ProcessMode::Original { added_b } => {
            let mut v: Vec<LatticePoint> = added_b.iter().map(|(x, _)| *x).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
        ProcessMode::FullSpace | ProcessMode::HalfSpaceStart { .. } => {
            let origin = LatticePoint::origin(spec.dim);
            vec![world.nearest_occupied(&origin, spec.init_box as i64, |_| true)?]
        }
        ProcessMode::StartedAt { .. } => Vec::new(),
    };
    Ok((world, designated))
}

/// Per-particle switching times of one type layer.
#[derive(Clone, Debug)]
pub struct TypeTimeline {
    pub id: usize,
    pub start: f64,
    pub restriction: Option<HalfSpace>,
    /// Site whose occupants seeded the layer (if chosen by nearest-site search).
    pub designated: Option<LatticePoint>,
    initial_b: Vec<u32>,
    theta: Vec<f64>,
    eligible: Option<Vec<bool>>,
    b_list: Vec<u32>,
    visited: FxHashMap<LatticePoint, f64>,
}

impl TypeTimeline {
    #[inline]
    pub fn is_eligible(&self, o: u32) -> bool {
        self.eligible.as_ref().is_none_or(|e| e[o as usize])
    }

    /// `θ(ρ)`; `+∞` for particles never infected (or absent from the layer).
    #[inline]
    pub fn theta(&self, o: u32) -> f64 {
        self.theta[o as usize]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    #[inline]
    pub fn is_b(&self, o: u32, t: f64) -> bool {
        self.theta[o as usize] <= t
    }

    pub fn initial_b(&self) -> &[u32] {
        &self.initial_b
    }

    /// Ordinals of B-particles at time `t` (not after the current time of the run).
    pub fn b_particles(&self, t: f64) -> impl Iterator<Item = u32> + '_ {
        self.b_list.iter().copied().filter(move |&o| self.theta[o as usize] <= t)
    }

    /// First time a B-particle occupied each site.
    pub fn visited_b(&self) -> &FxHashMap<LatticePoint, f64> {
        &self.visited
    }

    /// `B̃(t)`, sorted.
    pub fn b_tilde(&self, t: f64) -> Vec<LatticePoint> {
        let mut v: Vec<LatticePoint> = self.visited.iter().filter(|(_, &s)| s <= t).map(|(x, _)| *x).collect();
        v.sort_unstable();
        v
    }

    /// Distinct sites holding a B-particle in `world` (which must be at time `world.now`).
    pub fn b_sites(&self, world: &WorldState) -> Vec<LatticePoint> {
        let mut v: Vec<LatticePoint> = self.b_particles(world.now).map(|o| world.position(o)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn activate(init: &LayerInit, id: usize, world: &WorldState, search_radius: i64) -> Result<Self> {
        let n = world.len();
        let mut eligible = None;
        if init.restriction.is_some() || !init.excluded.is_empty() {
            let mut e: Vec<bool> = world
                .ids()
                .iter()
                .map(|pid| init.restriction.is_none_or(|h| h.contains(&pid.origin)))
                .collect();
            for pid in &init.excluded {
                let o = world.ordinal(pid).ok_or_else(|| Error::UnknownParticle(pid.to_string()))?;
                e[o as usize] = false;
            }
            eligible = Some(e);
        }
        let is_eligible = |o: u32| eligible.as_ref().is_none_or(|e: &Vec<bool>| e[o as usize]);
        let (mut initial_b, designated) = match &init.seed_b {
            BSeed::Particles { ids } => {
                let mut v = Vec::with_capacity(ids.len());
                for pid in ids {
                    let o = world.ordinal(pid).ok_or_else(|| Error::UnknownParticle(pid.to_string()))?;
                    if !is_eligible(o) {
                        return Err(Error::InvalidArgument(format!("initial B-particle {pid} is not in the layer")));
                    }
                    v.push(o);
                }
                (v, None)
            }
            BSeed::NearestOccupied { center } => {
                let radius = search_radius + center.linf();
                let site = world.nearest_occupied(center, radius, is_eligible)?;
                let v = world.occupants(&site).filter(|&o| is_eligible(o)).collect();
                (v, Some(site))
            }
        };
        initial_b.sort_unstable();
        initial_b.dedup();

        let t = world.now;
        let mut theta = vec![f64::INFINITY; n];
        let mut visited = FxHashMap::default();
        let mut b_list = Vec::new();
        for &o in &initial_b {
            theta[o as usize] = t;
            b_list.push(o);
        }
        // Particles sharing a site with an initial B switch at once.
        for &o in &initial_b {
            let x = world.position(o);
            visited.entry(x).or_insert(t);
            for j in world.occupants(&x) {
                if is_eligible(j) && theta[j as usize] == f64::INFINITY {
                    theta[j as usize] = t;
                    b_list.push(j);
                }
            }
        }
        Ok(TypeTimeline {
            id,
            start: t,
            restriction: init.restriction,
            designated,
            initial_b,
            theta,
            eligible,
            b_list,
            visited,
        })
    }

    /// Applies the coincidence rule after particle `o` moved to `to`.
    #[inline]
    fn on_move(&mut self, o: u32, to: LatticePoint, t: f64, occupants: Occupants<'_>) {
        if !self.is_eligible(o) {
            return;
        }
        if self.theta[o as usize] <= t {
            self.visited.entry(to).or_insert(t);
            for j in occupants {
                if self.theta[j as usize] == f64::INFINITY && self.is_eligible(j) {
                    self.theta[j as usize] = t;
                    self.b_list.push(j);
                }
            }
        } else if occupants.clone().any(|j| j != o && self.theta[j as usize] <= t && self.is_eligible(j)) {
            self.theta[o as usize] = t;
            self.b_list.push(o);
            self.visited.entry(to).or_insert(t);
        }
    }
}

/// Supplies particle jumps.
pub trait PathSource {
    /// Called once with the sorted particle ids before any jump is requested.
    fn prepare(&mut self, ids: &[ParticleId]);
    /// Absolute time and step index of jump number `cursor` of particle
    /// `ordinal`, whose previous jump happened at `prev` (0 before the first);
    /// `None` if the particle never jumps again.
    fn jump(&self, ordinal: u32, cursor: u64, prev: f64) -> Option<(f64, usize)>;
}

/// Paths drawn from the counter-based streams of a master seed.
#[derive(Clone, Debug)]
pub struct SeededPaths {
    streams: Streams,
    rate: f64,
    dim: usize,
    keys: Vec<u64>,
}

impl SeededPaths {
    pub fn new(seed: MasterSeed, rate: f64, dim: usize) -> Self {
        SeededPaths { streams: Streams::new(seed), rate, dim, keys: Vec::new() }
    }
}

impl PathSource for SeededPaths {
    fn prepare(&mut self, ids: &[ParticleId]) {
        self.keys = ids.iter().map(|id| self.streams.path_key(id)).collect();
    }

    #[inline]
    fn jump(&self, ordinal: u32, cursor: u64, prev: f64) -> Option<(f64, usize)> {
        let j = jump_at(self.keys[ordinal as usize], cursor, self.rate, self.dim);
        Some((prev + j.wait, j.step))
    }
}

/// Hand-written trajectories: for each listed particle, absolute jump times
/// and destination sites. Unlisted particles never move.
#[derive(Clone, Debug, Default)]
pub struct ScriptedPaths {
    script: FxHashMap<ParticleId, Vec<(f64, LatticePoint)>>,
    by_ordinal: Vec<Vec<(f64, usize)>>,
}

impl ScriptedPaths {
    pub fn frozen() -> Self {
        Self::default()
    }

    /// `moves` lists `(time, destination)`; each destination must be a
    /// nearest neighbour of the previous position.
    pub fn with(mut self, id: ParticleId, moves: Vec<(f64, LatticePoint)>) -> Self {
        self.script.insert(id, moves);
        self
    }
}

impl PathSource for ScriptedPaths {
    fn prepare(&mut self, ids: &[ParticleId]) {
        self.by_ordinal = ids
            .iter()
            .map(|id| {
                let mut at = id.origin;
                self.script
                    .get(id)
                    .map(|moves| {
                        moves
                            .iter()
                            .map(|(t, to)| {
                                let step = (0..2 * at.dim())
                                    .find(|&s| at.step(s) == *to)
                                    .unwrap_or_else(|| panic!("scripted move {at} -> {to} is not a lattice step"));
                                at = *to;
                                (*t, step)
                            })
                            .collect()
                    })
                    .unwrap_or_default()
            })
            .collect();
    }

    fn jump(&self, ordinal: u32, cursor: u64, _prev: f64) -> Option<(f64, usize)> {
        self.by_ordinal[ordinal as usize].get(cursor as usize).copied()
    }
}

/// Queue bucket width in units of the mean waiting time `1/D`.
const QUEUE_BUCKET_JUMPS: f64 = 0.5;

#[inline]
fn time_key(t: f64) -> u64 {
    // Times are nonnegative, for which the IEEE bit pattern is order preserving.
    t.to_bits()
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub world: WorldState,
    pub timelines: Vec<TypeTimeline>,
    pub events: u64,
    /// First containment breach: time and mover ordinal.
    pub breach: Option<(f64, u32)>,
}

/// A resumable run.
pub struct Simulation<P: PathSource = SeededPaths> {
    spec: ProcessSpec,
    paths: P,
    world: WorldState,
    queue: EventQueue,
    /// Per particle: jumps taken so far and the step of the next one.
    walk: Vec<(u64, u8)>,
    layers: Vec<TypeTimeline>,
    pending: Vec<LayerInit>,
    events: u64,
    guard_radius: i64,
    breach: Option<(f64, u32)>,
}

impl Simulation<SeededPaths> {
    pub fn new(spec: &ProcessSpec) -> Result<Self> {
        let paths = SeededPaths::new(spec.seed, spec.rate, spec.dim);
        Self::with_paths(spec, paths)
    }
}

impl<P: PathSource> Simulation<P> {
    pub fn with_paths(spec: &ProcessSpec, mut paths: P) -> Result<Self> {
        spec.validate()?;
        let world = WorldState::new(spec.dim, initial_particles(spec), spec.init_box + 2);
        let n = world.len();
        if n > u32::MAX as usize {
            return Err(Error::InvalidSpec { field: "init_box", reason: "too many particles".into() });
        }
        paths.prepare(world.ids());
        let mut queue = EventQueue::new(QUEUE_BUCKET_JUMPS / spec.rate);
        let mut walk = vec![(0u64, 0u8); n];
        for o in 0..n as u32 {
            if let Some((t, step)) = paths.jump(o, 0, 0.0) {
                walk[o as usize].1 = step as u8;
                queue.push(time_key(t), o);
            }
        }
        Ok(Simulation {
            spec: spec.clone(),
            paths,
            world,
            queue,
            walk,
            layers: Vec::new(),
            pending: Vec::new(),
            events: 0,
            guard_radius: spec.guard_radius(),
            breach: None,
        })
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn now(&self) -> f64 {
        self.world.now
    }

    pub fn layers(&self) -> &[TypeTimeline] {
        &self.layers
    }

    pub fn layer(&self, id: usize) -> &TypeTimeline {
        &self.layers[id]
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn breach(&self) -> Option<(f64, u32)> {
        self.breach
    }

    /// Adds a layer. Layers starting now are activated immediately (their
    /// id is returned); later starts are activated when the run reaches them
    /// and receive ids in activation order.
    pub fn add_layer(&mut self, init: LayerInit) -> Result<Option<usize>> {
        if init.start < self.world.now {
            return Err(Error::InvalidArgument(format!(
                "layer starts at {} but the run is already at {}",
                init.start, self.world.now
            )));
        }
        if init.start == self.world.now {
            self.activate(&init).map(Some)
        } else {
            self.pending.push(init);
            self.pending.sort_by(|a, b| a.start.total_cmp(&b.start));
            Ok(None)
        }
    }

    fn activate(&mut self, init: &LayerInit) -> Result<usize> {
        let id = self.layers.len();
        let layer = TypeTimeline::activate(init, id, &self.world, self.spec.init_box as i64)?;
        self.check_containment_layer(&layer);
        self.layers.push(layer);
        Ok(id)
    }

    /// Resets types at the current time: B at the nearest occupied site to
    /// `x` among particles born in `restriction`, A everywhere else.
    pub fn reset_types_at(&mut self, x: LatticePoint, restriction: Option<HalfSpace>) -> Result<usize> {
        let mut init = LayerInit::nearest(x).starting_at(self.world.now);
        init.restriction = restriction;
        self.activate(&init)
    }

    fn check_containment_layer(&mut self, layer: &TypeTimeline) {
        if self.breach.is_some() {
            return;
        }
        for o in layer.b_particles(self.world.now) {
            if self.world.position(o).linf() > self.guard_radius {
                self.breach = Some((self.world.now, o));
                self.world.containment_ok = false;
                return;
            }
        }
    }

    fn activate_pending_before(&mut self, t: f64, inclusive: bool) -> Result<()> {
        while let Some(first) = self.pending.first() {
            let due = if inclusive { first.start <= t } else { first.start < t };
            if !due {
                break;
            }
            let init = self.pending.remove(0);
            let saved = self.world.now;
            self.world.now = init.start;
            let r = self.activate(&init);
            self.world.now = saved.max(init.start);
            r?;
        }
        Ok(())
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        self.advance_to_with(t, |_| {})
    }

    /// Processes every jump with time `≤ t`, reporting each to `on_jump`.
    pub fn advance_to_with(&mut self, t: f64, mut on_jump: impl FnMut(&JumpEvent)) -> Result<()> {
        if t < self.world.now {
            return Err(Error::InvalidArgument(format!("cannot rewind from {} to {t}", self.world.now)));
        }
        let limit = time_key(t);
        while let Some((key, o)) = self.queue.peek() {
            if key > limit {
                break;
            }
            let time = f64::from_bits(key);
            if !self.pending.is_empty() {
                self.activate_pending_before(time, false)?;
            }
            self.queue.pop();
            self.world.now = time;
            let ev = self.apply_jump(o, time);
            self.events += 1;
            on_jump(&ev);
        }
        self.activate_pending_before(t, true)?;
        self.world.now = t;
        Ok(())
    }

    #[inline]
    fn apply_jump(&mut self, o: u32, time: f64) -> JumpEvent {
        let i = o as usize;
        let from = self.world.positions[i];
        let to = from.step(self.walk[i].1 as usize);
        self.world.move_particle(o, to);
        if !self.layers.is_empty() {
            let occupancy = &self.world.occupancy;
            for layer in &mut self.layers {
                layer.on_move(o, to, time, occupancy.iter(&to));
            }
            if self.breach.is_none() && to.linf() > self.guard_radius {
                // Infections at `to` only ever happen together with a B arriving
                // or already present, so checking the occupants covers them.
                let breached = self
                    .layers
                    .iter()
                    .any(|l| occupancy.iter(&to).any(|j| l.is_eligible(j) && l.is_b(j, time)));
                if breached {
                    self.breach = Some((time, o));
                    self.world.containment_ok = false;
                }
            }
        }
        let w = &mut self.walk[i];
        w.0 += 1;
        if let Some((t_next, step)) = self.paths.jump(o, w.0, time) {
            w.1 = step as u8;
            self.queue.push(time_key(t_next), o);
        }
        JumpEvent { time, who: o, from, to }
    }

    pub fn into_outcome(self) -> RunOutcome {
        RunOutcome { world: self.world, timelines: self.layers, events: self.events, breach: self.breach }
    }
}

/// Runs `spec` to its horizon with the given layers, calling `on_snapshot`
/// after advancing to each of `snapshots` (sorted, within the horizon).
pub fn run<P: PathSource>(
    spec: &ProcessSpec,
    paths: P,
    layers: Vec<LayerInit>,
    snapshots: &[f64],
    mut on_snapshot: impl FnMut(&Simulation<P>),
) -> Result<RunOutcome> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("at least one type layer is required".into()));
    }
    let mut sim = Simulation::with_paths(spec, paths)?;
    for l in layers {
        sim.add_layer(l)?;
    }
    for &t in snapshots {
        if t > spec.horizon {
            return Err(Error::InvalidArgument(format!("snapshot {t} beyond horizon {}", spec.horizon)));
        }
        sim.advance_to(t)?;
        on_snapshot(&sim);
    }
    sim.advance_to(spec.horizon)?;
    Ok(sim.into_outcome())
}

/// Runs `spec` with seeded paths and its own default layer.
pub fn run_default(spec: &ProcessSpec) -> Result<RunOutcome> {
    run(spec, SeededPaths::new(spec.seed, spec.rate, spec.dim), vec![default_layer(spec)], &[], |_| {})
}

/// Bounded in-memory event log.
#[derive(Clone, Debug, Default)]
pub struct EventRecorder {
    pub events: Vec<JumpEvent>,
    pub cap: usize,
    pub overflowed: bool,
}

impl EventRecorder {
    /// Logs are kept in memory only below this many events.
    pub const DEFAULT_CAP: usize = 1_000_000;

    pub fn new() -> Self {
        EventRecorder { events: Vec::new(), cap: Self::DEFAULT_CAP, overflowed: false }
    }

    pub fn record(&mut self, ev: &JumpEvent) {
        if self.events.len() < self.cap {
            self.events.push(*ev);
        } else {
            self.overflowed = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c)
    }

    fn hand_spec(dim: usize, mode: ProcessMode, counts: Vec<(LatticePoint, u32)>) -> ProcessSpec {
        let mut s = ProcessSpec::new(dim, 1.0, 1.0, 2.0, mode, MasterSeed(1)).with_field(counts);
        s.init_box = 5;
        s
    }

    #[test]
    fn empty_field_has_no_occupied_site() {
        let spec = hand_spec(2, ProcessMode::FullSpace, vec![]);
        assert!(matches!(build_initial_state(&spec), Err(Error::NoOccupiedSite { .. })));
    }

    #[test]
    fn full_space_designation_uses_shell_then_lex() {
        let spec = hand_spec(2, ProcessMode::FullSpace, vec![(p(&[1, 0]), 1), (p(&[0, -1]), 2)]);
        let (world, designated) = build_initial_state(&spec).unwrap();
        assert_eq!(designated, vec![p(&[0, -1])]);
        assert_eq!(world.len(), 3);
    }

    #[test]
    fn original_adds_b_at_origin() {
        let spec = ProcessSpec::new(2, 1.0, 1.0, 1.0, ProcessMode::original_at_origin(2), MasterSeed(8));
        let (world, designated) = build_initial_state(&spec).unwrap();
        assert_eq!(designated, vec![p(&[0, 0])]);
        let n0 = crate::streams::initial_count(MasterSeed(8), &p(&[0, 0]), 1.0);
        assert_eq!(world.occupants(&p(&[0, 0])).count() as u32, n0 + 1);
        let layer = default_layer(&spec);
        assert_eq!(layer.seed_b, BSeed::Particles { ids: vec![ParticleId::new(p(&[0, 0]), ADDED_INDEX_BASE)] });
    }

    #[test]
    fn half_space_field_is_restricted() {
        let u = Direction::axis(1, 0, true);
        let spec = ProcessSpec::new(1, 2.0, 1.0, 4.0, ProcessMode::HalfSpaceStart { u, r: 3.0 }, MasterSeed(2));
        let (world, designated) = build_initial_state(&spec).unwrap();
        assert!(world.ids().iter().all(|id| id.origin.coord(0) >= -3));
        assert!(designated[0].coord(0) >= -3);
        let full = spec.clone().with_mode(ProcessMode::FullSpace);
        let (wf, _) = build_initial_state(&full).unwrap();
        let expect: Vec<_> = wf.ids().iter().filter(|id| id.origin.coord(0) >= -3).copied().collect();
        assert_eq!(world.ids(), &expect[..]);
    }

    #[test]
    fn negative_offset_rejected_for_standalone_half_space() {
        let u = Direction::axis(1, 0, true);
        let spec = ProcessSpec::new(1, 1.0, 1.0, 1.0, ProcessMode::HalfSpaceStart { u, r: -1.0 }, MasterSeed(2));
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec { field: "mode.r", .. })));
    }

    #[test]
    fn guard_rule_enforced() {
        let mut spec = ProcessSpec::new(1, 1.0, 1.0, 100.0, ProcessMode::FullSpace, MasterSeed(2));
        assert_eq!(spec.init_box, 400 + 100);
        spec.init_box -= 1;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn expected_events() {
        let mut spec = ProcessSpec::new(1, 2.0, 1.0, 5.0, ProcessMode::FullSpace, MasterSeed(1));
        spec.init_box = 10;
        assert_eq!(expected_event_count(&spec), 210.0);
        spec.horizon = 0.0;
        assert_eq!(expected_event_count(&spec), 0.0);
        let mut spec = ProcessSpec::new(2, 1.0, 1.0, 7.0, ProcessMode::FullSpace, MasterSeed(1));
        spec.init_box = 0;
        assert_eq!(expected_event_count(&spec), 7.0);
    }

    #[test]
    fn frozen_original_only_origin_visited() {
        let spec = hand_spec(
            1,
            ProcessMode::original_at_origin(1),
            vec![(p(&[0]), 1), (p(&[2]), 1), (p(&[-3]), 2)],
        );
        let out = run(&spec, ScriptedPaths::frozen(), vec![default_layer(&spec)], &[], |_| {}).unwrap();
        let l = &out.timelines[0];
        assert_eq!(l.b_tilde(spec.horizon), vec![p(&[0])]);
        for o in 0..out.world.len() as u32 {
            let at_origin = out.world.position(o) == p(&[0]);
            assert_eq!(l.theta(o) == 0.0, at_origin);
            assert_eq!(l.theta(o).is_infinite(), !at_origin);
        }
        assert_eq!(out.events, 0);
    }

    #[test]
    fn hand_trace_switching_time() {
        let p_id = ParticleId::new(p(&[0]), 0);
        let q_id = ParticleId::new(p(&[2]), 0);
        let spec = hand_spec(1, ProcessMode::FullSpace, vec![(p(&[0]), 1), (p(&[2]), 1)]);
        let paths = ScriptedPaths::frozen().with(q_id, vec![(0.5, p(&[1])), (1.2, p(&[0]))]);
        let mut rec = EventRecorder::new();
        let mut sim = Simulation::with_paths(&spec, paths).unwrap();
        sim.add_layer(LayerInit::particles(vec![p_id])).unwrap();
        sim.advance_to_with(spec.horizon, |e| rec.record(e)).unwrap();
        let q = sim.world().ordinal(&q_id).unwrap();
        assert_eq!(sim.layer(0).theta(q), 1.2);
        assert_eq!(rec.events.len(), 2);
        assert_eq!(rec.events[1].time, 1.2);
        assert_eq!(sim.layer(0).b_tilde(2.0), vec![p(&[0])]);
    }

    #[test]
    fn coincidence_at_start() {
        let a = ParticleId::new(p(&[0, 0]), 0);
        let b = ParticleId::new(p(&[0, 0]), 1);
        let spec = hand_spec(2, ProcessMode::FullSpace, vec![(p(&[0, 0]), 2)]);
        let out = run(&spec, ScriptedPaths::frozen(), vec![LayerInit::particles(vec![a])], &[], |_| {}).unwrap();
        assert_eq!(out.timelines[0].theta(out.world.ordinal(&b).unwrap()), 0.0);
    }

    #[test]
    fn reset_types_examples() {
        let spec = hand_spec(2, ProcessMode::FullSpace, vec![(p(&[0, 0]), 2), (p(&[3, 3]), 1)]);
        let mut sim = Simulation::with_paths(&spec, ScriptedPaths::frozen()).unwrap();
        sim.add_layer(LayerInit::particles(vec![ParticleId::new(p(&[3, 3]), 0)])).unwrap();
        sim.advance_to(1.0).unwrap();
        let id = sim.reset_types_at(p(&[0, 0]), None).unwrap();
        let l = sim.layer(id);
        assert_eq!(l.designated, Some(p(&[0, 0])));
        assert_eq!(l.initial_b().len(), 2);
        let far = sim.world().ordinal(&ParticleId::new(p(&[3, 3]), 0)).unwrap();
        assert!(!l.is_b(far, 1.0));
        assert!(l.initial_b().iter().all(|&o| l.theta(o) == 1.0));

        let excl = HalfSpace::new(Direction::axis(2, 0, true), 10.0);
        assert!(matches!(sim.reset_types_at(p(&[0, 0]), Some(excl)), Err(Error::NoOccupiedSite { .. })));
    }

    #[test]
    fn deterministic_and_conserving() {
        let spec = ProcessSpec::new(2, 1.0, 1.0, 3.0, ProcessMode::original_at_origin(2), MasterSeed(77)).with_guard(1.0);
        let trace = |spec: &ProcessSpec| {
            let mut sim = Simulation::new(spec).unwrap();
            sim.add_layer(default_layer(spec)).unwrap();
            let mut log = Vec::new();
            let n = sim.world().len();
            sim.advance_to_with(spec.horizon, |e| log.push(*e)).unwrap();
            let total: usize = sim.world().occupied_sites().iter().map(|(_, v)| v.len()).sum();
            assert_eq!(total, n);
            (log, sim.layer(0).thetas().to_vec())
        };
        let (a, ta) = trace(&spec);
        let (b, tb) = trace(&spec);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.windows(2).all(|w| w[0].time < w[1].time || (w[0].time == w[1].time && w[0].who < w[1].who)));
        assert!(a.iter().all(|e| e.from.linf_dist(&e.to) == 1));
    }

    #[test]
    fn pending_layer_starts_later() {
        let spec = ProcessSpec::new(1, 1.0, 1.0, 6.0, ProcessMode::FullSpace, MasterSeed(4)).with_guard(1.0);
        let mut sim = Simulation::new(&spec).unwrap();
        sim.add_layer(default_layer(&spec)).unwrap();
        assert_eq!(sim.add_layer(LayerInit::nearest(p(&[3])).starting_at(2.5)).unwrap(), None);
        sim.advance_to(6.0).unwrap();
        let l = sim.layer(1);
        assert_eq!(l.start, 2.5);
        assert!(l.thetas().iter().all(|&t| t >= 2.5));
        assert!(sim.add_layer(LayerInit::nearest(p(&[0])).starting_at(1.0)).is_err());
    }

    #[test]
    fn started_at_mode_matches_reset() {
        let base = ProcessSpec::new(1, 1.0, 1.0, 5.0, ProcessMode::FullSpace, MasterSeed(12)).with_guard(1.0);
        let started = base.clone().with_mode(ProcessMode::StartedAt { restriction: None, at: p(&[2]), time: 2.0 });
        let (_, designated) = build_initial_state(&started).unwrap();
        assert!(designated.is_empty());
        let a = run_default(&started).unwrap();
        let mut sim = Simulation::new(&base).unwrap();
        sim.advance_to(2.0).unwrap();
        let id = sim.reset_types_at(p(&[2]), None).unwrap();
        sim.advance_to(5.0).unwrap();
        assert_eq!(a.timelines[0].thetas(), sim.layer(id).thetas());
    }
}
