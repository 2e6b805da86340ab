//! Pass/fail checks over seeded replica banks.
//!
//! Deterministic checks fail on the first counterexample and carry a
//! replayable witness. Statistical checks publish their statistics,
//! thresholds and sample sizes in `evidence`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::estimate::{growth_fit_layer, mean_stderr, Schedule};
use crate::lattice::{cube_sites, Direction, HalfSpace, LatticePoint};
use crate::observables::{argmax_site, directional_extent, kappa};
use crate::replicas::{map_ordered, Execution};
use crate::sim::{default_layer, BSeed, LayerInit, PathSource, ProcessMode, ProcessSpec, Simulation, TypeTimeline};
use crate::streams::{MasterSeed, ParticleId};

pub const PROPERTY_IDS: [&str; 6] =
    ["coupling", "nesting", "poisson", "no_a_behind_front", "superconvolutivity", "positive_speed"];

/// Significance level of the per-replica goodness-of-fit test.
pub const P_VALUE_GATE: f64 = 1e-3;

/// Minimum bank size for the superconvolutivity check.
pub const MIN_BANK: usize = 200;

/// Survival estimates are compared on this many equally spaced levels.
pub const ALPHA_GRID: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// No containment-clean replica was left to judge.
    Flagged,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Flagged => "flagged",
        }
    }
}

/// Enough to replay a counterexample: the replica seed (with the spec in
/// the report's config) plus the offending particle or site and time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub replica: u64,
    pub seed: MasterSeed,
    pub particle: Option<ParticleId>,
    pub site: Option<LatticePoint>,
    pub time: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub id: String,
    pub verdict: Verdict,
    /// Headline statistic and the threshold it was compared with.
    pub statistic: f64,
    pub threshold: f64,
    pub replicas: usize,
    pub flagged: usize,
    pub skipped: usize,
    pub evidence: Value,
    pub witness: Option<Witness>,
    pub config: Value,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Adds `inits` to `sim` and returns the id each one will carry once active.
fn add_layers<P: PathSource>(sim: &mut Simulation<P>, inits: &[LayerInit]) -> Result<Vec<usize>> {
    let mut ids = vec![usize::MAX; inits.len()];
    let mut pending = Vec::new();
    for (k, init) in inits.iter().enumerate() {
        match sim.add_layer(init.clone())? {
            Some(id) => ids[k] = id,
            None => pending.push(k),
        }
    }
    // Pending layers activate in start order, ties in insertion order.
    pending.sort_by(|&a, &b| inits[a].start.total_cmp(&inits[b].start));
    let base = sim.layers().len();
    for (j, k) in pending.into_iter().enumerate() {
        ids[k] = base + j;
    }
    Ok(ids)
}

fn spec_echo(spec: &ProcessSpec) -> Value {
    serde_json::to_value(spec).unwrap_or(Value::Null)
}

fn replica_indices(count: usize) -> Vec<u64> {
    (0..count as u64).collect()
}

/// Whether the two layers live on the same streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamPlan {
    Shared,
    /// Independent paths per layer; the coupling law says nothing here.
    Separate,
}

/// Two layers on one particle set with `smaller`'s initial B-set contained
/// in `larger`'s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingPair {
    pub smaller: LayerInit,
    pub larger: LayerInit,
}

/// Original-mode spec with B-particles added at the origin and at `2e₁`,
/// and the pairs (origin only ⊂ both) and (origin only = origin only).
pub fn coupling_setup(base: &ProcessSpec) -> (ProcessSpec, Vec<CouplingPair>) {
    let d = base.dim;
    let far = LatticePoint::unit(d, 0, 2);
    let spec = base
        .clone()
        .with_mode(ProcessMode::Original { added_b: vec![(LatticePoint::origin(d), 1), (far, 1)] });
    let BSeed::Particles { ids } = default_layer(&spec).seed_b else { unreachable!("original mode seeds particles") };
    let one = LayerInit::particles(vec![ids[0]]);
    let both = LayerInit::particles(ids);
    let pairs = vec![
        CouplingPair { smaller: one.clone(), larger: both },
        CouplingPair { smaller: one.clone(), larger: one },
    ];
    (spec, pairs)
}

fn check_pair_static(p: &CouplingPair) -> Result<()> {
    if p.smaller.restriction != p.larger.restriction || p.smaller.excluded != p.larger.excluded {
        return Err(Error::InvalidArgument("coupled layers must share one particle set".into()));
    }
    if p.smaller.start != p.larger.start {
        return Err(Error::InvalidArgument("coupled layers must start together".into()));
    }
    if let (BSeed::Particles { ids: a }, BSeed::Particles { ids: b }) = (&p.smaller.seed_b, &p.larger.seed_b) {
        if !a.iter().all(|x| b.contains(x)) {
            return Err(Error::InvalidArgument("smaller initial B-set is not contained in the larger".into()));
        }
    }
    Ok(())
}

/// First particle with `θ_big > θ_small` among `small`'s particles, as
/// `(ordinal, θ_small, θ_big)`.
fn theta_violation(small: &TypeTimeline, big: &TypeTimeline, n: usize) -> Option<(u32, f64, f64)> {
    (0..n as u32)
        .filter(|&o| small.is_eligible(o))
        .map(|o| (o, small.theta(o), big.theta(o)))
        .find(|&(_, ts, tb)| tb > ts)
}

struct CouplingOutcome {
    flagged: bool,
    compared: u64,
    strict: u64,
    witness: Option<Witness>,
}

/// `θ_larger(ρ) ≤ θ_smaller(ρ)` for every particle of every clean replica.
pub fn check_monotone_coupling(
    spec: &ProcessSpec,
    pairs: &[CouplingPair],
    streams: StreamPlan,
    replicas: usize,
    exec: Execution,
) -> Result<PropertyReport> {
    if streams == StreamPlan::Separate {
        return Err(Error::CouplingNotApplicable);
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no layer pairs".into()));
    }
    for p in pairs {
        check_pair_static(p)?;
    }
    spec.validate()?;
    // Identical recipes on one event stream give identical layers, so each
    // distinct recipe is simulated once.
    let mut inits: Vec<LayerInit> = Vec::new();
    let slots: Vec<usize> = pairs
        .iter()
        .flat_map(|p| [&p.smaller, &p.larger])
        .map(|init| match inits.iter().position(|x| x == init) {
            Some(k) => k,
            None => {
                inits.push(init.clone());
                inits.len() - 1
            }
        })
        .collect();
    let results = map_ordered(&replica_indices(replicas), exec, |&i| -> Result<CouplingOutcome> {
        let seed = spec.seed.replica(i);
        let s = spec.clone().with_seed(seed);
        let mut sim = Simulation::new(&s)?;
        let distinct = add_layers(&mut sim, &inits)?;
        let ids: Vec<usize> = slots.iter().map(|&k| distinct[k]).collect();
        sim.advance_to(s.horizon)?;
        let n = sim.world().len();
        let mut out = CouplingOutcome { flagged: sim.breach().is_some(), compared: 0, strict: 0, witness: None };
        for k in 0..pairs.len() {
            let (small, big) = (sim.layer(ids[2 * k]), sim.layer(ids[2 * k + 1]));
            if !small.initial_b().iter().all(|o| big.initial_b().contains(o))
                || (0..n as u32).any(|o| small.is_eligible(o) != big.is_eligible(o))
            {
                return Err(Error::InvalidArgument(format!("pair {k} does not nest in replica {i}")));
            }
            if out.flagged {
                continue;
            }
            for o in 0..n as u32 {
                if small.is_eligible(o) {
                    out.compared += 1;
                    if big.theta(o) < small.theta(o) {
                        out.strict += 1;
                    }
                }
            }
            if out.witness.is_none() {
                if let Some((o, ts, tb)) = theta_violation(small, big, n) {
                    out.witness = Some(Witness {
                        replica: i,
                        seed,
                        particle: Some(sim.world().id(o)),
                        site: None,
                        time: ts,
                        detail: format!("pair {k}: θ_larger = {tb} > θ_smaller = {ts}"),
                    });
                }
            }
        }
        Ok(out)
    });
    let results: Vec<CouplingOutcome> = results.into_iter().collect::<Result<_>>()?;
    let flagged = results.iter().filter(|r| r.flagged).count();
    let violations = results.iter().filter(|r| r.witness.is_some()).count();
    let witness = results.iter().find_map(|r| r.witness.clone());
    let verdict = if witness.is_some() {
        Verdict::Fail
    } else if flagged == replicas {
        Verdict::Flagged
    } else {
        Verdict::Pass
    };
    Ok(PropertyReport {
        id: "coupling".into(),
        verdict,
        statistic: violations as f64,
        threshold: 0.0,
        replicas,
        flagged,
        skipped: 0,
        evidence: json!({
            "violating_replicas": violations,
            "particles_compared": results.iter().map(|r| r.compared).sum::<u64>(),
            "strictly_earlier": results.iter().map(|r| r.strict).sum::<u64>(),
            "replicas_with_strict": results.iter().filter(|r| r.strict > 0).count(),
        }),
        witness,
        config: json!({ "spec": spec_echo(spec), "pairs": pairs, "streams": streams }),
    })
}

struct NestingOutcome {
    index: u64,
    flagged: bool,
    eligible: bool,
    within_proviso: bool,
    witness: Option<Witness>,
}

/// Couples `𝒫ʰ(u,−r1)` inside `𝒫ʰ(u,−r2)` (`r2 = None` is the full-space
/// process) and checks that every B-particle and every visited site of the
/// smaller process belongs to the larger one at all times. Switching and
/// first-visit times never change once set, so comparing them covers every
/// event time. Replicas whose designated start sites differ are skipped;
/// indices are consumed until `eligible` replicas are judged or
/// `max_replicas` have run.
pub fn check_halfspace_nesting(
    template: &ProcessSpec,
    u: &Direction,
    r1: f64,
    r2: Option<f64>,
    eligible: usize,
    max_replicas: usize,
    exec: Execution,
) -> Result<PropertyReport> {
    if !(r1 >= 0.0) || r2.is_some_and(|r2| !(r1 <= r2)) {
        return Err(Error::InvalidArgument(format!("need 0 ≤ r1 ≤ r2, got r1 = {r1}, r2 = {r2:?}")));
    }
    if u.dim() != template.dim {
        return Err(Error::DimensionMismatch { expected: template.dim, found: u.dim() });
    }
    let spec = template.clone().with_mode(match r2 {
        Some(r) => ProcessMode::HalfSpaceStart { u: *u, r },
        None => ProcessMode::FullSpace,
    });
    spec.validate()?;
    let small_init = LayerInit::nearest(LatticePoint::origin(spec.dim)).restricted(HalfSpace::new(*u, -r1));
    let proviso = r1 / (spec.dim as f64).sqrt();
    let run_one = |&i: &u64| -> Result<NestingOutcome> {
        let seed = spec.seed.replica(i);
        let s = spec.clone().with_seed(seed);
        let mut sim = Simulation::new(&s)?;
        let ids = add_layers(&mut sim, &[default_layer(&s), small_init.clone()])?;
        let (x_big, x_small) = (sim.layer(ids[0]).designated, sim.layer(ids[1]).designated);
        let mut out = NestingOutcome {
            index: i,
            flagged: false,
            eligible: x_big == x_small,
            within_proviso: x_big.is_some_and(|x| x.to_real().iter().map(|c| c * c).sum::<f64>().sqrt() <= proviso),
            witness: None,
        };
        if !out.eligible {
            return Ok(out);
        }
        sim.advance_to(s.horizon)?;
        out.flagged = sim.breach().is_some();
        if out.flagged {
            return Ok(out);
        }
        let (big, small) = (sim.layer(ids[0]), sim.layer(ids[1]));
        if let Some((o, ts, tb)) = theta_violation(small, big, sim.world().len()) {
            out.witness = Some(Witness {
                replica: i,
                seed,
                particle: Some(sim.world().id(o)),
                site: None,
                time: ts,
                detail: format!("B in the r1 process at {ts}, only at {tb} in the r2 process"),
            });
        } else {
            let mut visits: Vec<(&LatticePoint, &f64)> = small.visited_b().iter().collect();
            visits.sort_by(|a, b| a.0.cmp(b.0));
            for (x, &ts) in visits {
                let tb = big.visited_b().get(x).copied().unwrap_or(f64::INFINITY);
                if tb > ts {
                    out.witness = Some(Witness {
                        replica: i,
                        seed,
                        particle: None,
                        site: Some(*x),
                        time: ts,
                        detail: format!("site visited by B at {ts} in the r1 process, at {tb} in the r2 process"),
                    });
                    break;
                }
            }
        }
        Ok(out)
    };
    let mut outcomes: Vec<NestingOutcome> = Vec::new();
    let mut next = 0u64;
    loop {
        let judged = outcomes.iter().filter(|o| o.eligible && !o.flagged).count();
        let remaining = max_replicas.saturating_sub(next as usize);
        if judged >= eligible || remaining == 0 {
            break;
        }
        let batch: Vec<u64> = (next..next + (eligible - judged).min(remaining) as u64).collect();
        next += batch.len() as u64;
        for r in map_ordered(&batch, exec, run_one) {
            outcomes.push(r?);
        }
    }
    let mut judged = 0;
    let mut kept = Vec::new();
    for o in &outcomes {
        if o.eligible && !o.flagged {
            if judged == eligible {
                break;
            }
            judged += 1;
        }
        kept.push(o);
    }
    let skipped = kept.iter().filter(|o| !o.eligible).count();
    let flagged = kept.iter().filter(|o| o.eligible && o.flagged).count();
    let witness = kept.iter().find_map(|o| o.witness.clone());
    let verdict = if witness.is_some() {
        Verdict::Fail
    } else if judged == 0 {
        Verdict::Flagged
    } else {
        Verdict::Pass
    };
    Ok(PropertyReport {
        id: "nesting".into(),
        verdict,
        statistic: kept.iter().filter(|o| o.witness.is_some()).count() as f64,
        threshold: 0.0,
        replicas: kept.len(),
        flagged,
        skipped,
        evidence: json!({
            "judged": judged,
            "requested": eligible,
            "eligible_fraction": (kept.len() - skipped) as f64 / kept.len().max(1) as f64,
            "within_norm_proviso": kept.iter().filter(|o| o.within_proviso).count(),
            "replica_indices": kept.iter().map(|o| o.index).collect::<Vec<_>>(),
        }),
        witness,
        config: json!({ "spec": spec_echo(&spec), "u": u, "r1": r1, "r2": r2 }),
    })
}

/// Count ranges `[lo, hi]` (`hi = None` for the upper tail) with expected
/// count at least 5 out of `n` Poisson(`mu`) draws.
pub fn poisson_bins(mu: f64, n: usize) -> Result<Vec<(u64, Option<u64>, f64)>> {
    let pois = Poisson::new(mu).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = n as f64;
    let mut bins: Vec<(u64, Option<u64>, f64)> = Vec::new();
    let mut lo = 0u64;
    let mut acc = 0.0;
    let mut k = 0u64;
    loop {
        let tail_after = 1.0 - pois.cdf(k);
        acc += pois.pmf(k);
        if n * tail_after < 5.0 {
            bins.push((lo, None, acc + tail_after));
            break;
        }
        if n * acc >= 5.0 {
            bins.push((lo, Some(k), acc));
            lo = k + 1;
            acc = 0.0;
        }
        k += 1;
    }
    // The upper tail may be short of 5; fold it into its neighbour.
    if bins.len() >= 2 && n * bins[bins.len() - 1].2 < 5.0 {
        let (_, _, p) = bins.pop().expect("nonempty");
        let last = bins.last_mut().expect("nonempty");
        last.1 = None;
        last.2 += p;
    }
    if bins.len() < 2 {
        return Err(Error::InvalidArgument(format!("{n} sites are too few for a chi-square test at mean {mu}")));
    }
    Ok(bins)
}

/// Chi-square statistic and p-value of `counts` against Poisson(`mu`).
pub fn poisson_chi_square(counts: &[u32], mu: f64) -> Result<(f64, f64, usize)> {
    let bins = poisson_bins(mu, counts.len())?;
    let mut observed = vec![0u64; bins.len()];
    for &c in counts {
        let c = c as u64;
        let b = bins.iter().position(|&(lo, hi, _)| c >= lo && hi.is_none_or(|h| c <= h)).expect("bins cover N");
        observed[b] += 1;
    }
    let n = counts.len() as f64;
    let stat: f64 = bins.iter().zip(&observed).map(|(&(_, _, p), &o)| (o as f64 - n * p).powi(2) / (n * p)).sum();
    let df = bins.len() - 1;
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((stat, chi.sf(stat), df))
}

#[derive(Clone, Copy, Debug, Default)]
struct PairSums {
    n: f64,
    a: f64,
    b: f64,
    aa: f64,
    bb: f64,
    ab: f64,
}

impl PairSums {
    fn add(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.a += x;
        self.b += y;
        self.aa += x * x;
        self.bb += y * y;
        self.ab += x * y;
    }

    fn merge(&mut self, o: &PairSums) {
        self.n += o.n;
        self.a += o.a;
        self.b += o.b;
        self.aa += o.aa;
        self.bb += o.bb;
        self.ab += o.ab;
    }

    fn correlation(&self) -> f64 {
        let cov = self.ab / self.n - (self.a / self.n) * (self.b / self.n);
        let va = self.aa / self.n - (self.a / self.n).powi(2);
        let vb = self.bb / self.n - (self.b / self.n).powi(2);
        cov / (va * vb).sqrt()
    }
}

/// Site counts on `𝒞(L/2)` at time `t` against i.i.d. Poisson(`μ_A`):
/// per-replica chi-square p-values must exceed [`P_VALUE_GATE`] in at least
/// `pass_rate` of the clean replicas, and the pooled correlation of counts
/// at lattice neighbours must lie within `±3/√N` over the `N` pairs.
pub fn check_poisson_marginals(
    spec: &ProcessSpec,
    t: f64,
    replicas: usize,
    pass_rate: f64,
    exec: Execution,
) -> Result<PropertyReport> {
    if spec.mode != ProcessMode::FullSpace {
        return Err(Error::InvalidArgument("the marginal check runs in full-space mode".into()));
    }
    if !(t >= 0.0 && t <= spec.horizon) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, {}]", spec.horizon)));
    }
    spec.validate()?;
    let d = spec.dim;
    let half = spec.init_box / 2;
    let window: Vec<LatticePoint> = cube_sites(half, d).collect();
    let index_of = |x: &LatticePoint| -> Option<usize> {
        let side = 2 * half as i64 + 1;
        let mut idx = 0i64;
        for &c in x.coords() {
            if c.unsigned_abs() > half {
                return None;
            }
            idx = idx * side + (c as i64 + half as i64);
        }
        Some(idx as usize)
    };
    let results = map_ordered(&replica_indices(replicas), exec, |&i| -> Result<(bool, f64, f64, PairSums)> {
        let s = spec.clone().with_seed(spec.seed.replica(i));
        let mut sim = Simulation::new(&s)?;
        sim.add_layer(default_layer(&s))?;
        sim.advance_to(t)?;
        let counts: Vec<u32> = window.iter().map(|x| sim.world().occupants(x).count() as u32).collect();
        let (stat, p, _) = poisson_chi_square(&counts, s.mu_a)?;
        let mut sums = PairSums::default();
        for (k, x) in window.iter().enumerate() {
            for axis in 0..d {
                if let Some(j) = index_of(&x.offset(&LatticePoint::unit(d, axis, 1))) {
                    sums.add(counts[k] as f64, counts[j] as f64);
                }
            }
        }
        Ok((sim.breach().is_some(), stat, p, sums))
    });
    let results: Vec<(bool, f64, f64, PairSums)> = results.into_iter().collect::<Result<_>>()?;
    let clean: Vec<&(bool, f64, f64, PairSums)> = results.iter().filter(|r| !r.0).collect();
    let flagged = replicas - clean.len();
    let passing = clean.iter().filter(|r| r.2 > P_VALUE_GATE).count();
    let fraction = passing as f64 / clean.len().max(1) as f64;
    let mut pooled = PairSums::default();
    for r in &clean {
        pooled.merge(&r.3);
    }
    let corr = pooled.correlation();
    let corr_bound = 3.0 / pooled.n.sqrt();
    let corr_ok = corr.abs() <= corr_bound;
    let verdict = if clean.is_empty() {
        Verdict::Flagged
    } else if fraction >= pass_rate && corr_ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let bins = poisson_bins(spec.mu_a, window.len())?;
    Ok(PropertyReport {
        id: "poisson".into(),
        verdict,
        statistic: fraction,
        threshold: pass_rate,
        replicas,
        flagged,
        skipped: 0,
        evidence: json!({
            "t": t,
            "window_radius": half,
            "sites_per_replica": window.len(),
            "bins": bins.len(),
            "degrees_of_freedom": bins.len() - 1,
            "p_value_gate": P_VALUE_GATE,
            "replicas_passing": passing,
            "chi_square": clean.iter().map(|r| r.1).collect::<Vec<_>>(),
            "p_values": clean.iter().map(|r| r.2).collect::<Vec<_>>(),
            "neighbour_correlation": corr,
            "neighbour_pairs": pooled.n,
            "correlation_bound": corr_bound,
            "correlation_ok": corr_ok,
        }),
        witness: None,
        config: json!({ "spec": spec_echo(spec), "t": t }),
    })
}

/// Smallest full-space speed estimate over the ±axis directions, from a
/// bank on the `lambda_min` substream of `template.seed` observed at
/// `⌊T/2⌋` and `2⌊T/2⌋`.
pub fn axis_lambda_min(template: &ProcessSpec, horizon: f64, replicas: usize, exec: Execution) -> Result<f64> {
    let n = (horizon / 2.0).floor() as u64;
    let schedule = crate::estimate::geometric_schedule(1.0, n, 1)?;
    let spec = template.clone().with_seed(template.seed.substream(b"lambda_min")).with_horizon(schedule.last() as f64);
    let d = spec.dim;
    let dirs: Vec<Direction> = (0..d).flat_map(|i| [Direction::axis(d, i, true), Direction::axis(d, i, false)]).collect();
    let (est, _) = crate::estimate::estimate_lambdas(&spec, &dirs, &schedule, replicas, exec)?;
    Ok(est.iter().map(|e| e.point).fold(f64::INFINITY, f64::min))
}

/// Counts A-particles in `𝒞(shrink·λ_min·t/√d)` at time `t`; passes when at
/// least `pass_rate` of the clean replicas have none. Radii below 1 pass
/// vacuously.
pub fn check_no_a_behind_front(
    spec: &ProcessSpec,
    t: f64,
    shrink: f64,
    lambda_min: f64,
    replicas: usize,
    pass_rate: f64,
    exec: Execution,
) -> Result<PropertyReport> {
    if spec.mode != ProcessMode::FullSpace {
        return Err(Error::InvalidArgument("the front check runs in full-space mode".into()));
    }
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::InvalidArgument(format!("shrink must lie in (0,1), got {shrink}")));
    }
    if !(t >= 0.0 && t <= spec.horizon) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, {}]", spec.horizon)));
    }
    spec.validate()?;
    let radius = shrink * lambda_min * t / (spec.dim as f64).sqrt();
    let config = json!({ "spec": spec_echo(spec), "t": t, "shrink": shrink, "lambda_min": lambda_min });
    if radius < 1.0 {
        return Ok(PropertyReport {
            id: "no_a_behind_front".into(),
            verdict: Verdict::Pass,
            statistic: 1.0,
            threshold: pass_rate,
            replicas: 0,
            flagged: 0,
            skipped: 0,
            evidence: json!({ "radius": radius, "vacuous": true }),
            witness: None,
            config,
        });
    }
    let r = radius.floor() as i64;
    let results = map_ordered(&replica_indices(replicas), exec, |&i| -> Result<(bool, usize)> {
        let s = spec.clone().with_seed(spec.seed.replica(i));
        let mut sim = Simulation::new(&s)?;
        let id = sim.add_layer(default_layer(&s))?.unwrap_or(0);
        sim.advance_to(t)?;
        let layer = sim.layer(id);
        let inside = sim
            .world()
            .positions()
            .iter()
            .enumerate()
            .filter(|(o, x)| x.linf() <= r && !layer.is_b(*o as u32, t))
            .count();
        Ok((sim.breach().is_some(), inside))
    });
    let results: Vec<(bool, usize)> = results.into_iter().collect::<Result<_>>()?;
    let clean: Vec<usize> = results.iter().filter(|r| !r.0).map(|r| r.1).collect();
    let empty = clean.iter().filter(|&&c| c == 0).count();
    let fraction = empty as f64 / clean.len().max(1) as f64;
    Ok(PropertyReport {
        id: "no_a_behind_front".into(),
        verdict: if clean.is_empty() {
            Verdict::Flagged
        } else if fraction >= pass_rate {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        statistic: fraction,
        threshold: pass_rate,
        replicas,
        flagged: replicas - clean.len(),
        skipped: 0,
        evidence: json!({ "radius": radius, "vacuous": false, "interior_a_counts": clean }),
        witness: None,
        config,
    })
}

/// `h*(time, u)` over a bank: extents at `time` of `𝒫ʰ(u, −c5·κ(time))`,
/// seeded by `base.replica(i)`. Flagged replicas are dropped.
pub fn h_star_bank(
    template: &ProcessSpec,
    u: &Direction,
    time: f64,
    c5: f64,
    base: MasterSeed,
    replicas: usize,
    exec: Execution,
) -> Result<(Vec<f64>, usize)> {
    let spec = ProcessSpec {
        mode: ProcessMode::HalfSpaceStart { u: *u, r: c5 * kappa(time) },
        ..template.clone()
    }
    .with_horizon(time);
    spec.validate()?;
    let results = map_ordered(&replica_indices(replicas), exec, |&i| -> Result<Option<f64>> {
        let s = spec.clone().with_seed(base.replica(i));
        let mut sim = Simulation::new(&s)?;
        let id = sim.add_layer(default_layer(&s))?.unwrap_or(0);
        sim.advance_to(time)?;
        if sim.breach().is_some() {
            return Ok(None);
        }
        directional_extent(&sim.layer(id).b_sites(sim.world()), u).map(Some)
    });
    let values: Vec<Option<f64>> = results.into_iter().collect::<Result<_>>()?;
    let flagged = values.iter().filter(|v| v.is_none()).count();
    Ok((values.into_iter().flatten().collect(), flagged))
}

fn survival(samples: &[f64], alpha: f64) -> (f64, f64) {
    let n = samples.len() as f64;
    let p = samples.iter().filter(|&&x| x >= alpha).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Survival dominance `P{h*(s+t+c6κ(t)) ≥ α} ≥ P{h₁*(s) + h₂*(t) ≥ α}` with
/// two standard errors of slack on each side, over three independent banks.
#[allow(clippy::too_many_arguments)]
pub fn check_superconvolutivity(
    template: &ProcessSpec,
    u: &Direction,
    s: f64,
    t: f64,
    c5: f64,
    c6: f64,
    replicas: usize,
    exec: Execution,
) -> Result<PropertyReport> {
    if replicas < MIN_BANK {
        return Err(Error::InsufficientReplicas { needed: MIN_BANK, got: replicas });
    }
    if !(s > 0.0 && s <= t) {
        return Err(Error::InvalidArgument(format!("need 0 < s ≤ t, got s = {s}, t = {t}")));
    }
    let t_left = s + t + c6 * kappa(t);
    let seed = template.seed;
    let (left, fl) = h_star_bank(template, u, t_left, c5, seed.substream(b"left"), replicas, exec)?;
    let (h1, f1) = h_star_bank(template, u, s, c5, seed.substream(b"h1"), replicas, exec)?;
    let (h2, f2) = h_star_bank(template, u, t, c5, seed.substream(b"h2"), replicas, exec)?;
    let m = h1.len().min(h2.len());
    let sums: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
    let config = json!({
        "spec": spec_echo(template), "u": u, "s": s, "t": t, "c5": c5, "c6": c6,
        "left_time": t_left,
    });
    if left.is_empty() || m == 0 {
        return Ok(PropertyReport {
            id: "superconvolutivity".into(),
            verdict: Verdict::Flagged,
            statistic: f64::NAN,
            threshold: 0.0,
            replicas: 3 * replicas,
            flagged: fl + f1 + f2,
            skipped: 0,
            evidence: json!({}),
            witness: None,
            config,
        });
    }
    let lo = left.iter().chain(&sums).copied().fold(f64::INFINITY, f64::min);
    let hi = left.iter().chain(&sums).copied().fold(f64::NEG_INFINITY, f64::max);
    let mut worst = f64::INFINITY;
    let mut worst_alpha = lo;
    let mut violations = 0;
    for k in 0..ALPHA_GRID {
        let alpha = lo + (hi - lo) * k as f64 / (ALPHA_GRID - 1) as f64;
        let (pl, sl) = survival(&left, alpha);
        let (pr, sr) = survival(&sums, alpha);
        let margin = (pl + 2.0 * sl) - (pr - 2.0 * sr);
        if margin < 0.0 {
            violations += 1;
        }
        if margin < worst {
            worst = margin;
            worst_alpha = alpha;
        }
    }
    let (ml, _) = mean_stderr(&left);
    let (mr, _) = mean_stderr(&sums);
    Ok(PropertyReport {
        id: "superconvolutivity".into(),
        verdict: if violations == 0 { Verdict::Pass } else { Verdict::Fail },
        statistic: worst,
        threshold: 0.0,
        replicas: 3 * replicas,
        flagged: fl + f1 + f2,
        skipped: 0,
        evidence: json!({
            "left_samples": left.len(),
            "sum_samples": m,
            "grid_points": ALPHA_GRID,
            "violations": violations,
            "worst_margin": worst,
            "worst_alpha": worst_alpha,
            "left_mean": ml,
            "sum_mean": mr,
            "offsets": { "left": c5 * kappa(t_left), "s": c5 * kappa(s), "t": c5 * kappa(t) },
        }),
        witness: None,
        config,
    })
}

/// Positive and finite speed in direction `u`: one half-space layer
/// `S(u, −c5·κ(n_k))` per schedule time, sharing a run. Passes when the 5th
/// percentile of `h*(n_last)/n_last` is positive and the 95th lies below
/// `2√d·ĉ_upper` (largest growth-fit upper constant over the bank).
pub fn check_positive_speed(
    template: &ProcessSpec,
    u: &Direction,
    schedule: &Schedule,
    c5: f64,
    replicas: usize,
    exec: Execution,
) -> Result<PropertyReport> {
    let times = schedule.as_times();
    let n_last = schedule.last() as f64;
    let spec = ProcessSpec {
        mode: ProcessMode::HalfSpaceStart { u: *u, r: c5 * kappa(n_last) },
        ..template.clone()
    }
    .with_horizon(n_last);
    spec.validate()?;
    let d = spec.dim;
    let inits: Vec<LayerInit> = times
        .iter()
        .map(|&n| LayerInit::nearest(LatticePoint::origin(d)).restricted(HalfSpace::new(*u, -c5 * kappa(n))))
        .collect();
    let results = map_ordered(&replica_indices(replicas), exec, |&i| -> Result<Option<(Vec<f64>, f64)>> {
        let s = spec.clone().with_seed(spec.seed.replica(i));
        let mut sim = Simulation::new(&s)?;
        let ids = add_layers(&mut sim, &inits)?;
        let mut h = Vec::with_capacity(times.len());
        for (k, &n) in times.iter().enumerate() {
            sim.advance_to(n)?;
            h.push(argmax_site(&sim.layer(ids[k]).b_sites(sim.world()), u)?.h_star);
        }
        if sim.breach().is_some() {
            return Ok(None);
        }
        let fit = growth_fit_layer(sim.layer(ids[times.len() - 1]), d, n_last, 20)?;
        Ok(Some((h, fit.c_upper)))
    });
    let results: Vec<Option<(Vec<f64>, f64)>> = results.into_iter().collect::<Result<_>>()?;
    let clean: Vec<&(Vec<f64>, f64)> = results.iter().flatten().collect();
    let flagged = replicas - clean.len();
    let config = json!({ "spec": spec_echo(&spec), "u": u, "schedule": schedule, "c5": c5 });
    if clean.is_empty() {
        return Ok(PropertyReport {
            id: "positive_speed".into(),
            verdict: Verdict::Flagged,
            statistic: f64::NAN,
            threshold: 0.0,
            replicas,
            flagged,
            skipped: 0,
            evidence: json!({}),
            witness: None,
            config,
        });
    }
    let speeds: Vec<f64> = clean.iter().map(|(h, _)| h[h.len() - 1] / n_last).collect();
    let c_upper = clean.iter().map(|c| c.1).fold(0.0, f64::max);
    let mut data = Data::new(speeds.clone());
    let q05 = data.quantile(0.05);
    let q95 = data.quantile(0.95);
    let upper = 2.0 * (d as f64).sqrt() * c_upper;
    let (lambda, se) = mean_stderr(&speeds);
    let pass = q05 > 0.0 && q95.is_finite() && q95 < upper;
    Ok(PropertyReport {
        id: "positive_speed".into(),
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        statistic: q05,
        threshold: 0.0,
        replicas,
        flagged,
        skipped: 0,
        evidence: json!({
            "q05": q05,
            "q95": q95,
            "upper_gate": upper,
            "c_upper": c_upper,
            "lambda": lambda,
            "stderr": se,
            "upper_consistent": lambda <= (d as f64).sqrt() * c_upper + 3.0 * se,
            "mean_h_star": (0..times.len())
                .map(|k| clean.iter().map(|(h, _)| h[k]).sum::<f64>() / clean.len() as f64)
                .collect::<Vec<_>>(),
        }),
        witness: None,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::geometric_schedule;

    fn base(dim: usize, horizon: f64) -> ProcessSpec {
        ProcessSpec::new(dim, 1.0, 1.0, horizon, ProcessMode::FullSpace, MasterSeed(2024))
    }

    #[test]
    fn coupling_passes_with_strict_evidence() {
        let (spec, pairs) = coupling_setup(&base(1, 20.0));
        let rep = check_monotone_coupling(&spec, &pairs, StreamPlan::Shared, 100, Execution::Parallel).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{:?}", rep.witness);
        assert!(rep.evidence["replicas_with_strict"].as_u64().unwrap() >= 1);
    }

    #[test]
    fn identical_layers_pass_with_equality() {
        let (spec, pairs) = coupling_setup(&base(1, 10.0));
        let rep = check_monotone_coupling(&spec, &pairs[1..], StreamPlan::Shared, 10, Execution::Sequential).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert_eq!(rep.evidence["strictly_earlier"], 0);
    }

    #[test]
    fn separate_streams_are_rejected() {
        let (spec, pairs) = coupling_setup(&base(1, 10.0));
        assert_eq!(
            check_monotone_coupling(&spec, &pairs, StreamPlan::Separate, 10, Execution::Sequential),
            Err(Error::CouplingNotApplicable)
        );
    }

    #[test]
    fn reversed_pair_is_rejected() {
        let (spec, pairs) = coupling_setup(&base(1, 20.0));
        let flipped = CouplingPair { smaller: pairs[0].larger.clone(), larger: pairs[0].smaller.clone() };
        assert!(check_monotone_coupling(&spec, &[flipped], StreamPlan::Shared, 5, Execution::Sequential).is_err());
    }

    #[test]
    fn nesting_equal_radii_and_full_space() {
        let u = Direction::axis(1, 0, true);
        let rep = check_halfspace_nesting(&base(1, 20.0), &u, 3.0, Some(3.0), 10, 20, Execution::Sequential).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert_eq!(rep.skipped, 0);
        let rep = check_halfspace_nesting(&base(1, 20.0), &u, 2.0, None, 20, 60, Execution::Parallel).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{:?}", rep.witness);
        assert_eq!(rep.evidence["judged"], 20);
    }

    #[test]
    fn nesting_skip_rate_small_for_large_r1() {
        let u = Direction::axis(1, 0, true);
        let rep = check_halfspace_nesting(&base(1, 5.0), &u, 6.0, Some(12.0), 100, 200, Execution::Parallel).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!((rep.skipped as f64) < 0.05 * rep.replicas as f64, "{}", rep.skipped);
    }

    #[test]
    fn bins_have_expected_mass() {
        let bins = poisson_bins(1.0, 4225).unwrap();
        let total: f64 = bins.iter().map(|b| b.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(bins.iter().all(|b| 4225.0 * b.2 >= 5.0));
        assert_eq!(bins.last().unwrap().1, None);
        assert_eq!(bins[0].0, 0);
    }

    #[test]
    fn chi_square_of_exact_expectations_is_zero() {
        // 1000 sites with counts matching the expected histogram of Poisson(1)
        // up to rounding give a tiny statistic.
        let pois = Poisson::new(1.0).unwrap();
        let mut counts = Vec::new();
        for k in 0..6u32 {
            let m = (1000.0 * pois.pmf(k as u64)).round() as usize;
            counts.extend(std::iter::repeat_n(k, m));
        }
        let (stat, p, _) = poisson_chi_square(&counts, 1.0).unwrap();
        assert!(stat < 1.0 && p > 0.5, "{stat} {p}");
        let (_, p, _) = poisson_chi_square(&vec![1; 1000], 1.0).unwrap();
        assert!(p < 1e-10);
    }

    #[test]
    fn poisson_at_time_zero_passes() {
        let spec = base(2, 2.0).with_guard(4.0);
        let rep = check_poisson_marginals(&spec, 0.0, 10, 0.8, Execution::Parallel).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.evidence);
    }

    #[test]
    fn front_check_vacuous_and_mode_gate() {
        let spec = base(1, 2.0);
        let rep = check_no_a_behind_front(&spec, 1.0, 0.5, 0.5, 5, 0.9, Execution::Sequential).unwrap();
        assert_eq!(rep.evidence["vacuous"], true);
        assert_eq!(rep.verdict, Verdict::Pass);
        let orig = spec.clone().with_mode(ProcessMode::original_at_origin(1));
        assert!(check_no_a_behind_front(&orig, 1.0, 0.5, 0.5, 5, 0.9, Execution::Sequential).is_err());
    }

    #[test]
    fn superconvolutivity_needs_banks() {
        let u = Direction::axis(1, 0, true);
        assert_eq!(
            check_superconvolutivity(&base(1, 10.0), &u, 5.0, 5.0, 1.0, 4.0, 199, Execution::Sequential),
            Err(Error::InsufficientReplicas { needed: 200, got: 199 })
        );
    }

    #[test]
    fn survival_tails() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(survival(&xs, 0.0), (1.0, 0.0));
        assert_eq!(survival(&xs, 5.0), (0.0, 0.0));
        assert_eq!(survival(&xs, 3.0).0, 0.5);
    }

    #[test]
    fn frozen_speed_fails() {
        let spec = ProcessSpec::new(1, 1.0, 1e-12, 40.0, ProcessMode::FullSpace, MasterSeed(3));
        let sched = geometric_schedule(1.0, 20, 1).unwrap();
        let rep = check_positive_speed(&spec, &Direction::axis(1, 0, true), &sched, 1.0, 10, Execution::Sequential)
            .unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
    }

    #[test]
    fn positive_speed_standard_config() {
        let sched = geometric_schedule(1.0, 25, 2).unwrap();
        let rep = check_positive_speed(&base(1, 100.0), &Direction::axis(1, 0, true), &sched, 1.0, 20, Execution::Parallel)
            .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.evidence);
        assert_eq!(rep.evidence["upper_consistent"], true);
    }
}
