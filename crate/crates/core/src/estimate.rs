//! Speed estimation over replica banks, growth fits and direction grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Direction, LatticePoint};
use crate::observables::{radius_series, FrontRecord};
use crate::replicas::{run_bank, Execution};
use crate::shape::symmetry_group;
use crate::sim::{default_layer, ProcessMode, ProcessSpec, Simulation};
use crate::streams::MasterSeed;

/// Minimum bank size for a speed estimate.
pub const MIN_REPLICAS: usize = 8;

/// Increasing integer times `n_k = ⌊n0 (1+η)^k⌋` with `1 < n_{k+1}/n_k ≤ 1+η`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eta: f64,
    pub n0: u64,
    pub times: Vec<u64>,
}

impl Schedule {
    pub fn last(&self) -> u64 {
        *self.times.last().expect("schedules are nonempty")
    }

    pub fn as_times(&self) -> Vec<f64> {
        self.times.iter().map(|&n| n as f64).collect()
    }
}

pub fn geometric_schedule(eta: f64, n0: u64, k_max: u32) -> Result<Schedule> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::ScheduleInfeasible(format!("eta must be positive, got {eta}")));
    }
    if (n0 as f64) * eta < 2.0 {
        return Err(Error::ScheduleInfeasible(format!("n0·eta = {} < 2", n0 as f64 * eta)));
    }
    if k_max < 1 {
        return Err(Error::ScheduleInfeasible("k_max must be at least 1".into()));
    }
    let mut times: Vec<u64> = (0..=k_max).map(|k| (n0 as f64 * (1.0 + eta).powi(k as i32)).floor() as u64).collect();
    times.dedup();
    for w in times.windows(2) {
        let ratio = w[1] as f64 / w[0] as f64;
        if !(ratio > 1.0 && ratio <= 1.0 + eta) {
            return Err(Error::ScheduleInfeasible(format!("n = {} → {} has ratio {ratio}", w[0], w[1])));
        }
    }
    Ok(Schedule { eta, n0, times })
}

/// Default direction family: `±1` in d=1, `m` equally spaced angles in d=2,
/// and ±axes with all ±diagonals of the unit cube otherwise.
pub fn direction_grid(dim: usize, m: usize) -> Result<Vec<Direction>> {
    match dim {
        1 => Ok(vec![Direction::axis(1, 0, true), Direction::axis(1, 0, false)]),
        2 => {
            if m < 3 {
                return Err(Error::InvalidArgument(format!("a planar grid needs at least 3 angles, got {m}")));
            }
            Ok((0..m).map(|k| Direction::from_angle(2.0 * std::f64::consts::PI * k as f64 / m as f64)).collect())
        }
        _ if dim <= crate::lattice::MAX_DIM => {
            // Every nonzero vector in {−1,0,1}^d; for d=3 that is the 26-point family.
            let mut out = Vec::new();
            for x in crate::lattice::cube_sites(1, dim) {
                if x.linf() == 0 {
                    continue;
                }
                out.push(Direction::new(&x.to_real())?);
            }
            Ok(out)
        }
        _ => Err(Error::DimensionUnsupported(dim)),
    }
}

/// Distinct images of `u` under coordinate permutations and sign flips.
pub fn symmetry_images(u: &Direction) -> Vec<Direction> {
    let mut out: Vec<Direction> = Vec::new();
    for (perm, signs) in symmetry_group(u.dim()) {
        let v = u.transform(&perm, &signs);
        if !out.iter().any(|w| w.components().iter().zip(v.components()).all(|(a, b)| (a - b).abs() < 1e-12)) {
            out.push(v);
        }
    }
    out
}

/// Extents of one replica at each requested time.
#[derive(Clone, Debug)]
pub struct ReplicaFronts {
    pub index: u64,
    pub seed: MasterSeed,
    pub events: u64,
    pub breach: Option<(f64, u32)>,
    pub designated: Option<LatticePoint>,
    pub records: Vec<FrontRecord>,
    /// `B̃` at the last requested time, when asked for.
    pub b_tilde: Option<Vec<LatticePoint>>,
}

impl ReplicaFronts {
    pub fn flagged(&self) -> bool {
        self.breach.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct FrontBank {
    pub directions: Vec<Direction>,
    pub times: Vec<f64>,
    pub replicas: Vec<ReplicaFronts>,
}

impl FrontBank {
    pub fn clean(&self) -> impl Iterator<Item = &ReplicaFronts> {
        self.replicas.iter().filter(|r| !r.flagged())
    }

    pub fn flagged(&self) -> Vec<u64> {
        self.replicas.iter().filter(|r| r.flagged()).map(|r| r.index).collect()
    }
}

/// Runs replicas `first..first+count` of `template` (seeded by
/// `template.seed.replica(i)`, default layer) up to the last of `times`,
/// recording extents in `dirs` at every time.
pub fn front_bank(
    template: &ProcessSpec,
    dirs: &[Direction],
    times: &[f64],
    first: u64,
    count: usize,
    keep_b_tilde: bool,
    exec: Execution,
) -> Result<FrontBank> {
    let mut times = times.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let Some(&t_end) = times.last() else {
        return Err(Error::InvalidArgument("no snapshot times".into()));
    };
    if t_end > template.horizon {
        return Err(Error::InvalidArgument(format!("snapshot {t_end} beyond horizon {}", template.horizon)));
    }
    if let Some(u) = dirs.iter().find(|u| u.dim() != template.dim) {
        return Err(Error::DimensionMismatch { expected: template.dim, found: u.dim() });
    }
    template.validate()?;
    let results = run_bank(template.seed, first, count, exec, |index, seed| -> Result<ReplicaFronts> {
        let spec = template.clone().with_seed(seed);
        let mut sim = Simulation::new(&spec)?;
        let layer = sim.add_layer(default_layer(&spec))?.unwrap_or(0);
        let mut records = Vec::with_capacity(times.len());
        for &t in &times {
            sim.advance_to(t)?;
            records.push(FrontRecord::capture(sim.layer(layer), sim.world(), dirs));
        }
        let b_tilde = keep_b_tilde.then(|| sim.layer(layer).b_tilde(t_end));
        Ok(ReplicaFronts {
            index,
            seed,
            events: sim.events(),
            breach: sim.breach(),
            designated: sim.layer(layer).designated,
            records,
            b_tilde,
        })
    });
    Ok(FrontBank { directions: dirs.to_vec(), times, replicas: results.into_iter().collect::<Result<_>>()? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedSample {
    pub replica: u64,
    pub time: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub u: Direction,
    /// Mean of `H(n_last,u)/n_last` over clean replicas.
    pub point: f64,
    pub stderr: f64,
    pub n_last: f64,
    pub replicas_used: usize,
    /// Same mean at `n_last/2`; `|point − half_point|` is the convergence diagnostic.
    pub half_point: f64,
    pub samples: Vec<SpeedSample>,
    pub flagged_replicas: Vec<u64>,
}

impl LambdaEstimate {
    pub fn cauchy_gap(&self) -> f64 {
        (self.point - self.half_point).abs()
    }
}

/// Sample mean and standard error (sd/√n, sd with n−1).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    use statrs::statistics::Statistics;
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.mean();
    if n < 2 {
        return (mean, 0.0);
    }
    (mean, xs.std_dev() / (n as f64).sqrt())
}

/// Times at which a speed bank must be observed.
pub fn estimation_times(schedule: &Schedule) -> Vec<f64> {
    let mut t = schedule.as_times();
    t.push(schedule.last() as f64 / 2.0);
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Per-direction estimates from a bank recorded at [`estimation_times`].
pub fn estimate_from_bank(bank: &FrontBank, schedule: &Schedule) -> Result<Vec<LambdaEstimate>> {
    let n_last = schedule.last() as f64;
    let half = n_last / 2.0;
    let at = |t: f64| {
        bank.times
            .iter()
            .position(|&s| s == t)
            .ok_or_else(|| Error::InvalidArgument(format!("bank has no snapshot at {t}")))
    };
    let i_last = at(n_last)?;
    let i_half = at(half)?;
    let sched_idx: Vec<usize> = schedule.as_times().into_iter().map(at).collect::<Result<_>>()?;
    let clean: Vec<&ReplicaFronts> = bank.clean().collect();
    if clean.is_empty() {
        return Err(Error::AllReplicasFlagged(bank.replicas.len()));
    }
    let flagged = bank.flagged();
    let speed = |r: &ReplicaFronts, i: usize, d: usize| -> Result<f64> {
        let rec = &r.records[i];
        rec.extents[d].map(|h| h / rec.t).ok_or(Error::NoBParticles(rec.t))
    };
    let mut out = Vec::with_capacity(bank.directions.len());
    for (d, u) in bank.directions.iter().enumerate() {
        let last: Vec<f64> = clean.iter().map(|r| speed(r, i_last, d)).collect::<Result<_>>()?;
        let halfs: Vec<f64> = clean.iter().map(|r| speed(r, i_half, d)).collect::<Result<_>>()?;
        let mut samples = Vec::new();
        for r in &clean {
            for &i in &sched_idx {
                samples.push(SpeedSample { replica: r.index, time: bank.times[i], speed: speed(r, i, d)? });
            }
        }
        let (point, stderr) = mean_stderr(&last);
        out.push(LambdaEstimate {
            u: *u,
            point,
            stderr,
            n_last,
            replicas_used: clean.len(),
            half_point: mean_stderr(&halfs).0,
            samples,
            flagged_replicas: flagged.clone(),
        });
    }
    Ok(out)
}

/// Full-space bank of replicas `0..replicas` observed at
/// [`estimation_times`]; `B̃` at the last time is kept when asked for.
pub fn estimate_bank(
    template: &ProcessSpec,
    dirs: &[Direction],
    schedule: &Schedule,
    replicas: usize,
    keep_b_tilde: bool,
    exec: Execution,
) -> Result<FrontBank> {
    if replicas < MIN_REPLICAS {
        return Err(Error::InsufficientReplicas { needed: MIN_REPLICAS, got: replicas });
    }
    let n_last = schedule.last() as f64;
    if template.horizon < n_last {
        return Err(Error::InvalidArgument(format!(
            "horizon {} is shorter than the last schedule time {n_last}",
            template.horizon
        )));
    }
    let spec = template.clone().with_mode(ProcessMode::FullSpace);
    front_bank(&spec, dirs, &estimation_times(schedule), 0, replicas, keep_b_tilde, exec)
}

/// Full-space speed estimates for every direction in `dirs` from one shared
/// bank of `replicas` runs.
pub fn estimate_lambdas(
    template: &ProcessSpec,
    dirs: &[Direction],
    schedule: &Schedule,
    replicas: usize,
    exec: Execution,
) -> Result<(Vec<LambdaEstimate>, FrontBank)> {
    let bank = estimate_bank(template, dirs, schedule, replicas, false, exec)?;
    Ok((estimate_from_bank(&bank, schedule)?, bank))
}

pub fn estimate_lambda(
    u: &Direction,
    template: &ProcessSpec,
    schedule: &Schedule,
    replicas: usize,
    exec: Execution,
) -> Result<LambdaEstimate> {
    let (mut v, _) = estimate_lambdas(template, std::slice::from_ref(u), schedule, replicas, exec)?;
    Ok(v.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub c_lower: f64,
    pub c_upper: f64,
    /// Of a least-squares line through outer radius against time; 1 when
    /// the radii do not vary.
    pub r_squared: f64,
    pub points: usize,
}

/// Minimum number of fit points past burn-in.
pub const MIN_FIT_POINTS: usize = 10;

/// Fits `(t, outer, inner)` radius records on `t ≥ horizon/4`.
pub fn growth_fit(series: &[(f64, i64, i64)], horizon: f64) -> Result<GrowthFit> {
    let pts: Vec<(f64, f64, f64)> = series
        .iter()
        .filter(|(t, _, _)| *t > 0.0 && *t >= horizon / 4.0)
        .map(|&(t, o, i)| (t, o as f64, i as f64))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InvalidArgument(format!(
            "growth fit needs {MIN_FIT_POINTS} points past t = {}, got {}",
            horizon / 4.0,
            pts.len()
        )));
    }
    let c_upper = pts.iter().map(|(t, o, _)| o / t).fold(f64::NEG_INFINITY, f64::max);
    let c_lower = pts.iter().map(|(t, _, i)| i / t).fold(f64::INFINITY, f64::min);
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mr = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let str_: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mr)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mr).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        let slope = if stt > 0.0 { str_ / stt } else { 0.0 };
        let ss_res: f64 = pts.iter().map(|p| (p.1 - mr - slope * (p.0 - mt)).powi(2)).sum();
        1.0 - ss_res / ss_tot
    };
    Ok(GrowthFit { c_lower, c_upper, r_squared, points: pts.len() })
}

/// `points` equally spaced times on `[horizon/4, horizon]`.
pub fn fit_times(horizon: f64, points: usize) -> Vec<f64> {
    let a = horizon / 4.0;
    if points < 2 {
        return vec![horizon];
    }
    (0..points).map(|k| a + (horizon - a) * k as f64 / (points - 1) as f64).collect()
}

/// Growth fit of one layer's `B̃` on `points` equally spaced times.
pub fn growth_fit_layer(layer: &crate::sim::TypeTimeline, dim: usize, horizon: f64, points: usize) -> Result<GrowthFit> {
    growth_fit(&radius_series(layer, dim, &fit_times(horizon, points)), horizon)
}
