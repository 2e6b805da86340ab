//! Execution of a resolved replay config. Replica work runs on the pool;
//! every file is written afterwards from the calling thread through one
//! [`RunDir`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use shapelab_core::estimate::{estimate_bank, estimate_from_bank, Schedule};
use shapelab_core::io::{
    directions_csv, fronts_csv, lambda_csv, shape_svg, summary_csv, Csv, EventLogWriter, ReplayConfig,
    ReplicaRecord, RunManifest, ShapeDocument,
};
use shapelab_core::observables::{b_sets, count_fields, FrontRecord};
use shapelab_core::properties::{
    axis_lambda_min, check_halfspace_nesting, check_monotone_coupling, check_no_a_behind_front,
    check_poisson_marginals, check_positive_speed, check_superconvolutivity, coupling_setup, PropertyReport,
    StreamPlan, Verdict, PROPERTY_IDS,
};
use shapelab_core::replicas::{run_bank, Execution};
use shapelab_core::shape::build_shape;
use shapelab_core::sim::{default_layer, EventRecorder, JumpEvent};
use shapelab_core::{Direction, ProcessMode, ProcessSpec, Simulation};

/// Exit status of a finished command.
pub type Status = i32;

/// Usage errors (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// The only writer of a run directory.
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        self.put(name, csv.as_str().as_bytes())
    }
}

fn param<'a>(replay: &'a ReplayConfig, key: &str) -> &'a Value {
    replay.params.get(key).unwrap_or(&Value::Null)
}

fn param_f64(replay: &ReplayConfig, key: &str) -> Option<f64> {
    param(replay, key).as_f64()
}

fn schedule(replay: &ReplayConfig) -> Result<&Schedule> {
    replay.schedule.as_ref().context("this command needs a schedule in its config")
}

/// Rejects property ids before anything runs.
pub fn check_property_ids(replay: &ReplayConfig) -> Result<Vec<String>> {
    let only: Vec<String> = match param(replay, "only") {
        Value::Array(v) => v.iter().filter_map(|s| s.as_str().map(str::to_string)).collect(),
        _ => PROPERTY_IDS.iter().map(|s| s.to_string()).collect(),
    };
    if only.is_empty() {
        return Err(UsageError("no property selected".into()).into());
    }
    for id in &only {
        if !PROPERTY_IDS.contains(&id.as_str()) {
            return Err(UsageError(format!("unknown property `{id}` (known: {})", PROPERTY_IDS.join(", "))).into());
        }
    }
    Ok(only)
}

/// Runs `replay` into `out` and returns the exit status.
pub fn execute(replay: ReplayConfig, out: &Path, exec: Execution) -> Result<Status> {
    if replay.command == "verify" {
        check_property_ids(&replay)?;
    }
    let started = Instant::now();
    let mut manifest = RunManifest::new(replay);
    let mut dir = RunDir::create(out)?;
    let status = match manifest.replay.command.as_str() {
        "simulate" => simulate(&mut manifest, &mut dir, exec)?,
        "estimate" => estimate(&mut manifest, &mut dir, exec)?,
        "verify" => verify(&mut manifest, &mut dir, exec)?,
        other => bail!("manifest names unknown command `{other}`"),
    };
    manifest.metrics.wall_clock_seconds = started.elapsed().as_secs_f64();
    dir.put("manifest.json", manifest.to_json().as_bytes())?;
    eprintln!("wrote {} files to {}", dir.written.len(), out.display());
    Ok(status)
}

fn record_times(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).filter(|&t| t <= horizon).collect();
    if times.last() != Some(&horizon) {
        times.push(horizon);
    }
    times
}

struct SimulateReplica {
    record: ReplicaRecord,
    fronts: Vec<FrontRecord>,
    summary: Vec<(&'static str, String)>,
    log: Option<Result<Vec<u8>, usize>>,
}

fn simulate(manifest: &mut RunManifest, dir: &mut RunDir, exec: Execution) -> Result<Status> {
    let replay = &manifest.replay;
    let hash = manifest.manifest_hash.clone();
    let dt = param_f64(replay, "record_dt").unwrap_or(1.0);
    if !(dt > 0.0) {
        bail!("record_dt must be positive");
    }
    let want_log = param(replay, "event_log").as_bool().unwrap_or(false);
    let times = record_times(replay.spec.horizon, dt);
    let dirs = &replay.directions;
    let template = &replay.spec;
    let results = run_bank(template.seed, 0, replay.replicas, exec, |index, seed| -> Result<SimulateReplica> {
        let spec = template.clone().with_seed(seed);
        let mut sim = Simulation::new(&spec)?;
        let layer = sim.add_layer(default_layer(&spec))?.unwrap_or(0);
        let mut recorder = EventRecorder::new();
        let mut fronts = Vec::with_capacity(times.len());
        for &t in &times {
            if want_log {
                sim.advance_to_with(t, |ev: &JumpEvent| recorder.record(ev))?;
            } else {
                sim.advance_to(t)?;
            }
            fronts.push(FrontRecord::capture(sim.layer(layer), sim.world(), dirs));
        }
        let log = if !want_log {
            None
        } else if recorder.overflowed {
            Some(Err(recorder.cap))
        } else {
            let mut w = EventLogWriter::new(Vec::new(), &spec)?;
            for ev in &recorder.events {
                w.record(ev)?;
            }
            Some(Ok(w.finish()?))
        };
        let tl = sim.layer(layer);
        let counts = count_fields(tl, sim.world());
        let b = b_sets(tl, spec.dim, spec.horizon);
        let summary = vec![
            ("t", shapelab_core::io::fmt_f64(spec.horizon)),
            ("mode", spec.mode.label().to_string()),
            ("particles", sim.world().len().to_string()),
            ("a_particles", counts.n_a.values().map(|&c| c as u64).sum::<u64>().to_string()),
            ("b_particles", counts.n_b.values().map(|&c| c as u64).sum::<u64>().to_string()),
            ("b_visited_sites", tl.b_tilde(spec.horizon).len().to_string()),
            ("outer_radius", b.outer_radius().to_string()),
            ("inner_radius", b.inner_radius().to_string()),
            ("events", sim.events().to_string()),
            ("containment_ok", sim.breach().is_none().to_string()),
        ];
        Ok(SimulateReplica {
            record: ReplicaRecord {
                index,
                seed,
                events: sim.events(),
                containment_ok: sim.breach().is_none(),
                breach_time: sim.breach().map(|b| b.0),
            },
            fronts,
            summary,
            log,
        })
    });
    dir.csv("directions.csv", &directions_csv(&hash, dirs))?;
    for r in results {
        let r = r?;
        let i = r.record.index;
        dir.csv(&format!("fronts_{i}.csv"), &fronts_csv(&hash, &r.fronts))?;
        dir.csv(&format!("final_state_{i}.csv"), &summary_csv(&hash, "final_state", &r.summary))?;
        match r.log {
            Some(Ok(bytes)) => dir.put(&format!("events_{i}.bin"), &bytes)?,
            Some(Err(cap)) => eprintln!("warning: replica {i} exceeded {cap} events, event log skipped"),
            None => {}
        }
        if !r.record.containment_ok {
            eprintln!("warning: replica {i} breached the containment guard");
        }
        manifest.metrics.events += r.record.events;
        manifest.replicas.push(r.record);
    }
    Ok(0)
}

fn estimate(manifest: &mut RunManifest, dir: &mut RunDir, exec: Execution) -> Result<Status> {
    let replay = &manifest.replay;
    let hash = manifest.manifest_hash.clone();
    let schedule = schedule(replay)?;
    let d = replay.spec.dim;
    let bank = estimate_bank(&replay.spec, &replay.directions, schedule, replay.replicas, d == 2, exec)?;
    let estimates = estimate_from_bank(&bank, schedule)?;
    let lambdas: Vec<f64> = estimates.iter().map(|e| e.point).collect();
    let shape = build_shape(&replay.directions, &lambdas)?;
    dir.csv("directions.csv", &directions_csv(&hash, &replay.directions))?;
    dir.csv("lambda.csv", &lambda_csv(&hash, &estimates))?;
    let seeds = bank.replicas.iter().map(|r| r.seed).collect();
    dir.put("shape.json", ShapeDocument::new(&hash, &shape, &estimates, seeds).to_json().as_bytes())?;
    if d == 2 {
        let cloud = bank.replicas.iter().find(|r| !r.flagged()).and_then(|r| r.b_tilde.clone()).unwrap_or_default();
        dir.put("shape.svg", shape_svg(&hash, &shape, &cloud, schedule.last() as f64)?.as_bytes())?;
    }
    let gap = estimates.iter().map(|e| e.cauchy_gap()).fold(0.0, f64::max);
    eprintln!("largest |λ(n) - λ(n/2)| over directions: {gap:.4}");
    if d == 1 && estimates.len() == 2 {
        eprintln!("λ(+e1) - λ(-e1) = {:.4}", estimates[0].point - estimates[1].point);
    }
    if !bank.flagged().is_empty() {
        eprintln!("warning: {} replicas breached the containment guard", bank.flagged().len());
    }
    for r in &bank.replicas {
        manifest.metrics.events += r.events;
        manifest.replicas.push(ReplicaRecord {
            index: r.index,
            seed: r.seed,
            events: r.events,
            containment_ok: !r.flagged(),
            breach_time: r.breach.map(|b| b.0),
        });
    }
    Ok(0)
}

fn full_space(spec: &ProcessSpec) -> ProcessSpec {
    spec.clone().with_mode(ProcessMode::FullSpace)
}

fn run_property(id: &str, replay: &ReplayConfig, exec: Execution) -> Result<PropertyReport> {
    let spec = &replay.spec;
    let n = replay.replicas;
    let u: Direction = serde_json::from_value(param(replay, "u").clone()).context("verify: u")?;
    let t = param_f64(replay, "t").unwrap_or(spec.horizon / 2.0);
    let report = match id {
        "coupling" => {
            let (s, pairs) = coupling_setup(spec);
            check_monotone_coupling(&s, &pairs, StreamPlan::Shared, n, exec)?
        }
        "nesting" => {
            let r1 = param_f64(replay, "r1").unwrap_or(2.0);
            let r2 = param_f64(replay, "r2");
            check_halfspace_nesting(spec, &u, r1, r2, n, 20 * n, exec)?
        }
        "poisson" => check_poisson_marginals(&full_space(spec), t, n, 0.95, exec)?,
        "no_a_behind_front" => {
            let t = param_f64(replay, "t").unwrap_or(spec.horizon);
            let shrink = param_f64(replay, "shrink").unwrap_or(0.5);
            let lambda_min = axis_lambda_min(spec, t, n.max(16), exec)?;
            check_no_a_behind_front(&full_space(spec), t, shrink, lambda_min, n, 0.9, exec)?
        }
        "superconvolutivity" => {
            let s = param_f64(replay, "s").unwrap_or(t);
            let bank = param(replay, "bank_replicas").as_u64().map(|b| b as usize).unwrap_or(n);
            check_superconvolutivity(spec, &u, s, t, replay.c5, replay.c6, bank, exec)?
        }
        "positive_speed" => check_positive_speed(spec, &u, schedule(replay)?, replay.c5, n, exec)?,
        other => return Err(UsageError(format!("unknown property `{other}`")).into()),
    };
    Ok(report)
}

fn verify(manifest: &mut RunManifest, dir: &mut RunDir, exec: Execution) -> Result<Status> {
    let hash = manifest.manifest_hash.clone();
    let ids = check_property_ids(&manifest.replay)?;
    let mut reports = Vec::new();
    for id in &ids {
        let started = Instant::now();
        let r = run_property(id, &manifest.replay, exec).with_context(|| format!("property {id}"))?;
        eprintln!(
            "{:<20} {:<8} statistic={} threshold={} ({:.1}s)",
            r.id,
            r.verdict.as_str(),
            r.statistic,
            r.threshold,
            started.elapsed().as_secs_f64()
        );
        reports.push(r);
    }
    let mut csv = Csv::new(
        "verify",
        &hash,
        &["property", "verdict", "statistic", "threshold", "replicas", "flagged", "skipped"],
    );
    for r in &reports {
        csv.row(&[
            r.id.clone(),
            r.verdict.as_str().to_string(),
            shapelab_core::io::fmt_f64(r.statistic),
            shapelab_core::io::fmt_f64(r.threshold),
            r.replicas.to_string(),
            r.flagged.to_string(),
            r.skipped.to_string(),
        ]);
    }
    dir.csv("verify.csv", &csv)?;
    let doc = json!({ "manifest_hash": hash, "properties": reports });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    dir.put("report.json", text.as_bytes())?;
    let failed = reports.iter().any(|r| r.verdict != Verdict::Pass);
    Ok(if failed { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_times_include_horizon() {
        assert_eq!(record_times(2.5, 1.0), vec![0.0, 1.0, 2.0, 2.5]);
        assert_eq!(record_times(2.0, 1.0), vec![0.0, 1.0, 2.0]);
    }
}
