//! Flat TOML config merged with command-line flags into a replay config.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use shapelab_core::estimate::{direction_grid, geometric_schedule};
use shapelab_core::io::ReplayConfig;
use shapelab_core::sim::{guard_box, ProcessMode, DEFAULT_C_GUARD};
use shapelab_core::{Direction, MasterSeed, ProcessSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Original,
    Full,
    Half,
}

/// Keys accepted in a config file; every one can also be given as a flag.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dim: Option<usize>,
    pub mu: Option<f64>,
    pub rate: Option<f64>,
    pub horizon: Option<f64>,
    #[serde(rename = "box")]
    pub init_box: Option<u32>,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub mode: Option<ModeArg>,
    pub u: Option<String>,
    pub r: Option<f64>,
    pub c5: Option<f64>,
    pub c6: Option<f64>,
    pub c_guard: Option<f64>,
    pub eta: Option<f64>,
    pub n0: Option<u64>,
    pub kmax: Option<u32>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub event_log: Option<bool>,
    pub grid: Option<usize>,
    pub record_dt: Option<f64>,
    pub only: Option<String>,
    pub t: Option<f64>,
    pub s: Option<f64>,
    pub shrink: Option<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// Flat TOML file with any of the keys below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Mean initial particles per site.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Jump rate shared by both types.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Radius of the initial box (default: the guard rule value).
    #[arg(long = "box")]
    pub init_box: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Comma-separated direction components, normalized on input.
    #[arg(long, allow_hyphen_values = true)]
    pub u: Option<String>,
    /// Half-space offset for `--mode half`.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub c5: Option<f64>,
    #[arg(long)]
    pub c6: Option<f64>,
    #[arg(long = "c-guard")]
    pub c_guard: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub n0: Option<u64>,
    #[arg(long)]
    pub kmax: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for replica banks.
    #[arg(long, env = "SHAPELAB_WORKERS")]
    pub workers: Option<usize>,
    /// Also write a binary event log per replica.
    #[arg(long = "event-log", num_args = 0..=1, default_missing_value = "true")]
    pub event_log: Option<bool>,
    /// Number of equally spaced directions in d=2.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Spacing of front records.
    #[arg(long = "record-dt")]
    pub record_dt: Option<f64>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct VerifyFlags {
    /// Comma-separated property ids (default: all).
    #[arg(long)]
    pub only: Option<String>,
    /// Observation time of the poisson, front and superconvolutivity checks.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub shrink: Option<f64>,
    #[arg(long)]
    pub r1: Option<f64>,
    /// Larger half-space offset; `inf` compares with the full-space process.
    #[arg(long)]
    pub r2: Option<f64>,
}

/// Settings after merging flags over the config file over defaults.
pub struct Resolved {
    pub replay: ReplayConfig,
    pub out: PathBuf,
    pub workers: Option<usize>,
}

fn parse_direction(text: &str, dim: usize) -> Result<Direction> {
    let u: Direction = text.parse().map_err(|e| anyhow!("u: {e}"))?;
    if u.dim() != dim {
        bail!("u: expected {dim} components, got {}", u.dim());
    }
    Ok(u)
}

pub fn resolve(command: &str, flags: &Flags, verify: Option<&VerifyFlags>) -> Result<Resolved> {
    let file = match &flags.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };
    macro_rules! pick {
        ($field:ident, $default:expr) => {
            flags.$field.clone().or(file.$field.clone()).unwrap_or($default)
        };
    }
    macro_rules! pick_v {
        ($field:ident) => {
            verify.and_then(|v| v.$field.clone()).or(file.$field.clone())
        };
    }
    let dim = pick!(dim, 1);
    if dim == 0 || dim > shapelab_core::lattice::MAX_DIM {
        bail!("dim: must be in 1..={}", shapelab_core::lattice::MAX_DIM);
    }
    let horizon = pick!(horizon, 50.0);
    let c_guard = pick!(c_guard, DEFAULT_C_GUARD);
    let u = match flags.u.clone().or(file.u.clone()) {
        Some(text) => parse_direction(&text, dim)?,
        None => Direction::axis(dim, 0, true),
    };
    let r = pick!(r, 0.0);
    let mode = match pick!(mode, ModeArg::Full) {
        ModeArg::Original => ProcessMode::original_at_origin(dim),
        ModeArg::Full => ProcessMode::FullSpace,
        ModeArg::Half => ProcessMode::HalfSpaceStart { u, r },
    };
    let mut spec = ProcessSpec::new(dim, pick!(mu, 1.0), pick!(rate, 1.0), horizon, mode, MasterSeed(pick!(seed, 1)))
        .with_guard(c_guard);
    spec.init_box = flags.init_box.or(file.init_box).unwrap_or_else(|| guard_box(horizon, c_guard));
    spec.validate().map_err(|e| anyhow!("{e}"))?;

    let default_replicas = match command {
        "simulate" => 1,
        "estimate" => 16,
        _ => 100,
    };
    let explicit_replicas = flags.replicas.or(file.replicas);
    let replicas = explicit_replicas.unwrap_or(default_replicas);
    let grid = pick!(grid, 64);
    let directions = direction_grid(dim, grid).map_err(|e| anyhow!("grid: {e}"))?;
    let schedule = match command {
        "simulate" => None,
        _ => {
            let n0 = flags.n0.or(file.n0).unwrap_or(((horizon / 2.0).floor() as u64).max(2));
            let s = geometric_schedule(pick!(eta, 1.0), n0, pick!(kmax, 1)).map_err(|e| anyhow!("schedule: {e}"))?;
            if command == "estimate" && s.last() as f64 > horizon {
                bail!("schedule: last time {} exceeds horizon {horizon}", s.last());
            }
            Some(s)
        }
    };
    let params = match command {
        "simulate" => json!({
            "record_dt": pick!(record_dt, 1.0),
            "event_log": pick!(event_log, false),
        }),
        "estimate" => json!({ "grid": grid }),
        _ => {
            let only = pick_v!(only).unwrap_or_else(|| shapelab_core::properties::PROPERTY_IDS.join(","));
            let r2 = pick_v!(r2).unwrap_or(8.0);
            json!({
                "only": only.split(',').map(str::trim).filter(|s| !s.is_empty()).collect::<Vec<_>>(),
                "t": pick_v!(t),
                "s": pick_v!(s),
                "shrink": pick_v!(shrink).unwrap_or(0.5),
                "r1": pick_v!(r1).unwrap_or(2.0),
                "r2": if r2.is_finite() { json!(r2) } else { json!("inf") },
                "u": u,
                "bank_replicas": explicit_replicas.unwrap_or(replicas.max(shapelab_core::properties::MIN_BANK)),
            })
        }
    };
    let replay = ReplayConfig {
        command: command.to_string(),
        spec,
        c5: pick!(c5, 1.0),
        c6: pick!(c6, 4.0),
        directions,
        schedule,
        replicas,
        params,
    };
    Ok(Resolved {
        replay,
        out: pick!(out, PathBuf::from(format!("shapelab-{command}"))),
        workers: flags.workers.or(file.workers),
    })
}
