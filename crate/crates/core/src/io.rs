//! Manifests, CSV tables, shape documents, SVG figures and event logs.
//!
//! Every file carries the hash of the replay section of its run manifest.
//! The hash covers inputs only, so a replay from the manifest reproduces it
//! and with it every output byte.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimate::{LambdaEstimate, Schedule};
use crate::lattice::{Direction, LatticePoint};
use crate::observables::FrontRecord;
use crate::shape::ShapeEstimate;
use crate::sim::{JumpEvent, ProcessSpec};
use crate::streams::{MasterSeed, STREAM_ALGORITHM, STREAM_VERSION};

pub const ARTIFACT: &str = "shapelab";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn spec_digest(spec: &ProcessSpec) -> [u8; 32] {
    let json = serde_json::to_vec(spec).expect("specs serialize");
    Sha256::digest(&json).into()
}

/// Everything a replay needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub command: String,
    pub spec: ProcessSpec,
    pub c5: f64,
    pub c6: f64,
    pub directions: Vec<Direction>,
    pub schedule: Option<Schedule>,
    pub replicas: usize,
    /// Command-specific settings.
    #[serde(default)]
    pub params: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub index: u64,
    pub seed: MasterSeed,
    pub events: u64,
    pub containment_ok: bool,
    pub breach_time: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub wall_clock_seconds: f64,
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub artifact_version: String,
    pub stream_algorithm: String,
    pub stream_version: u32,
    pub manifest_hash: String,
    pub replay: ReplayConfig,
    pub replicas: Vec<ReplicaRecord>,
    pub metrics: Metrics,
}

impl RunManifest {
    pub fn new(replay: ReplayConfig) -> Self {
        let manifest_hash = replay_hash(&replay);
        RunManifest {
            artifact: ARTIFACT.into(),
            artifact_version: ARTIFACT_VERSION.into(),
            stream_algorithm: STREAM_ALGORITHM.into(),
            stream_version: STREAM_VERSION,
            manifest_hash,
            replay,
            replicas: Vec::new(),
            metrics: Metrics::default(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifests serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("manifest: {e}")))?;
        if m.stream_algorithm != STREAM_ALGORITHM || m.stream_version != STREAM_VERSION {
            return Err(Error::InvalidArgument(format!(
                "manifest uses streams {} v{}, this build has {STREAM_ALGORITHM} v{STREAM_VERSION}",
                m.stream_algorithm, m.stream_version
            )));
        }
        let expect = replay_hash(&m.replay);
        if m.manifest_hash != expect {
            return Err(Error::InvalidArgument(format!(
                "manifest hash {} does not match its replay section ({expect})",
                m.manifest_hash
            )));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Hash of the replay section together with the artifact and stream versions.
pub fn replay_hash(replay: &ReplayConfig) -> String {
    let doc = serde_json::json!({
        "artifact": ARTIFACT,
        "artifact_version": ARTIFACT_VERSION,
        "stream_algorithm": STREAM_ALGORITHM,
        "stream_version": STREAM_VERSION,
        "replay": replay,
    });
    sha256_hex(&serde_json::to_vec(&doc).expect("replay configs serialize"))
}

/// A CSV table with the versioned header line.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(kind: &str, manifest_hash: &str, columns: &[&str]) -> Self {
        let mut buf = format!("# {ARTIFACT} {kind} v{CSV_SCHEMA_VERSION} manifest={manifest_hash}\n");
        buf.push_str(&columns.join(","));
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.buf)?;
        Ok(())
    }
}

/// Manifest hash named on the first line of a file written here.
pub fn embedded_hash(text: &str) -> Option<&str> {
    let first = text.lines().next()?;
    if let Some(pos) = first.find("manifest=") {
        return first[pos + 9..].split_whitespace().next();
    }
    // JSON documents carry it as a field.
    let start = text.find("\"manifest_hash\": \"")? + 18;
    text[start..].split('"').next()
}

pub fn components(u: &Direction) -> String {
    u.components().iter().map(|c| fmt_f64(*c)).collect::<Vec<_>>().join(";")
}

pub fn directions_csv(hash: &str, dirs: &[Direction]) -> Csv {
    let mut csv = Csv::new("directions", hash, &["dir_index", "u_components"]);
    for (i, u) in dirs.iter().enumerate() {
        csv.row(&[i.to_string(), components(u)]);
    }
    csv
}

/// `t,dir_index,extent`; the extent is empty where the layer had no B-particle.
pub fn fronts_csv(hash: &str, records: &[FrontRecord]) -> Csv {
    let mut csv = Csv::new("fronts", hash, &["t", "dir_index", "extent"]);
    for r in records {
        for (i, e) in r.extents.iter().enumerate() {
            csv.row(&[fmt_f64(r.t), i.to_string(), e.map(fmt_f64).unwrap_or_default()]);
        }
    }
    csv
}

pub fn lambda_csv(hash: &str, estimates: &[LambdaEstimate]) -> Csv {
    let mut csv =
        Csv::new("lambda", hash, &["dir_index", "u_components", "lambda", "stderr", "n_last", "replicas_used"]);
    for (i, e) in estimates.iter().enumerate() {
        csv.row(&[
            i.to_string(),
            components(&e.u),
            fmt_f64(e.point),
            fmt_f64(e.stderr),
            fmt_f64(e.n_last),
            e.replicas_used.to_string(),
        ]);
    }
    csv
}

/// Key-value summary rows.
pub fn summary_csv(hash: &str, kind: &str, rows: &[(&str, String)]) -> Csv {
    let mut csv = Csv::new(kind, hash, &["key", "value"]);
    for (k, v) in rows {
        csv.row(&[k.to_string(), v.clone()]);
    }
    csv
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeDocument {
    pub manifest_hash: String,
    pub dim: usize,
    pub directions: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub stderr: Vec<f64>,
    pub vertices: Option<Vec<Vec<f64>>>,
    pub seeds: Vec<MasterSeed>,
}

impl ShapeDocument {
    pub fn new(hash: &str, shape: &ShapeEstimate, estimates: &[LambdaEstimate], seeds: Vec<MasterSeed>) -> Self {
        ShapeDocument {
            manifest_hash: hash.into(),
            dim: shape.dim,
            directions: shape.directions.iter().map(|u| u.components().to_vec()).collect(),
            lambdas: shape.lambdas.clone(),
            stderr: estimates.iter().map(|e| e.stderr).collect(),
            vertices: shape.vertices.clone(),
            seeds,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("shape documents serialize");
        s.push('\n');
        s
    }
}

/// Planar shape polygon with the point cloud `cloud/t` overlaid.
pub fn shape_svg(hash: &str, shape: &ShapeEstimate, cloud: &[LatticePoint], t: f64) -> Result<String> {
    let Some(vertices) = shape.vertices.as_ref().filter(|_| shape.dim == 2) else {
        return Err(Error::DimensionUnsupported(shape.dim));
    };
    let mut extent = vertices.iter().flat_map(|v| [v[0].abs(), v[1].abs()]).fold(0.0, f64::max);
    for x in cloud {
        extent = extent.max((x.coord(0) as f64 / t).abs()).max((x.coord(1) as f64 / t).abs());
    }
    let extent = if extent > 0.0 { extent * 1.1 } else { 1.0 };
    let size = 600.0;
    let scale = size / (2.0 * extent);
    let map = |x: f64, y: f64| ((x + extent) * scale, (extent - y) * scale);
    let mut svg = String::new();
    let _ = writeln!(svg, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(svg, "<!-- {ARTIFACT} shape manifest={hash} -->");
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>");
    let (ox, oy) = map(0.0, 0.0);
    let _ = writeln!(svg, "<line x1=\"0\" y1=\"{oy:.3}\" x2=\"{size}\" y2=\"{oy:.3}\" stroke=\"#ccc\"/>");
    let _ = writeln!(svg, "<line x1=\"{ox:.3}\" y1=\"0\" x2=\"{ox:.3}\" y2=\"{size}\" stroke=\"#ccc\"/>");
    let r = (0.5 * scale / t).max(0.6);
    let _ = writeln!(svg, "<g fill=\"#4a7ab8\" fill-opacity=\"0.5\">");
    for x in cloud {
        let (px, py) = map(x.coord(0) as f64 / t, x.coord(1) as f64 / t);
        let _ = writeln!(svg, "<circle cx=\"{px:.3}\" cy=\"{py:.3}\" r=\"{r:.3}\"/>");
    }
    let _ = writeln!(svg, "</g>");
    let points: Vec<String> = vertices
        .iter()
        .map(|v| {
            let (px, py) = map(v[0], v[1]);
            format!("{px:.3},{py:.3}")
        })
        .collect();
    let _ = writeln!(
        svg,
        "<polygon points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\"/>",
        points.join(" ")
    );
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

const LOG_MAGIC: &[u8; 4] = b"SLEV";
const LOG_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EventLogHeader {
    pub dim: usize,
    pub spec_hash: [u8; 32],
    pub stream_algorithm: String,
    pub stream_version: u32,
}

/// Little-endian event log: magic, format, `d`, spec hash, stream id, then
/// records `(f64 time, u64 ordinal, i32×d from, i32×d to)`.
pub struct EventLogWriter<W: Write> {
    out: W,
    dim: usize,
    records: u64,
}

impl<W: Write> EventLogWriter<W> {
    pub fn new(mut out: W, spec: &ProcessSpec) -> Result<Self> {
        out.write_all(LOG_MAGIC)?;
        out.write_all(&LOG_FORMAT.to_le_bytes())?;
        out.write_all(&(spec.dim as u32).to_le_bytes())?;
        out.write_all(&spec_digest(spec))?;
        out.write_all(&(STREAM_ALGORITHM.len() as u16).to_le_bytes())?;
        out.write_all(STREAM_ALGORITHM.as_bytes())?;
        out.write_all(&STREAM_VERSION.to_le_bytes())?;
        Ok(EventLogWriter { out, dim: spec.dim, records: 0 })
    }

    pub fn record(&mut self, ev: &JumpEvent) -> Result<()> {
        let mut buf = [0u8; 16 + 8 * crate::lattice::MAX_DIM];
        buf[..8].copy_from_slice(&ev.time.to_le_bytes());
        buf[8..16].copy_from_slice(&(ev.who as u64).to_le_bytes());
        let mut at = 16;
        for p in [&ev.from, &ev.to] {
            for &c in p.coords() {
                buf[at..at + 4].copy_from_slice(&c.to_le_bytes());
                at += 4;
            }
        }
        self.out.write_all(&buf[..at])?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        debug_assert!(self.dim > 0);
        Ok(self.out)
    }
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_event_log(mut r: impl Read) -> Result<(EventLogHeader, Vec<JumpEvent>)> {
    let bad = |m: &str| Error::InvalidArgument(format!("event log: {m}"));
    if &read_exact::<4>(&mut r)? != LOG_MAGIC {
        return Err(bad("bad magic"));
    }
    if u32::from_le_bytes(read_exact(&mut r)?) != LOG_FORMAT {
        return Err(bad("unknown format version"));
    }
    let dim = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    if !(1..=crate::lattice::MAX_DIM).contains(&dim) {
        return Err(bad("bad dimension"));
    }
    let spec_hash = read_exact::<32>(&mut r)?;
    let len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let stream_algorithm = String::from_utf8(name).map_err(|_| bad("stream id is not UTF-8"))?;
    let stream_version = u32::from_le_bytes(read_exact(&mut r)?);
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let rec = 16 + 8 * dim;
    if rest.len() % rec != 0 {
        return Err(bad("truncated record"));
    }
    let coords = |b: &[u8]| -> LatticePoint {
        let v: Vec<i32> = b.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        LatticePoint::new(&v)
    };
    let events = rest
        .chunks_exact(rec)
        .map(|b| JumpEvent {
            time: f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
            who: u64::from_le_bytes(b[8..16].try_into().expect("8 bytes")) as u32,
            from: coords(&b[16..16 + 4 * dim]),
            to: coords(&b[16 + 4 * dim..]),
        })
        .collect();
    Ok((EventLogHeader { dim, spec_hash, stream_algorithm, stream_version }, events))
}
