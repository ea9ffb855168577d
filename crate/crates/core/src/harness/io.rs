//! On-disk formats. Series are CSV with `# key=value` header lines; configs,
//! snapshots and reports are JSON. Every file carries the schema version and
//! the hash of the configuration that produced it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dsmc::Frame;
use crate::error::{Error, Result};
use crate::observables::{MomentSeries, VelocityHistogram};

use super::config::SCHEMA_VERSION;

pub const CONFIG_FILE: &str = "config.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const TRANSFERRED_FILE: &str = "transferred.csv";
pub const DISSIPATION_FILE: &str = "dissipation.csv";
pub const QCHECK_FILE: &str = "qcheck.csv";
pub const JENSEN_FILE: &str = "jensen.csv";
pub const OPERATOR_FILE: &str = "operator_values.csv";
pub const STABILITY_FILE: &str = "stability.csv";
pub const TIMINGS_FILE: &str = "timings.json";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PLOT_ENERGY_FILE: &str = "plot_energy.py";
pub const PLOT_TAIL_FILE: &str = "plot_tail.py";

/// Provenance stamped on every file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

/// Ordered `key=value` header of a CSV file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    pub entries: Vec<(String, String)>,
}

impl Header {
    pub fn new(kind: &str, stamp: &Stamp) -> Self {
        let mut h = Header::default();
        h.set("schema_version", SCHEMA_VERSION);
        h.set("kind", kind);
        h.set("config_hash", &stamp.config_hash);
        h.set("seed", stamp.seed);
        h
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require(&self, path: &Path, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::parse(path, format!("header lacks `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T> {
        let raw = self.require(path, key)?;
        raw.parse().map_err(|_| Error::parse(path, format!("header `{key}` has invalid value {raw:?}")))
    }

    pub fn stamp(&self) -> Option<Stamp> {
        Some(Stamp { config_hash: self.get("config_hash")?.to_string(), seed: self.get("seed")?.parse().ok()? })
    }
}

/// A parsed CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Header,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub path: PathBuf,
}

impl Table {
    fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::parse(&self.path, format!("missing column `{name}`")))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c == name)
    }

    pub fn strings(&self, name: &str) -> Result<Vec<String>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r[i].parse::<f64>().map_err(|_| {
                    Error::parse(&self.path, format!("row {}: `{name}` is not a number: {:?}", k + 1, r[i]))
                })
            })
            .collect()
    }
}

/// Writes a CSV table with its header block.
pub fn write_table(path: &Path, header: &Header, columns: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    for (k, v) in &header.entries {
        writeln!(buf, "# {k}={v}").expect("write to memory");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(columns).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = Header::default();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((k, v)) = rest.split_once('=') {
                header.entries.push((k.trim().to_string(), v.trim().to_string()));
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    if let Some(v) = header.get("schema_version") {
        if v != SCHEMA_VERSION.to_string() {
            return Err(Error::parse(path, format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})")));
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let columns: Vec<String> =
        reader.headers().map_err(|e| Error::parse(path, e.to_string()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, columns, rows, path: path.to_path_buf() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Shortest round-trip text of `x`, in exponent form outside `[1e-4, 1e15)`.
pub fn f(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn frame_of(path: &Path, s: &str) -> Result<Frame> {
    match s {
        "original" => Ok(Frame::Original),
        "rescaled" => Ok(Frame::Rescaled),
        other => Err(Error::parse(path, format!("unknown frame {other:?}"))),
    }
}

fn momentum_name(i: usize) -> String {
    match i {
        0 => "px".into(),
        1 => "py".into(),
        2 => "pz".into(),
        3 => "pw".into(),
        _ => format!("p{i}"),
    }
}

/// Column name of the moment of order `p`, labelled by its degree `2p`.
fn moment_name(p: f64) -> String {
    format!("m{}", 2.0 * p)
}

/// Writes a moment series. `source_time`, when given, adds the time each
/// row was mapped from (transferred series).
pub fn write_moments(path: &Path, series: &MomentSeries, stamp: &Stamp, source_time: Option<&[f64]>) -> Result<()> {
    let mut header = Header::new(if source_time.is_some() { "transferred" } else { "moments" }, stamp);
    header.set("dimension", series.dimension);
    header.set("frame", series.frame.name());
    let mut columns = vec!["t".to_string()];
    if source_time.is_some() {
        columns.push("source_time".into());
    }
    columns.push("mass".into());
    columns.extend((0..series.dimension).map(momentum_name));
    columns.push("energy".into());
    columns.extend(series.orders.iter().map(|p| moment_name(*p)));
    let rows: Vec<Vec<String>> = (0..series.len())
        .map(|i| {
            let mut r = vec![f(series.times[i])];
            if let Some(s) = source_time {
                r.push(f(s[i]));
            }
            r.push(f(series.mass[i]));
            r.extend(series.momentum[i].iter().map(|x| f(*x)));
            r.push(f(series.energy[i]));
            r.extend(series.m.iter().map(|c| f(c[i])));
            r
        })
        .collect();
    write_table(path, &header, &columns, &rows)
}

/// A moment file read back.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentsFile {
    pub series: MomentSeries,
    pub source_time: Option<Vec<f64>>,
    pub stamp: Option<Stamp>,
}

pub fn read_moments(path: &Path) -> Result<MomentsFile> {
    let table = read_table(path)?;
    let dimension: usize = table.header.parse(path, "dimension")?;
    let frame = frame_of(path, table.header.require(path, "frame")?)?;
    let orders: Vec<f64> = table
        .columns
        .iter()
        .filter(|c| c.starts_with('m') && c.as_str() != "mass")
        .map(|c| {
            c[1..].parse::<f64>().map(|d| d / 2.0).map_err(|_| Error::parse(path, format!("bad moment column {c:?}")))
        })
        .collect::<Result<_>>()?;
    let mut series = MomentSeries::new(frame, dimension, &orders);
    series.times = table.floats("t")?;
    series.mass = table.floats("mass")?;
    series.energy = table.floats("energy")?;
    let cols: Vec<Vec<f64>> = (0..dimension).map(|i| table.floats(&momentum_name(i))).collect::<Result<_>>()?;
    series.momentum = (0..series.times.len()).map(|k| cols.iter().map(|c| c[k]).collect()).collect();
    series.m = orders.iter().map(|p| table.floats(&moment_name(*p))).collect::<Result<_>>()?;
    let source_time = if table.has_column("source_time") { Some(table.floats("source_time")?) } else { None };
    Ok(MomentsFile { series, source_time, stamp: table.header.stamp() })
}

/// File name of a histogram at time `t`; sorts by time.
pub fn histogram_name(prefix: &str, t: f64) -> String {
    format!("{prefix}_t{t:010.4}.csv")
}

pub fn write_histogram(path: &Path, hist: &VelocityHistogram, stamp: &Stamp) -> Result<()> {
    let mut header = Header::new("histogram", stamp);
    header.set("dimension", hist.dimension);
    header.set("axis", hist.axis.map(|a| a.to_string()).unwrap_or_else(|| "radial".into()));
    header.set("frame", hist.frame.name());
    header.set("time", f(hist.time));
    header.set("total_mass", f(hist.total_mass));
    header.set("overflow_mass", f(hist.overflow_mass));
    header.set("energy", f(hist.energy));
    let columns: Vec<String> = ["r_lo", "r_hi", "density", "count"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = (0..hist.bins())
        .map(|i| vec![f(hist.edges[i]), f(hist.edges[i + 1]), f(hist.density[i]), hist.counts[i].to_string()])
        .collect();
    write_table(path, &header, &columns, &rows)
}

pub fn read_histogram(path: &Path) -> Result<VelocityHistogram> {
    let table = read_table(path)?;
    let h = &table.header;
    let axis = match h.require(path, "axis")? {
        "radial" => None,
        a => Some(a.parse().map_err(|_| Error::parse(path, format!("bad axis {a:?}")))?),
    };
    let lo = table.floats("r_lo")?;
    let hi = table.floats("r_hi")?;
    if lo.is_empty() {
        return Err(Error::parse(path, "histogram has no bins"));
    }
    let mut edges = lo.clone();
    edges.push(*hi.last().expect("nonempty"));
    let counts = table
        .strings("count")?
        .iter()
        .map(|c| c.parse::<u64>().map_err(|_| Error::parse(path, format!("bad count {c:?}"))))
        .collect::<Result<_>>()?;
    Ok(VelocityHistogram {
        dimension: h.parse(path, "dimension")?,
        axis,
        edges,
        density: table.floats("density")?,
        counts,
        total_mass: h.parse(path, "total_mass")?,
        overflow_mass: h.parse(path, "overflow_mass")?,
        energy: h.parse(path, "energy")?,
        frame: frame_of(path, h.require(path, "frame")?)?,
        time: h.parse(path, "time")?,
    })
}

/// Histogram files in `dir` whose names start with `prefix`, by time.
pub fn list_histograms(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with(&format!("{prefix}_t")) && name.ends_with(".csv") {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Velocities at one instant, as written to `snapshot_t*.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub frame: Frame,
    pub time: f64,
    pub weight: f64,
    pub velocities: Vec<Vec<f64>>,
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{t:010.4}.json")
}
