//! Run reports and generated plot scripts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::observables::CheckOutcome;

use super::config::SCHEMA_VERSION;
use super::io::{self, Stamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub thread_cap: usize,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            thread_cap: crate::dsmc::thread_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: String,
    pub config_hash: String,
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
    /// Reported quantities that are not asserted.
    pub observations: BTreeMap<String, Value>,
    pub environment: Environment,
    pub timings: Vec<Timing>,
}

impl RunReport {
    pub fn new(mode: &str, stamp: &Stamp) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            mode: mode.to_string(),
            config_hash: stamp.config_hash.clone(),
            seed: stamp.seed,
            checks: Vec::new(),
            observations: BTreeMap::new(),
            environment: Environment::current(),
            timings: Vec::new(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&mut self, outcome: CheckOutcome) {
        self.checks.push(outcome);
    }

    pub fn observe(&mut self, key: &str, value: impl Serialize) {
        self.observations.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn find(&self, check: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.check == check)
    }

    /// Human-readable summary, one line per check.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "config_hash: {}", self.config_hash);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s);
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{}  {:<34} value={:<14.6e} tolerance={:<12.4e} {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.check,
                c.value,
                c.tolerance,
                c.paper_ref
            );
        }
        if !self.observations.is_empty() {
            let _ = writeln!(s, "\nobservations:");
            for (k, v) in &self.observations {
                let _ = writeln!(s, "  {k}: {v}");
            }
        }
        if !self.timings.is_empty() {
            let _ = writeln!(s, "\ntimings:");
            for t in &self.timings {
                let _ = writeln!(s, "  {:<20} {:.3} s", t.stage, t.seconds);
            }
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        let _ = writeln!(s, "\n{passed}/{} checks passed", self.checks.len());
        s
    }
}

fn energy_script(stamp: &Stamp, moments: &str, window: Option<(f64, f64)>, slope: Option<f64>) -> String {
    let window = window.map(|(a, b)| format!("({a}, {b})")).unwrap_or_else(|| "None".into());
    let slope = slope.map(|s| s.to_string()).unwrap_or_else(|| "None".into());
    format!(
        r##"#!/usr/bin/env python3
# Log-log energy plot. config_hash={hash}
import sys
import numpy as np
import matplotlib.pyplot as plt

MOMENTS = "{moments}"
WINDOW = {window}
REPORTED_SLOPE = {slope}

def load(path):
    with open(path) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    names = lines[0].strip().split(",")
    data = np.array([[float(x) for x in l.strip().split(",")] for l in lines[1:]])
    return {{n: data[:, i] for i, n in enumerate(names)}}

cols = load(sys.argv[1] if len(sys.argv) > 1 else MOMENTS)
t, energy = cols["t"], cols["energy"]
x, y = np.log1p(t), np.log(energy)
fig, ax = plt.subplots()
ax.plot(x, y, ".", ms=3, label="log E")
if WINDOW is not None:
    sel = (t >= WINDOW[0]) & (t <= WINDOW[1])
    if sel.sum() >= 3:
        k, c = np.polyfit(x[sel], y[sel], 1)
        ax.plot(x[sel], k * x[sel] + c, "-", label=f"fit slope {{k:.3f}}")
        ax.plot(x[sel], -2.0 * x[sel] + (y[sel] + 2.0 * x[sel]).mean(), "--", label="slope -2")
if REPORTED_SLOPE is not None:
    ax.set_title(f"reported slope {{REPORTED_SLOPE:.4f}}")
ax.set_xlabel("log(1 + t)")
ax.set_ylabel("log E")
ax.legend()
fig.savefig("energy.png", dpi=150)
"##,
        hash = stamp.config_hash,
    )
}

fn tail_script(stamp: &Stamp, histogram: &str, window: Option<(f64, f64)>) -> String {
    let window = window.map(|(a, b)| format!("({a}, {b})")).unwrap_or_else(|| "None".into());
    format!(
        r##"#!/usr/bin/env python3
# Log-density tail plot against r and r^2. config_hash={hash}
import sys
import numpy as np
import matplotlib.pyplot as plt

HISTOGRAM = "{histogram}"
WINDOW = {window}

path = sys.argv[1] if len(sys.argv) > 1 else HISTOGRAM
with open(path) as fh:
    lines = [l for l in fh if not l.startswith("#")]
data = np.array([[float(x) for x in l.strip().split(",")] for l in lines[1:]])
r = 0.5 * (data[:, 0] + data[:, 1])
g = data[:, 2]
ok = g > 0
fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
a.plot(r[ok], np.log(g[ok]), ".")
a.set_xlabel("r")
a.set_ylabel("log g")
b.plot(r[ok] ** 2, np.log(g[ok]), ".")
b.set_xlabel("r^2")
if WINDOW is not None:
    for ax, f in ((a, lambda x: x), (b, lambda x: x * x)):
        for w in WINDOW:
            ax.axvline(f(w), color="gray", lw=0.5)
fig.tight_layout()
fig.savefig("tail.png", dpi=150)
"##,
        hash = stamp.config_hash,
    )
}

/// Plot-script hints gathered during analysis.
#[derive(Debug, Clone, Default)]
pub struct PlotHints {
    /// Moment file to plot, relative to the output directory.
    pub moments: Option<String>,
    pub haff_window: Option<(f64, f64)>,
    pub haff_slope: Option<f64>,
    pub histogram: Option<String>,
    pub tail_window: Option<(f64, f64)>,
}

/// Writes `summary.txt`, `report.json` and the plot scripts into `dir`.
pub fn write_report(dir: &Path, report: &RunReport, hints: &PlotHints, stamp: &Stamp) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(dir.join(io::SUMMARY_FILE), report.summary()).map_err(|e| Error::io(dir.join(io::SUMMARY_FILE), e))?;
    io::write_json(&dir.join(io::REPORT_FILE), report)?;
    if let Some(m) = &hints.moments {
        let p = dir.join(io::PLOT_ENERGY_FILE);
        fs::write(&p, energy_script(stamp, m, hints.haff_window, hints.haff_slope)).map_err(|e| Error::io(&p, e))?;
    }
    if let Some(h) = &hints.histogram {
        let p = dir.join(io::PLOT_TAIL_FILE);
        fs::write(&p, tail_script(stamp, h, hints.tail_window)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
