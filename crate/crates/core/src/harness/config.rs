//! Experiment configuration: schema, validation, hashing and presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dsmc::{Frame, HistogramSpec, InitialCondition, SimConfig};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::operator::QuadratureSpec;
use crate::rescale::Direction;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Selfsim,
    Qcheck,
    Haff,
    Tail,
    Transfer,
    Report,
    Stability,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Selfsim => "selfsim",
            Mode::Qcheck => "qcheck",
            Mode::Haff => "haff",
            Mode::Tail => "tail",
            Mode::Transfer => "transfer",
            Mode::Report => "report",
            Mode::Stability => "stability",
        }
    }

    /// Frame used when the configuration does not name one.
    pub fn default_frame(self) -> Frame {
        match self {
            Mode::Simulate => Frame::Original,
            _ => Frame::Rescaled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub restitution: f64,
    pub kernel: KernelSpec,
    pub dimension: usize,
    pub mass: f64,
    pub c_star: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics { restitution: 0.8, kernel: KernelSpec::Isotropic, dimension: 3, mass: 1.0, c_star: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Half-width of the velocity grid; by default 8 thermal speeds.
    pub extent: Option<f64>,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { extent: None, points: 65 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub particles: usize,
    pub dt: Option<f64>,
    pub t_final: f64,
    pub frame: Option<Frame>,
    pub initial: InitialCondition,
    pub cadence: f64,
    pub histograms: HistogramSpec,
    pub replicas: usize,
    pub keep_snapshots: bool,
    pub quadrature: QuadratureSpec,
    pub grid: GridSpec,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            particles: 10_000,
            dt: None,
            t_final: 1.0,
            frame: None,
            initial: InitialCondition::default(),
            cadence: 0.1,
            histograms: HistogramSpec::default(),
            replicas: 1,
            keep_snapshots: false,
            quadrature: QuadratureSpec::default(),
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub directory: PathBuf,
    /// Include velocities in snapshot files.
    pub dump_velocities: bool,
}

impl Default for Output {
    fn default() -> Self {
        Output { directory: PathBuf::from("out"), dump_velocities: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analysis {
    pub haff_window: [f64; 2],
    pub tail_window: Option<[f64; 2]>,
    pub tail_candidates: Vec<f64>,
    pub t_transient: f64,
    pub invariant_t0: f64,
    pub invariant_inflate: f64,
    pub moment_a: f64,
    /// Radius of the positivity ball, split into `positivity_bins`
    /// equal-volume shells.
    pub positivity_radius: f64,
    pub positivity_bins: usize,
    pub t_star: f64,
    /// Pair of histogram times compared for stationarity.
    pub stationarity_times: [f64; 2],
    pub stationarity_tolerance: f64,
    pub perturbation: f64,
    pub dissipation_steps: usize,
    pub direction: Direction,
    /// Input file for `haff`, `tail`, `transfer` and `report`.
    pub input: Option<PathBuf>,
}

impl Default for Analysis {
    fn default() -> Self {
        Analysis {
            haff_window: [10.0, 100.0],
            tail_window: None,
            tail_candidates: vec![1.0, 2.0],
            t_transient: 3.0,
            invariant_t0: 5.0,
            invariant_inflate: 1.5,
            moment_a: 2.0,
            positivity_radius: 2.0,
            positivity_bins: 8,
            t_star: 1.0,
            stationarity_times: [8.0, 10.0],
            stationarity_tolerance: 0.05,
            perturbation: 0.01,
            dissipation_steps: 50,
            direction: Direction::GToF,
            input: None,
        }
    }
}

/// Analytic density for operator checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensitySpec {
    Gaussian {
        #[serde(default = "one")]
        mass: f64,
        #[serde(default)]
        mean: Vec<f64>,
        #[serde(default = "one")]
        temperature: f64,
    },
    Ball {
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default = "one")]
        radius: f64,
        #[serde(default = "one")]
        height: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec::Gaussian { mass: 1.0, mean: Vec::new(), temperature: 1.0 }
    }
}

impl DensitySpec {
    fn validate(&self, name: &str, dimension: usize, errs: &mut Vec<String>) {
        let check_vec = |v: &Vec<f64>, key: &str, errs: &mut Vec<String>| {
            if !v.is_empty() && v.len() != dimension {
                errs.push(format!("operator.{name}.{key} has {} components, expected {dimension}", v.len()));
            }
        };
        match self {
            DensitySpec::Gaussian { mass, mean, temperature } => {
                check_vec(mean, "mean", errs);
                if !(*mass > 0.0) {
                    errs.push(format!("operator.{name}.mass must be positive, got {mass}"));
                }
                if !(*temperature > 0.0) {
                    errs.push(format!("operator.{name}.temperature must be positive, got {temperature}"));
                }
            }
            DensitySpec::Ball { center, radius, height } => {
                check_vec(center, "center", errs);
                if !(*radius > 0.0) {
                    errs.push(format!("operator.{name}.radius must be positive, got {radius}"));
                }
                if !(*height > 0.0) {
                    errs.push(format!("operator.{name}.height must be positive, got {height}"));
                }
            }
        }
    }

    /// Thermal speed used to size grids and probe regions.
    pub fn spread(&self) -> f64 {
        match self {
            DensitySpec::Gaussian { temperature, .. } => temperature.sqrt(),
            DensitySpec::Ball { radius, .. } => *radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorBlock {
    pub f: DensitySpec,
    pub g: DensitySpec,
    /// Number of probe velocities, used when `numerics.quadrature.targets` is empty.
    pub probes: usize,
    /// Probes are drawn uniformly in the ball of this radius (thermal units).
    pub probe_radius: f64,
    pub spreading: bool,
    /// Uniform quadrature order of the spreading scan.
    pub spreading_order: usize,
    pub weak_check: bool,
    /// Uniform quadrature order of the strong-form side of the weak check.
    pub weak_order: usize,
}

impl Default for OperatorBlock {
    fn default() -> Self {
        OperatorBlock {
            f: DensitySpec::default(),
            g: DensitySpec::default(),
            probes: 10,
            probe_radius: 2.0,
            spreading: true,
            spreading_order: 12,
            weak_check: true,
            weak_order: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub analysis: Analysis,
    #[serde(default)]
    pub operator: OperatorBlock,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            mode,
            seed: default_seed(),
            physics: Physics::default(),
            numerics: Numerics::default(),
            output: Output::default(),
            analysis: Analysis::default(),
            operator: OperatorBlock::default(),
        }
    }

    pub fn frame(&self) -> Frame {
        self.numerics.frame.unwrap_or_else(|| self.mode.default_frame())
    }

    /// Particle-run parameters.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            restitution: self.physics.restitution,
            kernel: self.physics.kernel.clone(),
            dimension: self.physics.dimension,
            particles: self.numerics.particles,
            dt: self.numerics.dt,
            t_final: self.numerics.t_final,
            frame: self.frame(),
            initial: self.numerics.initial.clone(),
            seed: self.seed,
            cadence: self.numerics.cadence,
            mass: self.physics.mass,
            histograms: self.numerics.histograms.clone(),
            keep_snapshots: self.numerics.keep_snapshots,
        }
    }

    /// Semantic checks, all errors collected.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let p = &self.physics;
        if !(0.0..=1.0).contains(&p.restitution) {
            errs.push(format!("physics.restitution out of [0,1]: {}", p.restitution));
        }
        if !(2..=4).contains(&p.dimension) {
            errs.push(format!("physics.dimension must be 2, 3 or 4, got {}", p.dimension));
        }
        if !(p.mass > 0.0) {
            errs.push(format!("physics.mass must be positive, got {}", p.mass));
        }
        if !(p.c_star > 0.0) {
            errs.push(format!("physics.c_star must be positive, got {}", p.c_star));
        }
        if let Ok(dim) = crate::kernel::Dimension::new(p.dimension) {
            if let Err(e) = p.kernel.build(dim) {
                errs.push(format!("physics.kernel: {e}"));
            }
        }
        let n = &self.numerics;
        if n.particles < 2 {
            errs.push(format!("numerics.particles must be at least 2, got {}", n.particles));
        }
        if let Some(dt) = n.dt {
            if !(dt > 0.0) {
                errs.push(format!("numerics.dt must be positive, got {dt}"));
            }
        }
        if !(n.t_final >= 0.0) {
            errs.push(format!("numerics.t_final must be nonnegative, got {}", n.t_final));
        }
        if !(n.cadence > 0.0) {
            errs.push(format!("numerics.cadence must be positive, got {}", n.cadence));
        }
        if n.histograms.bins < 8 {
            errs.push(format!("numerics.histograms.bins must be at least 8, got {}", n.histograms.bins));
        }
        if n.replicas == 0 {
            errs.push("numerics.replicas must be at least 1".to_string());
        }
        if n.grid.points < 2 {
            errs.push(format!("numerics.grid.points must be at least 2, got {}", n.grid.points));
        }
        if let Some(l) = n.grid.extent {
            if !(l > 0.0) {
                errs.push(format!("numerics.grid.extent must be positive, got {l}"));
            }
        }
        if let Err(Error::Config(q)) = n.quadrature.validate() {
            errs.extend(q.into_iter().map(|s| format!("numerics.{s}")));
        }
        for t in &n.quadrature.targets {
            if t.len() != p.dimension {
                errs.push(format!(
                    "numerics.quadrature.targets entry has {} components, expected {}",
                    t.len(),
                    p.dimension
                ));
            }
        }
        errs.extend(n.initial.validate(p.dimension).into_iter().map(|s| format!("numerics.{s}")));
        let a = &self.analysis;
        if !(a.haff_window[0] >= 0.0 && a.haff_window[1] > a.haff_window[0]) {
            errs.push(format!("analysis.haff_window must be an increasing nonnegative pair, got {:?}", a.haff_window));
        }
        if let Some(w) = a.tail_window {
            if !(w[0] >= 0.0 && w[1] > w[0]) {
                errs.push(format!("analysis.tail_window must be an increasing nonnegative pair, got {w:?}"));
            }
        }
        if a.tail_candidates.is_empty() || a.tail_candidates.iter().any(|s| !(*s > 0.0)) {
            errs.push("analysis.tail_candidates must be a nonempty list of positive exponents".to_string());
        }
        if a.positivity_bins < 8 {
            errs.push(format!("analysis.positivity_bins must be at least 8, got {}", a.positivity_bins));
        }
        if self.mode == Mode::Selfsim && self.frame() != Frame::Rescaled {
            errs.push("selfsim runs in the rescaled frame; numerics.frame must be \"rescaled\"".to_string());
        }
        if !(a.moment_a >= 2.0) {
            errs.push(format!("analysis.moment_a must be at least 2, got {}", a.moment_a));
        }
        if !(a.invariant_inflate > 0.0) {
            errs.push(format!("analysis.invariant_inflate must be positive, got {}", a.invariant_inflate));
        }
        if !(a.positivity_radius > 0.0) {
            errs.push(format!("analysis.positivity_radius must be positive, got {}", a.positivity_radius));
        }
        if !(a.perturbation > 0.0) {
            errs.push(format!("analysis.perturbation must be positive, got {}", a.perturbation));
        }
        if a.dissipation_steps == 0 {
            errs.push("analysis.dissipation_steps must be at least 1".to_string());
        }
        let o = &self.operator;
        o.f.validate("f", p.dimension, &mut errs);
        o.g.validate("g", p.dimension, &mut errs);
        if o.probes == 0 && n.quadrature.targets.is_empty() {
            errs.push("operator.probes must be at least 1".to_string());
        }
        if o.weak_order < 4 {
            errs.push(format!("operator.weak_order must be at least 4, got {}", o.weak_order));
        }
        if o.spreading_order < 4 {
            errs.push(format!("operator.spreading_order must be at least 4, got {}", o.spreading_order));
        }
        if n.replicas > 1 && !matches!(self.mode, Mode::Simulate | Mode::Haff) {
            errs.push(format!(
                "numerics.replicas > 1 is only supported by simulate and haff, not {}",
                self.mode.name()
            ));
        }
        if !(o.probe_radius > 0.0) {
            errs.push(format!("operator.probe_radius must be positive, got {}", o.probe_radius));
        }
        errs
    }

    /// SHA-256 of the canonical JSON of the resolved configuration.
    /// The output directory is left out, so a moved run keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.directory = PathBuf::new();
        let json = serde_json::to_string(&c).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Short form of the hash for headers and file names.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}

/// Keys accepted at each level of the configuration tree. Tagged unions
/// (`kernel`, `initial`, densities) are checked by the deserializer.
const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["schema_version", "mode", "seed", "physics", "numerics", "output", "analysis", "operator"]),
    ("physics", &["restitution", "kernel", "dimension", "mass", "c_star"]),
    (
        "numerics",
        &[
            "particles",
            "dt",
            "t_final",
            "frame",
            "initial",
            "cadence",
            "histograms",
            "replicas",
            "keep_snapshots",
            "quadrature",
            "grid",
        ],
    ),
    ("numerics.histograms", &["bins", "r_max", "times"]),
    ("numerics.quadrature", &["radial_order", "angular_order", "hyperplane_order", "velocity_order", "targets"]),
    ("numerics.grid", &["extent", "points"]),
    ("output", &["directory", "dump_velocities"]),
    (
        "analysis",
        &[
            "haff_window",
            "tail_window",
            "tail_candidates",
            "t_transient",
            "invariant_t0",
            "invariant_inflate",
            "moment_a",
            "positivity_radius",
            "positivity_bins",
            "t_star",
            "stationarity_times",
            "stationarity_tolerance",
            "perturbation",
            "dissipation_steps",
            "direction",
            "input",
        ],
    ),
    ("operator", &["f", "g", "probes", "probe_radius", "spreading", "spreading_order", "weak_check", "weak_order"]),
];

const REQUIRED: &[&str] = &["schema_version", "mode"];

fn schema_errors(value: &Value) -> Vec<String> {
    let mut errs = Vec::new();
    let Some(root) = value.as_object() else {
        return vec!["configuration must be a JSON object".to_string()];
    };
    for key in REQUIRED {
        if !root.contains_key(*key) {
            errs.push(format!("missing key: {key}"));
        }
    }
    for (path, allowed) in SCHEMA {
        let node = if path.is_empty() { Some(value) } else { path.split('.').try_fold(value, |v, k| v.get(k)) };
        let Some(obj) = node.and_then(Value::as_object) else { continue };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                errs.push(format!("unknown key: {full}"));
            }
        }
    }
    errs
}

/// Parses and validates a configuration document, reporting every schema
/// and validation error found.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    let mut errs = schema_errors(&value);
    // Deserialize block by block so that a type error in one block does not
    // hide errors in the others.
    fn block_error<T: serde::de::DeserializeOwned>(value: &Value, key: &str) -> Option<String> {
        let v = value.get(key)?;
        serde_json::from_value::<T>(v.clone()).err().map(|e| format!("{key}: {e}"))
    }
    let mut typed = Vec::new();
    typed.extend(block_error::<Physics>(&value, "physics"));
    typed.extend(block_error::<Numerics>(&value, "numerics"));
    typed.extend(block_error::<Output>(&value, "output"));
    typed.extend(block_error::<Analysis>(&value, "analysis"));
    typed.extend(block_error::<OperatorBlock>(&value, "operator"));
    // Unknown-key messages already cover deny_unknown_fields failures.
    typed.retain(|m| !m.contains("unknown field"));
    let typed_ok = typed.is_empty();
    errs.extend(typed);
    if errs.is_empty() {
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(vec![format!("{e}")]))?;
        let errs = cfg.validate();
        return if errs.is_empty() { Ok(cfg) } else { Err(Error::Config(errs)) };
    }
    // Semantic checks still run on a copy without the offending keys.
    if typed_ok && value.get("mode").is_some() {
        let mut repaired = value;
        strip_unknown(&mut repaired);
        if let Some(obj) = repaired.as_object_mut() {
            obj.entry("schema_version").or_insert(Value::from(SCHEMA_VERSION));
        }
        if let Ok(cfg) = serde_json::from_value::<ExperimentConfig>(repaired) {
            errs.extend(cfg.validate());
        }
    }
    Err(Error::Config(errs))
}

fn strip_unknown(value: &mut Value) {
    for (path, allowed) in SCHEMA {
        let node = if path.is_empty() {
            Some(&mut *value)
        } else {
            path.split('.').try_fold(&mut *value, |v, k| v.get_mut(k))
        };
        if let Some(obj) = node.and_then(Value::as_object_mut) {
            obj.retain(|k, _| allowed.contains(&k.as_str()));
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub const PRESETS: [&str; 4] = ["haff-law", "self-similar", "operator-check", "stability"];

/// Built-in experiment configurations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = match name {
        "haff-law" => {
            let mut c = ExperimentConfig::new(Mode::Haff);
            c.numerics.particles = 100_000;
            c.numerics.t_final = 101f64.ln();
            c.numerics.cadence = 0.05;
            c.numerics.frame = Some(Frame::Rescaled);
            c
        }
        "self-similar" => {
            let mut c = ExperimentConfig::new(Mode::Selfsim);
            c.numerics.particles = 200_000;
            c.numerics.t_final = 10.0;
            c.numerics.cadence = 0.25;
            c.numerics.frame = Some(Frame::Rescaled);
            c.numerics.histograms.times = (1..=10).map(|t| t as f64).collect();
            c
        }
        "operator-check" => {
            let mut c = ExperimentConfig::new(Mode::Qcheck);
            c.physics.dimension = 2;
            c
        }
        "stability" => {
            let mut c = ExperimentConfig::new(Mode::Stability);
            c.numerics.particles = 100_000;
            c.numerics.t_final = 5.0;
            c.numerics.cadence = 0.25;
            c.numerics.frame = Some(Frame::Rescaled);
            c
        }
        other => {
            return Err(Error::Config(vec![format!("unknown preset {other:?}; known presets: {}", PRESETS.join(", "))]))
        }
    };
    cfg.output.directory = PathBuf::from(format!("out/{name}"));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults_with_stable_hash() {
        let a = parse_config_str(r#"{"schema_version": 1, "mode": "simulate"}"#).unwrap();
        let b = parse_config_str(r#"{"mode": "simulate", "schema_version": 1}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.physics.restitution, 0.8);
        assert_eq!(a.frame(), Frame::Original);
        let c = parse_config_str(r#"{"schema_version": 1, "mode": "simulate", "seed": 2}"#).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn restitution_out_of_range() {
        let err = parse_config_str(r#"{"schema_version": 1, "mode": "simulate", "physics": {"restitution": 1.5}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("restitution out of [0,1]"), "{err}");
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let err =
            parse_config_str(r#"{"schema_version": 1, "mode": "simulate", "numerics": {"dt": 0.0}}"#).unwrap_err();
        assert!(err.to_string().contains("numerics.dt must be positive"), "{err}");
    }

    #[test]
    fn all_schema_errors_are_listed() {
        let text = r#"{
            "mode": "simulate",
            "colour": 3,
            "physics": {"restitution": 0.5, "gravity": 9.8},
            "numerics": {"histograms": {"bins": 16, "log": true}},
            "output": {"dir": "x"}
        }"#;
        let Err(Error::Config(errs)) = parse_config_str(text) else { panic!("expected config errors") };
        for needle in [
            "missing key: schema_version",
            "unknown key: colour",
            "unknown key: physics.gravity",
            "unknown key: numerics.histograms.log",
            "unknown key: output.dir",
        ] {
            assert!(errs.iter().any(|e| e == needle), "missing {needle:?} in {errs:?}");
        }
    }

    #[test]
    fn semantic_errors_are_collected() {
        let text = r#"{"schema_version": 1, "mode": "selfsim",
            "physics": {"restitution": -0.1, "mass": 0},
            "numerics": {"particles": 1, "cadence": 0}}"#;
        let Err(Error::Config(errs)) = parse_config_str(text) else { panic!() };
        assert!(errs.len() >= 4, "{errs:?}");
    }

    #[test]
    fn schema_and_semantic_errors_are_reported_together() {
        let text = r#"{"mode": "simulate", "physics": {"restitution": 1.5, "bogus": 1}, "numerics": {"dt": -1}}"#;
        let Err(Error::Config(errs)) = parse_config_str(text) else { panic!() };
        for needle in
            ["missing key: schema_version", "unknown key: physics.bogus", "restitution out of [0,1]", "numerics.dt"]
        {
            assert!(errs.iter().any(|e| e.contains(needle)), "missing {needle:?} in {errs:?}");
        }
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            let p = preset(name).unwrap();
            assert!(p.validate().is_empty(), "{name}: {:?}", p.validate());
            let round = parse_config_str(&serde_json::to_string(&p).unwrap()).unwrap();
            assert_eq!(round, p);
        }
        assert!(preset("nope").is_err());
    }
}
