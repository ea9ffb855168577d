//! Direct simulation Monte Carlo for the homogeneous inelastic Boltzmann
//! equation, in original variables or in self-similar variables with an
//! anti-drift.
//!
//! Velocities are stored as `v = scale · w`. The anti-drift multiplies
//! `scale` only, and collisions act on `w`: the collision rule is
//! homogeneous of degree one in `(v, v_*)`, so both steps commute with the
//! factorization.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    delta_energy, post_collisional, sample_sigma, AngularKernel, CollisionPair, Dimension, KernelSpec, RestitutionLaw,
};
use crate::observables::{self, MomentSeries, VelocityHistogram, DEFAULT_ORDERS};
use crate::vecn::{self, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Original,
    Rescaled,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Original => "original",
            Frame::Rescaled => "rescaled",
        }
    }
}

/// Counters accumulated by an ensemble.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCounters {
    pub steps: u64,
    pub candidates: u64,
    pub collisions: u64,
    pub majorant_violations: u64,
    pub majorant_refreshes: u64,
    /// Energy removed by collisions, in physical units at collision time.
    pub dissipated: f64,
    /// Sum of `|w|²` changes tallied from the closed-form energy loss.
    pub raw_tally: f64,
}

/// Particles of equal weight with a shared velocity scale.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble<const N: usize> {
    raw: Vec<Vector<N>>,
    scale: f64,
    weight: f64,
    time: f64,
    frame: Frame,
    rng: ChaCha8Rng,
    u_max_raw: f64,
    pending_refresh: u64,
    raw_energy_ref: f64,
    counters: EnsembleCounters,
}

pub const MAJORANT_SAFETY: f64 = 4.0;
pub const MAJORANT_BUMP: f64 = 1.05;

impl<const N: usize> ParticleEnsemble<N> {
    /// Builds an ensemble of total mass `mass` from physical velocities.
    pub fn from_velocities(velocities: Vec<Vector<N>>, mass: f64, frame: Frame, time: f64, seed: u64) -> Result<Self> {
        if velocities.len() < 2 {
            return Err(Error::Domain(format!("an ensemble needs at least 2 particles, got {}", velocities.len())));
        }
        if !(mass > 0.0) {
            return Err(Error::Domain(format!("mass must be positive, got {mass}")));
        }
        if velocities.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("velocities must be finite".into()));
        }
        let weight = mass / velocities.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u_max_raw = initial_majorant(&velocities, &mut rng);
        let raw_energy_ref = velocities.iter().map(vecn::norm2).sum();
        Ok(ParticleEnsemble {
            raw: velocities,
            scale: 1.0,
            weight,
            time,
            frame,
            rng,
            u_max_raw,
            pending_refresh: 0,
            raw_energy_ref,
            counters: EnsembleCounters::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mass(&self) -> f64 {
        self.weight * self.raw.len() as f64
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn counters(&self) -> &EnsembleCounters {
        &self.counters
    }

    /// Relative-speed majorant in physical units.
    pub fn u_max(&self) -> f64 {
        self.scale * self.u_max_raw
    }

    pub fn velocity(&self, i: usize) -> Vector<N> {
        vecn::scale(&self.raw[i], self.scale)
    }

    pub fn velocities(&self) -> impl Iterator<Item = Vector<N>> + '_ {
        self.raw.iter().map(|w| vecn::scale(w, self.scale))
    }

    pub fn energy(&self) -> f64 {
        self.weight * self.scale * self.scale * self.raw_energy()
    }

    fn raw_energy(&self) -> f64 {
        self.raw.iter().map(vecn::norm2).sum()
    }

    pub fn momentum(&self) -> Vector<N> {
        let mut p = [0.0; N];
        for w in &self.raw {
            for i in 0..N {
                p[i] += w[i];
            }
        }
        vecn::scale(&p, self.weight * self.scale)
    }

    /// Raw energy change not accounted for by the collision tally, relative
    /// to the larger of the reference and current raw energy. Zero up to
    /// rounding.
    pub fn ledger_residual(&self) -> f64 {
        let now = self.raw_energy();
        let scale = now.max(self.raw_energy_ref).max(f64::MIN_POSITIVE);
        (now - (self.raw_energy_ref + self.counters.raw_tally)).abs() / scale
    }

    /// Multiplies every velocity by `factor` and relabels time and frame.
    /// Used by the exact changes of variables.
    pub fn remap(&mut self, factor: f64, time: f64, frame: Frame) {
        self.scale *= factor;
        self.time = time;
        self.frame = frame;
    }

    /// Resets the majorant to `2 max |w − w̄|`, a bound on every pairwise
    /// relative speed.
    pub fn refresh_majorant(&mut self) {
        let n = self.raw.len() as f64;
        let mut mean = [0.0; N];
        for w in &self.raw {
            for i in 0..N {
                mean[i] += w[i] / n;
            }
        }
        let r = self.raw.iter().map(|w| vecn::norm(&vecn::sub(w, &mean))).fold(0.0, f64::max);
        if r > 0.0 {
            self.u_max_raw = 2.0 * r;
        }
        self.pending_refresh = 0;
        self.counters.majorant_refreshes += 1;
    }

    fn pair_indices(&mut self) -> (usize, usize) {
        let n = self.raw.len();
        let i = self.rng.random_range(0..n);
        let mut j = self.rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    }

    fn stochastic_round(&mut self, x: f64) -> u64 {
        let base = x.floor();
        let extra = (self.rng.random::<f64>() < x - base) as u64;
        base as u64 + extra
    }
}

fn initial_majorant<const N: usize>(velocities: &[Vector<N>], rng: &mut ChaCha8Rng) -> f64 {
    let n = velocities.len();
    let k = (n / 100).max(n.min(50)).min(n);
    let sample: Vec<&Vector<N>> = rand::seq::index::sample(rng, n, k).iter().map(|i| &velocities[i]).collect();
    let mut best: f64 = 0.0;
    for (a, va) in sample.iter().enumerate() {
        for vb in &sample[a + 1..] {
            best = best.max(vecn::norm(&vecn::sub(va, vb)));
        }
    }
    if best > 0.0 {
        MAJORANT_SAFETY * best
    } else {
        1.0
    }
}

/// Statistics of one collision substep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub candidates: u64,
    pub accepted: u64,
    pub violations: u64,
    /// Physical energy change, from the closed-form per-collision loss.
    pub energy_change: f64,
}

impl StepStats {
    pub fn acceptance(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.accepted as f64 / self.candidates as f64
        }
    }
}

/// No-time-counter collision substep of length `dt`.
///
/// Draws `n ρ u_max dt / 2` candidate pairs (stochastically rounded), accepts
/// each with probability `|u|/u_max` and applies the collision rule with
/// `σ ∼ b(û·σ)`.
pub fn collide_step<const N: usize>(
    ens: &mut ParticleEnsemble<N>,
    dt: f64,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
) -> Result<StepStats> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("time step must be nonnegative, got {dt}")));
    }
    let n = ens.len() as f64;
    let expected = n * ens.mass() * ens.u_max() * dt / 2.0;
    let m = ens.stochastic_round(expected);
    let mut stats = StepStats { candidates: m, ..StepStats::default() };
    let mut raw_change = 0.0;
    for _ in 0..m {
        let (i, j) = ens.pair_indices();
        let pair = CollisionPair::new(ens.raw[i], ens.raw[j]);
        let u = pair.u();
        let speed = vecn::norm(&u);
        if speed > ens.u_max_raw {
            log::debug!("majorant raised from {} to {}", ens.u_max_raw, MAJORANT_BUMP * speed);
            ens.u_max_raw = MAJORANT_BUMP * speed;
            stats.violations += 1;
        }
        if speed == 0.0 || ens.rng.random::<f64>() * ens.u_max_raw >= speed {
            continue;
        }
        let u_hat = vecn::scale(&u, 1.0 / speed);
        let sigma = sample_sigma(&mut ens.rng, &u_hat, kernel)?;
        raw_change += delta_energy(&pair, &sigma, law);
        let (a, b) = post_collisional(&pair, &sigma, law);
        ens.raw[i] = a;
        ens.raw[j] = b;
        stats.accepted += 1;
    }
    stats.energy_change = ens.weight * ens.scale * ens.scale * raw_change;
    let c = &mut ens.counters;
    c.candidates += stats.candidates;
    c.collisions += stats.accepted;
    c.majorant_violations += stats.violations;
    c.raw_tally += raw_change;
    c.dissipated -= stats.energy_change;
    ens.pending_refresh += m;
    if ens.pending_refresh as f64 >= n {
        ens.refresh_majorant();
    }
    ens.time += dt;
    Ok(stats)
}

/// Exact anti-drift flow over `dt`: velocities are multiplied by `e^{dt}`.
pub fn drift_rescale_step<const N: usize>(ens: &mut ParticleEnsemble<N>, dt: f64) -> Result<()> {
    if ens.frame != Frame::Rescaled {
        return Err(Error::Frame { expected: "rescaled", found: ens.frame.name() });
    }
    ens.scale *= dt.exp();
    ens.time += dt;
    Ok(())
}

/// One step: a collision substep in the original frame, or Strang splitting
/// (half drift, collisions, half drift) in the rescaled frame.
pub fn advance<const N: usize>(
    ens: &mut ParticleEnsemble<N>,
    dt: f64,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
) -> Result<StepStats> {
    let stats = match ens.frame {
        Frame::Original => collide_step(ens, dt, law, kernel)?,
        Frame::Rescaled => {
            let t0 = ens.time;
            drift_rescale_step(ens, 0.5 * dt)?;
            let s = collide_step(ens, dt, law, kernel)?;
            drift_rescale_step(ens, 0.5 * dt)?;
            ens.time = t0 + dt;
            s
        }
    };
    ens.counters.steps += 1;
    Ok(stats)
}

/// Initial velocity distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Maxwellian with per-component variance `temperature`.
    Gaussian { temperature: f64 },
    /// Uniform on the ball of given radius.
    UniformBall { radius: f64 },
    /// Equal halves uniform on balls of radius `width` around `±offset`.
    TwoBump { offset: Vec<f64>, width: f64 },
    /// One velocity per line, components separated by commas or spaces.
    FromFile { path: PathBuf },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Gaussian { temperature: 1.0 }
    }
}

impl InitialCondition {
    pub fn validate(&self, dimension: usize) -> Vec<String> {
        let mut errs = Vec::new();
        match self {
            InitialCondition::Gaussian { temperature } if !(*temperature > 0.0) => {
                errs.push(format!("initial.temperature must be positive, got {temperature}"))
            }
            InitialCondition::UniformBall { radius } if !(*radius > 0.0) => {
                errs.push(format!("initial.radius must be positive, got {radius}"))
            }
            InitialCondition::TwoBump { offset, width } => {
                if offset.len() != dimension {
                    errs.push(format!("initial.offset has {} components, expected {dimension}", offset.len()));
                }
                if !(*width > 0.0) {
                    errs.push(format!("initial.width must be positive, got {width}"));
                }
            }
            _ => {}
        }
        errs
    }
}

fn uniform_ball<const N: usize>(rng: &mut ChaCha8Rng, radius: f64) -> Vector<N> {
    let dir: Vector<N> = crate::kernel::uniform_sphere(rng);
    let r = radius * rng.random::<f64>().powf(1.0 / N as f64);
    vecn::scale(&dir, r)
}

/// Reads velocities from a text file; `#` starts a comment.
pub fn read_velocities<const N: usize>(path: &std::path::Path) -> Result<Vec<Vector<N>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if parts.len() != N {
            return Err(Error::parse(
                path,
                format!("line {}: expected {N} components, found {}", lineno + 1, parts.len()),
            ));
        }
        let mut v = [0.0; N];
        for (k, p) in parts.iter().enumerate() {
            v[k] = p
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: cannot parse {p:?} as a number", lineno + 1)))?;
        }
        out.push(v);
    }
    Ok(out)
}

/// Sampler for the initial ensemble. Velocities are centred so that the
/// momentum vanishes.
pub fn sample_initial<const N: usize>(
    init: &InitialCondition,
    particles: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vector<N>>> {
    let errs = init.validate(N);
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut v: Vec<Vector<N>> = match init {
        InitialCondition::Gaussian { temperature } => {
            let s = temperature.sqrt();
            (0..particles).map(|_| std::array::from_fn(|_| s * rng.sample::<f64, _>(StandardNormal))).collect()
        }
        InitialCondition::UniformBall { radius } => (0..particles).map(|_| uniform_ball(rng, *radius)).collect(),
        InitialCondition::TwoBump { offset, width } => {
            let a: Vector<N> = std::array::from_fn(|i| offset[i]);
            (0..particles)
                .map(|k| {
                    let c = if k % 2 == 0 { a } else { vecn::scale(&a, -1.0) };
                    vecn::add(&c, &uniform_ball(rng, *width))
                })
                .collect()
        }
        InitialCondition::FromFile { path } => read_velocities(path)?,
    };
    center(&mut v);
    Ok(v)
}

/// Subtracts the empirical mean (twice, to clean up rounding).
pub fn center<const N: usize>(v: &mut [Vector<N>]) {
    let n = v.len() as f64;
    for _ in 0..2 {
        let mut mean = [0.0; N];
        for w in v.iter() {
            for i in 0..N {
                mean[i] += w[i];
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for w in v.iter_mut() {
            for i in 0..N {
                w[i] -= mean[i];
            }
        }
    }
}

/// Histograms recorded during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramSpec {
    pub bins: usize,
    /// Fixed outer radius; by default `8σ` of each snapshot.
    pub r_max: Option<f64>,
    pub times: Vec<f64>,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { bins: 64, r_max: None, times: Vec::new() }
    }
}

/// Parameters of a particle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub restitution: f64,
    pub kernel: KernelSpec,
    pub dimension: usize,
    pub particles: usize,
    /// Fixed step; by default `0.01/(ρ u_max)` per step.
    pub dt: Option<f64>,
    pub t_final: f64,
    pub frame: Frame,
    pub initial: InitialCondition,
    pub seed: u64,
    /// Interval between moment samples.
    pub cadence: f64,
    pub mass: f64,
    pub histograms: HistogramSpec,
    /// Keep velocity snapshots at histogram times.
    pub keep_snapshots: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            restitution: 0.8,
            kernel: KernelSpec::Isotropic,
            dimension: 3,
            particles: 10_000,
            dt: None,
            t_final: 1.0,
            frame: Frame::Original,
            initial: InitialCondition::default(),
            seed: 1,
            cadence: 0.1,
            mass: 1.0,
            histograms: HistogramSpec::default(),
            keep_snapshots: false,
        }
    }
}

pub const DT_SAFETY: f64 = 0.01;

impl SimConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.restitution) {
            errs.push(format!("restitution out of [0,1]: {}", self.restitution));
        }
        if self.dimension < 2 {
            errs.push(format!("dimension must be at least 2, got {}", self.dimension));
        }
        if self.particles < 2 {
            errs.push(format!("particles must be at least 2, got {}", self.particles));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                errs.push(format!("dt must be positive, got {dt}"));
            }
        }
        if !(self.t_final >= 0.0) {
            errs.push(format!("t_final must be nonnegative, got {}", self.t_final));
        }
        if !(self.cadence > 0.0) {
            errs.push(format!("cadence must be positive, got {}", self.cadence));
        }
        if !(self.mass > 0.0) {
            errs.push(format!("mass must be positive, got {}", self.mass));
        }
        if self.histograms.bins < 8 {
            errs.push(format!("histograms.bins must be at least 8, got {}", self.histograms.bins));
        }
        if let Some(r) = self.histograms.r_max {
            if !(r > 0.0) {
                errs.push(format!("histograms.r_max must be positive, got {r}"));
            }
        }
        errs.extend(self.initial.validate(self.dimension));
        errs
    }
}

/// Run-level metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub dimension: usize,
    pub particles: usize,
    pub frame: Frame,
    pub counters: EnsembleCounters,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_halvings: u32,
    pub ledger_residual: f64,
    pub momentum_drift: f64,
    pub initial_energy: f64,
}

/// Velocities at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub weight: f64,
    pub velocities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub moments: MomentSeries,
    pub histograms: Vec<VelocityHistogram>,
    pub snapshots: Vec<Snapshot>,
    pub metadata: RunMetadata,
}

/// Builds the initial ensemble of a configuration.
pub fn init_ensemble<const N: usize>(config: &SimConfig) -> Result<ParticleEnsemble<N>> {
    if config.dimension != N {
        return Err(Error::Domain(format!("configuration is for N = {}, requested N = {N}", config.dimension)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let v = sample_initial::<N>(&config.initial, config.particles, &mut rng)?;
    let stream: u64 = rng.random();
    ParticleEnsemble::from_velocities(v, config.mass, config.frame, 0.0, stream)
}

/// Output times `0, c, 2c, …` up to `t_final`, merged with histogram times.
fn schedule(config: &SimConfig) -> Vec<f64> {
    let k = (config.t_final / config.cadence + 1e-9).floor() as usize;
    let mut ts: Vec<f64> = (0..=k).map(|i| i as f64 * config.cadence).collect();
    if (ts.last().copied().unwrap_or(0.0) - config.t_final).abs() > 1e-9 * config.t_final.max(1.0) {
        ts.push(config.t_final);
    }
    ts.extend(config.histograms.times.iter().filter(|t| **t >= 0.0 && **t <= config.t_final));
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(1.0));
    ts
}

/// Runs a configuration to `t_final`. Deterministic for a given seed.
pub fn run<const N: usize>(config: &SimConfig) -> Result<RunOutput> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let law = RestitutionLaw::new(config.restitution)?;
    let kernel = config.kernel.build(Dimension::new(N)?)?;
    let mut ens = init_ensemble::<N>(config)?;
    run_ensemble(&mut ens, config, &law, &kernel)
}

/// Advances an existing ensemble through the output schedule of `config`.
pub fn run_ensemble<const N: usize>(
    ens: &mut ParticleEnsemble<N>,
    config: &SimConfig,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
) -> Result<RunOutput> {
    let t0 = ens.time;
    let initial_energy = ens.energy();
    let mut series = MomentSeries::new(ens.frame, N, &DEFAULT_ORDERS);
    let mut histograms = Vec::new();
    let mut snapshots = Vec::new();
    let is_hist_time = |t: f64| config.histograms.times.iter().any(|h| (h - t).abs() <= 1e-9 * h.abs().max(1.0));
    let mut stepper = Stepper::new(config.dt);
    let mut momentum_drift: f64 = 0.0;
    let p0 = ens.momentum();

    for target in schedule(config) {
        let target = t0 + target;
        stepper.advance_until(ens, target, law, kernel)?;
        let values = observables::moments(ens, &DEFAULT_ORDERS);
        let rel = vecn::norm(&vecn::sub(&ens.momentum(), &p0)) / (ens.mass() * ens.energy()).sqrt();
        momentum_drift = momentum_drift.max(rel);
        series.push(target, &values)?;
        if is_hist_time(target - t0) {
            let r_max =
                config.histograms.r_max.unwrap_or_else(|| 8.0 * (ens.energy() / (N as f64 * ens.mass())).sqrt());
            histograms.push(observables::radial_histogram(ens, config.histograms.bins, r_max)?);
            if config.keep_snapshots {
                snapshots.push(Snapshot {
                    time: target,
                    weight: ens.weight(),
                    velocities: ens.velocities().map(|v| v.to_vec()).collect(),
                });
            }
        }
    }
    Ok(RunOutput {
        moments: series,
        histograms,
        snapshots,
        metadata: RunMetadata {
            seed: config.seed,
            dimension: N,
            particles: ens.len(),
            frame: ens.frame,
            counters: ens.counters,
            dt_min: if stepper.dt_min.is_finite() { stepper.dt_min } else { 0.0 },
            dt_max: stepper.dt_max,
            dt_halvings: stepper.halvings,
            ledger_residual: ens.ledger_residual(),
            momentum_drift,
            initial_energy,
        },
    })
}

/// Time-step control shared by every driver: `dt = DT_SAFETY/(ρ u_max)`
/// unless fixed, halved for good whenever a step accepts more than half of
/// its candidates.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub fixed_dt: Option<f64>,
    pub factor: f64,
    pub halvings: u32,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Stepper {
    pub fn new(fixed_dt: Option<f64>) -> Self {
        Stepper { fixed_dt, factor: 1.0, halvings: 0, dt_min: f64::INFINITY, dt_max: 0.0 }
    }

    /// Length of the next step, not clipped to any target.
    pub fn next_dt<const N: usize>(&self, ens: &ParticleEnsemble<N>) -> f64 {
        self.fixed_dt.unwrap_or_else(|| DT_SAFETY / (ens.mass() * ens.u_max())) * self.factor
    }

    /// One step of at most `max_dt`.
    pub fn step<const N: usize>(
        &mut self,
        ens: &mut ParticleEnsemble<N>,
        max_dt: f64,
        law: &RestitutionLaw,
        kernel: &AngularKernel,
    ) -> Result<StepStats> {
        let dt = self.next_dt(ens).min(max_dt);
        let stats = advance(ens, dt, law, kernel)?;
        if stats.candidates >= 16 && stats.acceptance() > 0.5 && self.fixed_dt.is_none() {
            self.factor *= 0.5;
            self.halvings += 1;
            log::info!("acceptance {:.3} above 0.5, halving dt", stats.acceptance());
        }
        self.dt_min = self.dt_min.min(dt);
        self.dt_max = self.dt_max.max(dt);
        Ok(stats)
    }

    /// Steps until the ensemble time reaches `target`, landing on it exactly.
    pub fn advance_until<const N: usize>(
        &mut self,
        ens: &mut ParticleEnsemble<N>,
        target: f64,
        law: &RestitutionLaw,
        kernel: &AngularKernel,
    ) -> Result<()> {
        while target - ens.time > 1e-12 * target.abs().max(1.0) {
            let remaining = target - ens.time;
            self.step(ens, remaining, law, kernel)?;
        }
        ens.time = target;
        Ok(())
    }
}

/// Runs a configuration for a runtime dimension.
pub fn run_any(config: &SimConfig) -> Result<RunOutput> {
    match config.dimension {
        2 => run::<2>(config),
        3 => run::<3>(config),
        4 => run::<4>(config),
        n => Err(Error::Domain(format!("particle runs support N ∈ {{2, 3, 4}}, got {n}"))),
    }
}

/// Seed of replica `k`.
pub fn replica_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Thread cap from `GRANULAR_THREADS`, defaulting to the available cores.
pub fn thread_cap() -> usize {
    std::env::var("GRANULAR_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs independent replicas with distinct seeds, at most `thread_cap()` at
/// a time. Results are in replica order regardless of scheduling.
pub fn run_replicas(config: &SimConfig, replicas: usize) -> Result<Vec<RunOutput>> {
    let configs: Vec<SimConfig> =
        (0..replicas.max(1)).map(|k| SimConfig { seed: replica_seed(config.seed, k), ..config.clone() }).collect();
    let cap = thread_cap().min(configs.len());
    let mut results: Vec<Option<Result<RunOutput>>> = (0..configs.len()).map(|_| None).collect();
    for chunk in configs.iter().enumerate().collect::<Vec<_>>().chunks(cap) {
        let outs: Vec<(usize, Result<RunOutput>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|(k, c)| (*k, s.spawn(move || run_any(c)))).collect();
            handles
                .into_iter()
                .map(|(k, h)| (k, h.join().unwrap_or_else(|_| Err(Error::Domain("replica thread panicked".into())))))
                .collect()
        });
        for (k, r) in outs {
            results[k] = Some(r);
        }
    }
    results.into_iter().map(|r| r.expect("every replica ran")).collect()
}

/// Averages replica moment series.
pub fn merge_moments(outputs: &[RunOutput]) -> Result<MomentSeries> {
    let series: Vec<MomentSeries> = outputs.iter().map(|o| o.moments.clone()).collect();
    MomentSeries::average(&series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(frame: Frame, e: f64) -> SimConfig {
        SimConfig { restitution: e, particles: 2000, t_final: 0.5, cadence: 0.25, frame, ..SimConfig::default() }
    }

    #[test]
    fn initial_ensemble_is_centred_with_requested_mass() {
        let c = SimConfig { particles: 10_000, mass: 2.5, ..SimConfig::default() };
        let ens = init_ensemble::<3>(&c).unwrap();
        assert!((ens.mass() - 2.5).abs() < 1e-12);
        assert!(vecn::norm(&ens.momentum()) < 1e-12);
        // Energy per unit mass is N T = 3.
        assert!((ens.energy() / ens.mass() - 3.0).abs() < 0.15);
    }

    #[test]
    fn two_bump_modes_sit_at_offsets() {
        let c = SimConfig {
            particles: 4000,
            dimension: 3,
            initial: InitialCondition::TwoBump { offset: vec![2.0, 0.0, 0.0], width: 0.5 },
            ..SimConfig::default()
        };
        let ens = init_ensemble::<3>(&c).unwrap();
        let xs: Vec<f64> = ens.velocities().map(|v| v[0]).collect();
        let near = |a: f64| xs.iter().filter(|x| (*x - a).abs() < 0.5).count();
        assert!(near(2.0) > 1900 && near(-2.0) > 1900 && near(0.0) == 0);
    }

    #[test]
    fn elastic_collisions_conserve_energy() {
        let c = cfg(Frame::Original, 1.0);
        let mut ens = init_ensemble::<3>(&c).unwrap();
        let e0 = ens.energy();
        let law = RestitutionLaw::elastic();
        let k = AngularKernel::isotropic(Dimension::new(3).unwrap());
        for _ in 0..1000 {
            let s = collide_step(&mut ens, 0.01, &law, &k).unwrap();
            assert_eq!(s.energy_change, 0.0);
        }
        assert!((ens.energy() - e0).abs() < 1e-10 * e0);
        assert!(ens.counters().collisions > 0);
    }

    #[test]
    fn inelastic_step_matches_tally() {
        let c = cfg(Frame::Original, 0.8);
        let mut ens = init_ensemble::<3>(&c).unwrap();
        let law = RestitutionLaw::new(0.8).unwrap();
        let k = AngularKernel::isotropic(Dimension::new(3).unwrap());
        for _ in 0..50 {
            let before = ens.energy();
            let s = collide_step(&mut ens, 0.02, &law, &k).unwrap();
            assert!((ens.energy() - before - s.energy_change).abs() < 1e-11 * before);
        }
        assert!(ens.ledger_residual() < 1e-12);
    }

    #[test]
    fn drift_is_exact_and_frame_checked() {
        let mut ens = init_ensemble::<2>(&SimConfig {
            dimension: 2,
            particles: 100,
            frame: Frame::Rescaled,
            ..SimConfig::default()
        })
        .unwrap();
        let v0 = ens.velocity(7);
        let e0 = ens.energy();
        drift_rescale_step(&mut ens, 0.0).unwrap();
        assert_eq!(ens.velocity(7), v0);
        drift_rescale_step(&mut ens, 2f64.ln()).unwrap();
        assert!((ens.velocity(7)[0] - 2.0 * v0[0]).abs() < 1e-14 * v0[0].abs().max(1.0));
        assert!((ens.energy() - 4.0 * e0).abs() < 1e-12 * e0);
        let mut orig = init_ensemble::<2>(&SimConfig { dimension: 2, particles: 100, ..SimConfig::default() }).unwrap();
        assert!(matches!(drift_rescale_step(&mut orig, 0.1), Err(Error::Frame { .. })));
    }

    #[test]
    fn runs_are_deterministic() {
        let c = cfg(Frame::Rescaled, 0.8);
        let a = run::<3>(&c).unwrap();
        let b = run::<3>(&c).unwrap();
        assert_eq!(a.moments, b.moments);
        let other = run::<3>(&SimConfig { seed: 2, ..c }).unwrap();
        assert_ne!(a.moments.energy, other.moments.energy);
    }

    #[test]
    fn original_frame_energy_is_nonincreasing() {
        let c = SimConfig { t_final: 2.0, cadence: 0.1, ..cfg(Frame::Original, 0.8) };
        let out = run::<3>(&c).unwrap();
        assert!(out.moments.energy.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.moments.energy.iter().all(|e| *e > 0.0));
        assert!(out.moments.mass_drift() == 0.0);
        assert!(out.metadata.momentum_drift < 1e-10);
    }

    #[test]
    fn config_validation_collects_errors() {
        let c = SimConfig { restitution: 1.5, dt: Some(0.0), particles: 1, ..SimConfig::default() };
        let errs = c.validate();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs[0].contains("restitution out of [0,1]"));
    }

    #[test]
    fn replicas_are_ordered_and_distinct() {
        let c = SimConfig { particles: 500, t_final: 0.2, ..cfg(Frame::Original, 0.8) };
        let outs = run_replicas(&c, 3).unwrap();
        assert_eq!(outs[0].moments, run_any(&c).unwrap().moments);
        assert_ne!(outs[1].moments.energy, outs[2].moments.energy);
        let merged = merge_moments(&outs).unwrap();
        assert_eq!(merged.len(), outs[0].moments.len());
    }

    #[test]
    fn velocity_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        std::fs::write(&p, "# vx vy\n1.0, 2.0\n-1 0.5\n\n3 -2.5\n").unwrap();
        let v = read_velocities::<2>(&p).unwrap();
        assert_eq!(v.len(), 3);
        std::fs::write(&p, "1.0 2.0 3.0\n").unwrap();
        assert!(matches!(read_velocities::<2>(&p), Err(Error::Parse { .. })));
    }
}
