//! Raw-output producers, one per mode.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsmc::{self, Frame, ParticleEnsemble, RunMetadata, RunOutput, SimConfig, Stepper};
use crate::error::{Error, Result};
use crate::kernel::{uniform_sphere, AngularKernel, Dimension, RestitutionLaw};
use crate::observables::{self, histogram_from_samples, MomentSeries, VelocityHistogram, DEFAULT_ORDERS};
use crate::operator::{self, BallIndicator, Density, DensityGrid, Gaussian, QuadratureSpec, TestFunction};
use crate::quadrature::VelocityRule;
use crate::rescale::{self, ScalingState};
use crate::vecn::{self, Vector};

use super::config::{DensitySpec, ExperimentConfig, Mode};
use super::io::{self, Header, Stamp};
use super::report::Timing;

/// `metadata.json`: per-replica run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub runs: Vec<RunMetadata>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    stamp: Stamp,
    timings: Vec<Timing>,
}

impl Ctx<'_> {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: {seconds:.2} s");
        self.timings.push(Timing { stage: stage.to_string(), seconds });
        Ok(out)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn law_kernel(&self, n: usize) -> Result<(RestitutionLaw, AngularKernel)> {
        let law = RestitutionLaw::new(self.cfg.physics.restitution)?;
        let kernel = self.cfg.physics.kernel.build(Dimension::new(n)?)?;
        Ok((law, kernel))
    }
}

macro_rules! by_dim {
    ($n:expr, $f:ident($($arg:expr),*)) => {
        match $n {
            2 => $f::<2>($($arg),*),
            3 => $f::<3>($($arg),*),
            4 => $f::<4>($($arg),*),
            n => Err(Error::Domain(format!("supported dimensions are 2, 3 and 4, got {n}"))),
        }
    };
}

/// Runs the producer of `cfg.mode`, writing raw outputs into `dir`.
pub fn produce(cfg: &ExperimentConfig, dir: &Path, stamp: &Stamp) -> Result<Vec<Timing>> {
    let mut ctx = Ctx { cfg, dir, stamp: stamp.clone(), timings: Vec::new() };
    let n = cfg.physics.dimension;
    match cfg.mode {
        Mode::Simulate => by_dim!(n, simulate(&mut ctx))?,
        Mode::Haff => by_dim!(n, haff(&mut ctx))?,
        Mode::Selfsim => by_dim!(n, selfsim(&mut ctx, None))?,
        Mode::Tail => by_dim!(n, tail(&mut ctx))?,
        Mode::Transfer => transfer(&mut ctx)?,
        Mode::Qcheck => by_dim!(n, qcheck(&mut ctx))?,
        Mode::Stability => by_dim!(n, stability(&mut ctx))?,
        Mode::Report => return Err(Error::Domain("report mode has no producer".into())),
    }
    Ok(ctx.timings)
}

fn run_configured<const N: usize>(ctx: &mut Ctx, sim: &SimConfig) -> Result<Vec<RunOutput>> {
    let replicas = ctx.cfg.numerics.replicas;
    ctx.timed("dsmc", || {
        if replicas > 1 {
            dsmc::run_replicas(sim, replicas)
        } else {
            dsmc::run::<N>(sim).map(|o| vec![o])
        }
    })
}

/// Writes moments (merged over replicas), per-replica moments, histograms
/// of the first replica and metadata. Returns the merged series.
fn write_runs(ctx: &Ctx, outs: &[RunOutput]) -> Result<MomentSeries> {
    let merged = if outs.len() > 1 {
        for (k, o) in outs.iter().enumerate() {
            let stamp = Stamp { config_hash: ctx.stamp.config_hash.clone(), seed: o.metadata.seed };
            io::write_moments(&ctx.path(&format!("replica_{k:03}_moments.csv")), &o.moments, &stamp, None)?;
        }
        dsmc::merge_moments(outs)?
    } else {
        outs[0].moments.clone()
    };
    io::write_moments(&ctx.path(io::MOMENTS_FILE), &merged, &ctx.stamp, None)?;
    for h in &outs[0].histograms {
        io::write_histogram(&ctx.path(&io::histogram_name("hist", h.time)), h, &ctx.stamp)?;
    }
    write_metadata(ctx, outs.iter().map(|o| o.metadata.clone()).collect())?;
    Ok(merged)
}

fn write_metadata(ctx: &Ctx, runs: Vec<RunMetadata>) -> Result<()> {
    io::write_json(
        &ctx.path(io::METADATA_FILE),
        &MetadataFile {
            schema_version: super::config::SCHEMA_VERSION,
            config_hash: ctx.stamp.config_hash.clone(),
            seed: ctx.stamp.seed,
            runs,
        },
    )
}

/// One row of the dissipation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationRow {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `D(f̂)` of the radial histogram at the start of the step.
    pub d_hist: f64,
}

/// Steps an original-frame ensemble built from `sim` and records the
/// energy change of each step next to the dissipation functional of the
/// histogram taken before it.
pub fn dissipation_trace<const N: usize>(
    sim: &SimConfig,
    steps: usize,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
) -> Result<Vec<DissipationRow>> {
    let sim = SimConfig { frame: Frame::Original, ..sim.clone() };
    let mut ens = dsmc::init_ensemble::<N>(&sim)?;
    let mut stepper = Stepper::new(sim.dt);
    let mut rows = Vec::with_capacity(steps);
    for step in 0..steps {
        let before = ens.energy();
        let sigma = (before / (N as f64 * ens.mass())).sqrt();
        let hist = observables::radial_histogram(&ens, sim.histograms.bins, 8.0 * sigma)?;
        let d_hist = operator::dissipation_radial::<N>(&observables::histogram_shells(&hist)?, law, kernel)?;
        let t = ens.time();
        stepper.step(&mut ens, f64::INFINITY, law, kernel)?;
        rows.push(DissipationRow {
            step,
            t,
            dt: ens.time() - t,
            energy_before: before,
            energy_after: ens.energy(),
            d_hist,
        });
    }
    Ok(rows)
}

fn write_dissipation(path: &Path, rows: &[DissipationRow], stamp: &Stamp) -> Result<()> {
    let columns: Vec<String> =
        ["step", "t", "dt", "energy_before", "energy_after", "d_hist"].iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                io::f(r.t),
                io::f(r.dt),
                io::f(r.energy_before),
                io::f(r.energy_after),
                io::f(r.d_hist),
            ]
        })
        .collect();
    io::write_table(path, &Header::new("dissipation", stamp), &columns, &body)
}

fn simulate<const N: usize>(ctx: &mut Ctx) -> Result<()> {
    let sim = ctx.cfg.sim_config();
    let outs = run_configured::<N>(ctx, &sim)?;
    write_runs(ctx, &outs)?;
    let (law, kernel) = ctx.law_kernel(N)?;
    let steps = ctx.cfg.analysis.dissipation_steps;
    let rows = ctx.timed("dissipation", || dissipation_trace::<N>(&sim, steps, &law, &kernel))?;
    write_dissipation(&ctx.path(io::DISSIPATION_FILE), &rows, &ctx.stamp)
}

/// Resolves an input option to a file: a directory means `dir/default`.
fn input_file(ctx: &Ctx, default: &str) -> Result<PathBuf> {
    let input = ctx
        .cfg
        .analysis
        .input
        .clone()
        .ok_or_else(|| Error::MissingInputs(vec![format!("analysis.input (a {default} file or its directory)")]))?;
    let path = if input.is_dir() { input.join(default) } else { input };
    if !path.exists() {
        return Err(Error::MissingInputs(vec![path.display().to_string()]));
    }
    Ok(path)
}

fn write_transfer(ctx: &Ctx, series: &MomentSeries, direction: rescale::Direction) -> Result<()> {
    let state = ScalingState::new(ctx.cfg.physics.c_star, series.dimension)?;
    let out = rescale::transfer_series(series, direction, &state, None)?;
    io::write_moments(&ctx.path(io::TRANSFERRED_FILE), &out.series, &ctx.stamp, Some(&out.source_time))
}

fn haff<const N: usize>(ctx: &mut Ctx) -> Result<()> {
    let series = if ctx.cfg.analysis.input.is_some() {
        let file = io::read_moments(&input_file(ctx, io::MOMENTS_FILE)?)?;
        if file.series.dimension != N {
            return Err(Error::Domain(format!(
                "input series has N = {}, configuration N = {N}",
                file.series.dimension
            )));
        }
        io::write_moments(&ctx.path(io::MOMENTS_FILE), &file.series, &ctx.stamp, None)?;
        file.series
    } else {
        let sim = ctx.cfg.sim_config();
        let outs = run_configured::<N>(ctx, &sim)?;
        write_runs(ctx, &outs)?
    };
    if series.frame == Frame::Rescaled {
        write_transfer(ctx, &series, rescale::Direction::GToF)?;
    }
    Ok(())
}

fn transfer(ctx: &mut Ctx) -> Result<()> {
    let path = input_file(ctx, io::MOMENTS_FILE)?;
    let file = io::read_moments(&path)?;
    let direction = ctx.cfg.analysis.direction;
    io::write_moments(&ctx.path(io::MOMENTS_FILE), &file.series, &ctx.stamp, None)?;
    write_transfer(ctx, &file.series, direction)?;
    // Histograms next to the input series are mapped as well.
    if let Some(parent) = path.parent().filter(|p| p.is_dir()) {
        let state = ScalingState::new(ctx.cfg.physics.c_star, file.series.dimension)?;
        for h in io::list_histograms(parent, "hist")? {
            let hist = io::read_histogram(&h)?;
            if hist.frame != direction.source_frame() {
                continue;
            }
            let mapped = rescale::map_histogram(&hist, direction, &state)?;
            io::write_histogram(&ctx.path(&io::histogram_name("mapped", mapped.time)), &mapped, &ctx.stamp)?;
        }
    }
    Ok(())
}

/// Histogram of a velocity snapshot with explicit binning.
fn snapshot_histogram<const N: usize>(
    velocities: impl Iterator<Item = Vector<N>>,
    weight: f64,
    bins: usize,
    r_max: f64,
    frame: Frame,
    time: f64,
) -> Result<VelocityHistogram> {
    let mut speeds = Vec::new();
    let mut energy = 0.0;
    for v in velocities {
        let s2 = vecn::norm2(&v);
        energy += s2;
        speeds.push(s2.sqrt());
    }
    let mut h = histogram_from_samples(&speeds, weight, N, None, bins, 0.0, r_max)?;
    h.energy = weight * energy;
    h.frame = frame;
    h.time = time;
    Ok(h)
}

/// Rescaled run with histograms on a common binning at `times` (by default
/// every unit of time and the stationarity pair).
fn selfsim<const N: usize>(ctx: &mut Ctx, times: Option<Vec<f64>>) -> Result<()> {
    let mut sim = ctx.cfg.sim_config();
    sim.frame = Frame::Rescaled;
    sim.keep_snapshots = true;
    let t_final = sim.t_final;
    let mut hist_times = times.unwrap_or_else(|| {
        if sim.histograms.times.is_empty() {
            let mut ts: Vec<f64> = (1..=t_final.floor() as usize).map(|k| k as f64).collect();
            ts.extend(ctx.cfg.analysis.stationarity_times);
            ts.push(t_final);
            ts
        } else {
            sim.histograms.times.clone()
        }
    });
    hist_times.retain(|t| *t >= 0.0 && *t <= t_final);
    hist_times.sort_by(f64::total_cmp);
    hist_times.dedup();
    sim.histograms.times = hist_times;
    let mut out = ctx.timed("dsmc", || dsmc::run::<N>(&sim))?;
    let snapshots = std::mem::take(&mut out.snapshots);
    out.histograms.clear();
    io::write_moments(&ctx.path(io::MOMENTS_FILE), &out.moments, &ctx.stamp, None)?;
    write_metadata(ctx, vec![out.metadata.clone()])?;
    let last = snapshots.last().ok_or_else(|| Error::Domain("run produced no snapshots".into()))?;
    let r_max = match sim.histograms.r_max {
        Some(r) => r,
        None => {
            let e: f64 =
                last.velocities.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() * last.weight;
            8.0 * (e / (N as f64 * ctx.cfg.physics.mass)).sqrt()
        }
    };
    // Equal-volume shells keep the innermost count comparable to the others.
    let pos_edges =
        observables::equal_volume_edges(ctx.cfg.analysis.positivity_radius, ctx.cfg.analysis.positivity_bins, N);
    for s in &snapshots {
        let vel = || s.velocities.iter().map(|v| -> Vector<N> { std::array::from_fn(|i| v[i]) });
        let h = snapshot_histogram::<N>(vel(), s.weight, sim.histograms.bins, r_max, Frame::Rescaled, s.time)?;
        io::write_histogram(&ctx.path(&io::histogram_name("hist", s.time)), &h, &ctx.stamp)?;
        let speeds: Vec<f64> = vel().map(|v| vecn::norm(&v)).collect();
        let mut p = observables::radial_histogram_on_edges(&speeds, s.weight, N, pos_edges.clone())?;
        p.energy = h.energy;
        p.frame = Frame::Rescaled;
        p.time = s.time;
        io::write_histogram(&ctx.path(&io::histogram_name("pos", s.time)), &p, &ctx.stamp)?;
        if ctx.cfg.output.dump_velocities {
            io::write_json(
                &ctx.path(&io::snapshot_name(s.time)),
                &io::SnapshotFile {
                    schema_version: super::config::SCHEMA_VERSION,
                    config_hash: ctx.stamp.config_hash.clone(),
                    seed: ctx.stamp.seed,
                    frame: Frame::Rescaled,
                    time: s.time,
                    weight: s.weight,
                    velocities: s.velocities.clone(),
                },
            )?;
        }
    }
    Ok(())
}

fn tail<const N: usize>(ctx: &mut Ctx) -> Result<()> {
    let Some(input) = ctx.cfg.analysis.input.clone() else {
        let t_final = ctx.cfg.numerics.t_final;
        return selfsim::<N>(ctx, Some(vec![t_final]));
    };
    let files = if input.is_dir() { io::list_histograms(&input, "hist")? } else { vec![input.clone()] };
    if files.is_empty() {
        return Err(Error::MissingInputs(vec![format!("{}/hist_t*.csv", input.display())]));
    }
    for f in files {
        let h = io::read_histogram(&f)?;
        io::write_histogram(&ctx.path(&io::histogram_name("hist", h.time)), &h, &ctx.stamp)?;
    }
    Ok(())
}

/// Analytic density of a configuration block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Analytic<const N: usize> {
    Gaussian(Gaussian<N>),
    Ball(BallIndicator<N>),
}

impl<const N: usize> Analytic<N> {
    pub fn from_spec(spec: &DensitySpec) -> Self {
        let vec = |v: &[f64]| -> Vector<N> { std::array::from_fn(|i| v.get(i).copied().unwrap_or(0.0)) };
        match spec {
            DensitySpec::Gaussian { mass, mean, temperature } => {
                Analytic::Gaussian(Gaussian::new(*mass, vec(mean), *temperature))
            }
            DensitySpec::Ball { center, radius, height } => {
                Analytic::Ball(BallIndicator { center: vec(center), radius: *radius, height: *height })
            }
        }
    }

    /// Half-width holding the bulk of the density, `width` thermal speeds
    /// past the mean for a Gaussian.
    pub fn core(&self, width: f64) -> f64 {
        match self {
            Analytic::Gaussian(g) => vecn::norm(&g.mean) + width * g.temperature.sqrt(),
            Analytic::Ball(b) => vecn::norm(&b.center) + b.radius,
        }
    }

    /// Half-width of a grid holding the density.
    pub fn extent(&self) -> f64 {
        match self {
            Analytic::Gaussian(g) => vecn::norm(&g.mean) + 8.0 * g.temperature.sqrt(),
            Analytic::Ball(b) => vecn::norm(&b.center) + 1.25 * b.radius,
        }
    }
}

impl<const N: usize> Density<N> for Analytic<N> {
    fn value(&self, v: &Vector<N>) -> f64 {
        match self {
            Analytic::Gaussian(g) => g.value(v),
            Analytic::Ball(b) => b.value(v),
        }
    }

    fn support_ball(&self) -> (Vector<N>, f64) {
        match self {
            Analytic::Gaussian(g) => g.support_ball(),
            Analytic::Ball(b) => b.support_ball(),
        }
    }
}

/// Deterministic probe velocities, uniform in the ball of `radius`.
pub fn probe_velocities<const N: usize>(count: usize, radius: f64, seed: u64) -> Vec<Vector<N>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let d: Vector<N> = uniform_sphere(&mut rng);
            vecn::scale(&d, radius * rng.random::<f64>().powf(1.0 / N as f64))
        })
        .collect()
}

fn grid_points<const N: usize>(points: usize) -> usize {
    if N <= 3 {
        points
    } else {
        points.min(25)
    }
}

/// One probe of the gain-term comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow<const N: usize> {
    pub v: Vector<N>,
    /// `NaN` when the strong form is undefined (`e = 0`).
    pub direct: f64,
    pub carleman: f64,
    pub q_minus: f64,
    pub error_estimate: f64,
}

/// Direct and Carleman gain terms with loss terms at each probe.
pub fn probe_gain<const N: usize>(
    g: &impl Density<N>,
    f: &impl Density<N>,
    g_grid: &DensityGrid<N>,
    probes: &[Vector<N>],
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<Vec<ProbeRow<N>>> {
    probes
        .iter()
        .map(|v| {
            let (carleman, ec) =
                operator::with_error_estimate(quad, |q| operator::q_plus_carleman(g, f, v, law, kernel, q))?;
            let (direct, ed) = if law.e() > 0.0 {
                operator::with_error_estimate(quad, |q| operator::q_plus_direct(g, f, v, law, kernel, q))?
            } else {
                (f64::NAN, 0.0)
            };
            Ok(ProbeRow {
                v: *v,
                direct,
                carleman,
                q_minus: operator::q_minus(g_grid, f, v),
                error_estimate: ec.max(ed),
            })
        })
        .collect()
}

/// One probe of the Jensen lower bound `(g ∗ |·|)(v) ≥ |ρ v − P|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenRow {
    pub density: usize,
    pub probe: usize,
    pub speed: f64,
    pub loss_rate: f64,
    pub bound: f64,
    pub tolerance: f64,
}

/// Jensen probes for one density, with a tolerance from a coarser grid.
pub fn jensen_rows<const N: usize>(
    index: usize,
    density: &impl Density<N>,
    extent: f64,
    points: usize,
    probes: &[Vector<N>],
) -> Result<Vec<JensenRow>> {
    let fine = DensityGrid::sample(extent, points, density)?;
    let coarse = DensityGrid::sample(extent, (2 * points / 3) | 1, density)?;
    let rho = fine.mass();
    let p = fine.momentum();
    Ok(probes
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let l = operator::loss_rate(&fine, v);
            let lc = operator::loss_rate(&coarse, v);
            let bound = vecn::norm(&vecn::sub(&vecn::scale(v, rho), &p));
            JensenRow {
                density: index,
                probe: k,
                speed: vecn::norm(v),
                loss_rate: l,
                bound,
                tolerance: (l - lc).abs() + 1e-12 * l,
            }
        })
        .collect())
}

/// Strong and weak forms of `∫ Q⁺(g, f) ψ` for `ψ ∈ {1, v_i, |v|²}`, in the
/// order `1, v_0 … v_{N-1}, |v|²`. The strong side integrates pointwise
/// values on an axisymmetric rule of `order`, so both densities must be
/// symmetric about the first axis. The weak side uses a tensor rule of
/// `velocity_order` per axis.
pub fn weak_strong_moments<const N: usize>(
    g: &Analytic<N>,
    f: &Analytic<N>,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    order: usize,
    velocity_order: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tests: Vec<TestFunction> = std::iter::once(TestFunction::One)
        .chain((0..N).map(TestFunction::Component))
        .chain(std::iter::once(TestFunction::SpeedSquared))
        .collect();
    let quad = QuadratureSpec::uniform(12);
    let rule = VelocityRule::<N>::axisymmetric(f.core(6.0).max(g.core(6.0)), order);
    let mut strong = vec![0.0; tests.len()];
    for (v, w) in rule.nodes.iter().zip(&rule.weights) {
        let q = operator::q_plus_direct(g, f, v, law, kernel, &quad)?;
        for (s, psi) in strong.iter_mut().zip(&tests) {
            *s += w * q * psi.eval(v);
        }
    }
    // Components off the symmetry axis vanish by symmetry; the rule only
    // samples the half-plane, so they are set explicitly.
    for s in strong.iter_mut().skip(2).take(N - 1) {
        *s = 0.0;
    }
    let fm = operator::discretize(f, &VelocityRule::tensor_gauss(f.core(5.0), velocity_order));
    let gm = operator::discretize(g, &VelocityRule::tensor_gauss(g.core(5.0), velocity_order));
    let angular = if kernel.is_isotropic() { 4 } else { 12 };
    let weak = tests.iter().map(|psi| operator::weak_moment(&fm, &gm, psi, law, kernel, angular)).collect();
    Ok((strong, weak))
}

fn on_axis<const N: usize>(d: &Analytic<N>) -> bool {
    let c = match d {
        Analytic::Gaussian(g) => g.mean,
        Analytic::Ball(b) => b.center,
    };
    c.iter().skip(1).all(|x| *x == 0.0)
}

fn qcheck<const N: usize>(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (law, kernel) = ctx.law_kernel(N)?;
    let op = &cfg.operator;
    let f = Analytic::<N>::from_spec(&op.f);
    let g = Analytic::<N>::from_spec(&op.g);
    let quad = cfg.numerics.quadrature.clone();
    let spread = op.f.spread().max(op.g.spread());
    let probes: Vec<Vector<N>> = if quad.targets.is_empty() {
        probe_velocities::<N>(op.probes, op.probe_radius * spread, cfg.seed)
    } else {
        quad.targets.iter().map(|t| std::array::from_fn(|i| t[i])).collect()
    };
    let extent = cfg.numerics.grid.extent.unwrap_or_else(|| f.extent().max(g.extent()));
    let points = grid_points::<N>(cfg.numerics.grid.points);
    let g_grid = DensityGrid::sample(extent, points, &g)?;
    let rows = ctx.timed("gain_terms", || probe_gain(&g, &f, &g_grid, &probes, &law, &kernel, &quad))?;
    let mut columns = vec!["v_index".to_string()];
    columns.extend((0..N).map(|i| format!("v{i}")));
    columns.extend(["q_plus_direct", "q_plus_carleman", "rel_err", "q_minus", "error_estimate"].map(String::from));
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut row = vec![k.to_string()];
            row.extend(r.v.iter().map(|x| io::f(*x)));
            let rel = (r.direct - r.carleman).abs() / r.direct.abs();
            row.extend([r.direct, r.carleman, rel, r.q_minus, r.error_estimate].map(io::f));
            row
        })
        .collect();
    let mut header = Header::new("qcheck", &ctx.stamp);
    header.set("dimension", N);
    header.set("restitution", law.e());
    io::write_table(&ctx.path(io::QCHECK_FILE), &header, &columns, &body)?;

    // Jensen bound on g, f (when distinct) and a ball.
    let mut densities: Vec<Analytic<N>> = vec![g];
    if f != g {
        densities.push(f);
    }
    densities.push(Analytic::Ball(BallIndicator { center: [0.0; N], radius: 1.5 * spread, height: 1.0 }));
    let jprobes = probe_velocities::<N>(2 * op.probes.max(10), op.probe_radius * spread, cfg.seed ^ 0x4a45_4e53);
    let jensen = ctx.timed("jensen", || {
        let mut all = Vec::new();
        for (k, d) in densities.iter().enumerate() {
            all.extend(jensen_rows(k, d, d.extent().max(extent), points, &jprobes)?);
        }
        Ok(all)
    })?;
    let jcols: Vec<String> =
        ["density", "v_index", "speed", "loss_rate", "bound", "tolerance"].map(String::from).to_vec();
    let jbody: Vec<Vec<String>> = jensen
        .iter()
        .map(|r| {
            vec![
                r.density.to_string(),
                r.probe.to_string(),
                io::f(r.speed),
                io::f(r.loss_rate),
                io::f(r.bound),
                io::f(r.tolerance),
            ]
        })
        .collect();
    io::write_table(&ctx.path(io::JENSEN_FILE), &Header::new("jensen", &ctx.stamp), &jcols, &jbody)?;

    // Scalar operator values: (name, value, reference).
    let mut values: Vec<(String, f64, f64)> = Vec::new();
    let names = |prefix: &str| -> Vec<String> {
        std::iter::once(format!("{prefix}_mass"))
            .chain((0..N).map(|i| format!("{prefix}_momentum_{i}")))
            .chain(std::iter::once(format!("{prefix}_energy")))
            .collect()
    };
    if op.weak_check && N == 3 && law.e() > 0.0 && on_axis(&f) && on_axis(&g) {
        let (strong, weak) = ctx.timed("weak_form", || {
            weak_strong_moments(&g, &f, &law, &kernel, op.weak_order, cfg.numerics.quadrature.velocity_order.min(12))
        })?;
        for ((name, w), s) in names("weak").into_iter().zip(weak).zip(strong) {
            values.push((name, w, s));
        }
    }
    let residuals = ctx.timed("moment_residuals", || {
        let order = match N {
            2 => cfg.numerics.quadrature.velocity_order,
            3 => cfg.numerics.quadrature.velocity_order.min(10),
            _ => cfg.numerics.quadrature.velocity_order.min(5),
        };
        let fm = operator::discretize(&f, &VelocityRule::tensor_gauss(f.extent(), order));
        let r =
            operator::collision_moment_check(&fm, &law, &kernel, 4.max(cfg.numerics.quadrature.angular_order.min(8)))?;
        let mass: f64 = fm.iter().map(|(_, m)| m).sum();
        let energy: f64 = fm.iter().map(|(v, m)| m * vecn::norm2(v)).sum();
        Ok((r, mass, energy))
    })?;
    let (r, mass, energy) = residuals;
    let scale = (mass * energy).sqrt();
    values.push(("residual_mass".into(), r.mass_residual, mass));
    for i in 0..N {
        values.push((format!("residual_momentum_{i}"), r.momentum_residual[i], scale));
    }
    values.push(("residual_energy".into(), r.energy_residual, r.dissipation.max(f64::MIN_POSITIVE)));
    if op.spreading && (law.e() > 0.0 || N == 3) {
        let radius = ctx.timed("spreading", || {
            operator::spreading_support::<N>(&law, &kernel, &QuadratureSpec::uniform(op.spreading_order))
        })?;
        let e = law.e();
        values.push(("spreading_radius".into(), radius, 0.98 * (1.0 + ((1.0 + e) / 2.0).powi(2)).sqrt()));
    }
    let vcols: Vec<String> = ["name", "value", "reference"].map(String::from).to_vec();
    let vbody: Vec<Vec<String>> = values.iter().map(|(n, v, r)| vec![n.clone(), io::f(*v), io::f(*r)]).collect();
    io::write_table(&ctx.path(io::OPERATOR_FILE), &header_op(&ctx.stamp, N, law.e()), &vcols, &vbody)
}

fn header_op(stamp: &Stamp, n: usize, e: f64) -> Header {
    let mut h = Header::new("operator_values", stamp);
    h.set("dimension", n);
    h.set("restitution", e);
    h
}

fn ensemble_histogram<const N: usize>(ens: &ParticleEnsemble<N>, bins: usize, r_max: f64) -> Result<VelocityHistogram> {
    observables::radial_histogram(ens, bins, r_max)
}

/// Velocity scale factor `λ` such that the weighted L¹ distance between the
/// histograms of `v` and `λ v` equals `target`.
pub fn calibrate_perturbation<const N: usize>(v: &[Vector<N>], weight: f64, bins: usize, target: f64) -> Result<f64> {
    let e: f64 = v.iter().map(vecn::norm2).sum::<f64>() * weight;
    let mass = weight * v.len() as f64;
    let sigma = (e / (N as f64 * mass)).sqrt();
    // Same binning as the run: 12 thermal speeds of the hotter ensemble.
    let hist = |lambda: f64, r_max: f64| {
        let speeds: Vec<f64> = v.iter().map(|w| lambda * vecn::norm(w)).collect();
        histogram_from_samples(&speeds, weight, N, None, bins, 0.0, r_max)
    };
    let dist = |lambda: f64| -> Result<f64> {
        let r_max = 12.0 * sigma * lambda;
        observables::stability_metric(&hist(1.0, r_max)?, &hist(lambda, r_max)?)
    };
    let (mut lo, mut hi) = (1.0, 1.5);
    if dist(hi)? < target {
        return Err(Error::Domain(format!("perturbation {target} is too large to reach by rescaling velocities")));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if dist(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn stability<const N: usize>(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (law, kernel) = ctx.law_kernel(N)?;
    let mut sim = cfg.sim_config();
    sim.frame = Frame::Rescaled;
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let va = dsmc::sample_initial::<N>(&sim.initial, sim.particles, &mut rng)?;
    let stream: u64 = rng.random();
    let weight = sim.mass / sim.particles as f64;
    let bins = sim.histograms.bins;
    let lambda = calibrate_perturbation(&va, weight, bins, cfg.analysis.perturbation)?;
    let vb: Vec<Vector<N>> = va.iter().map(|v| vecn::scale(v, lambda)).collect();
    let mut a = ParticleEnsemble::from_velocities(va, sim.mass, Frame::Rescaled, 0.0, stream)?;
    let mut b = ParticleEnsemble::from_velocities(vb, sim.mass, Frame::Rescaled, 0.0, stream)?;
    let (mut sa, mut sb) = (Stepper::new(sim.dt), Stepper::new(sim.dt));
    let mut series = MomentSeries::new(Frame::Rescaled, N, &DEFAULT_ORDERS);
    let mut rows = Vec::new();
    let k = (sim.t_final / sim.cadence + 1e-9).floor() as usize;
    ctx.timed("dsmc_pair", || {
        for i in 0..=k {
            let t = (i as f64 * sim.cadence).min(sim.t_final);
            sa.advance_until(&mut a, t, &law, &kernel)?;
            sb.advance_until(&mut b, t, &law, &kernel)?;
            let sigma = (a.energy().max(b.energy()) / (N as f64 * sim.mass)).sqrt();
            let d = observables::stability_metric(
                &ensemble_histogram(&a, bins, 12.0 * sigma)?,
                &ensemble_histogram(&b, bins, 12.0 * sigma)?,
            )?;
            rows.push(vec![io::f(t), io::f(d)]);
            series.push(t, &observables::moments(&a, &DEFAULT_ORDERS))?;
        }
        Ok(())
    })?;
    let mut header = Header::new("stability", &ctx.stamp);
    header.set("lambda", lambda);
    io::write_table(&ctx.path(io::STABILITY_FILE), &header, &["t".to_string(), "distance".to_string()], &rows)?;
    io::write_moments(&ctx.path(io::MOMENTS_FILE), &series, &ctx.stamp, None)?;
    Ok(())
}

/// Whether `name` is a file this crate writes into an output directory.
fn is_output_file(name: &str) -> bool {
    const FIXED: [&str; 14] = [
        io::CONFIG_FILE,
        io::METADATA_FILE,
        io::MOMENTS_FILE,
        io::TRANSFERRED_FILE,
        io::DISSIPATION_FILE,
        io::QCHECK_FILE,
        io::JENSEN_FILE,
        io::OPERATOR_FILE,
        io::STABILITY_FILE,
        io::TIMINGS_FILE,
        io::REPORT_FILE,
        io::SUMMARY_FILE,
        io::PLOT_ENERGY_FILE,
        io::PLOT_TAIL_FILE,
    ];
    FIXED.contains(&name)
        || (["hist_t", "pos_t", "mapped_t"].iter().any(|p| name.starts_with(p)) && name.ends_with(".csv"))
        || (name.starts_with("snapshot_t") && name.ends_with(".json"))
        || (name.starts_with("replica_") && name.ends_with("_moments.csv"))
}

/// Removes outputs of an earlier run so an analysis never mixes runs.
/// Other files are left alone.
pub fn clear_outputs(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if is_output_file(&name) && entry.path().is_file() {
            fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    Ok(())
}
