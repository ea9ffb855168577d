//! Checks computed from persisted raw outputs only.

use std::path::Path;

use crate::dsmc::Frame;
use crate::error::{Error, Result};
use crate::kernel::{angular_momentum_mb, tau_of, Dimension, RestitutionLaw};
use crate::observables::{
    self, anchors, energy_bounds_check, haff_fit, invariant_radius, invariant_set_check, normalized_series,
    positivity_check, tail_fit, CheckOutcome, MomentSeries, VelocityHistogram,
};
use crate::rescale::{self, Direction, ScalingState};

use super::config::{ExperimentConfig, Mode};
use super::io::{self, Stamp};
use super::produce::MetadataFile;
use super::report::{PlotHints, RunReport};

/// Files each mode needs, relative to the raw-output directory.
pub fn required_files(mode: Mode) -> Vec<&'static str> {
    let mut v = vec![io::CONFIG_FILE];
    v.extend(match mode {
        Mode::Simulate => vec![io::MOMENTS_FILE, io::METADATA_FILE, io::DISSIPATION_FILE],
        Mode::Selfsim => vec![io::MOMENTS_FILE, io::METADATA_FILE, "hist_t*.csv"],
        Mode::Haff => vec![io::MOMENTS_FILE],
        Mode::Tail => vec!["hist_t*.csv"],
        Mode::Transfer => vec![io::MOMENTS_FILE, io::TRANSFERRED_FILE],
        Mode::Qcheck => vec![io::QCHECK_FILE, io::JENSEN_FILE, io::OPERATOR_FILE],
        Mode::Stability => vec![io::STABILITY_FILE, io::MOMENTS_FILE],
        Mode::Report => vec![],
    });
    v
}

/// Lists required files that are absent from `dir`.
pub fn missing_files(dir: &Path, mode: Mode) -> Result<Vec<String>> {
    let mut missing = Vec::new();
    for name in required_files(mode) {
        let present = match name.strip_suffix("_t*.csv") {
            Some(prefix) => !io::list_histograms(dir, prefix)?.is_empty(),
            None => dir.join(name).is_file(),
        };
        if !present {
            missing.push(dir.join(name).display().to_string());
        }
    }
    Ok(missing)
}

fn tau_of_config(cfg: &ExperimentConfig) -> Result<f64> {
    let dim = Dimension::new(cfg.physics.dimension)?;
    let kernel = cfg.physics.kernel.build(dim)?;
    let mb = angular_momentum_mb(&kernel, dim)?;
    Ok(tau_of(mb, &RestitutionLaw::new(cfg.physics.restitution)?))
}

fn read_histograms(dir: &Path, prefix: &str) -> Result<Vec<VelocityHistogram>> {
    io::list_histograms(dir, prefix)?.iter().map(|p| io::read_histogram(p)).collect()
}

fn conservation_checks(report: &mut RunReport, series: &MomentSeries) {
    let m0 = series.mass.first().copied().unwrap_or(0.0);
    let mass_dev = series.mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
    report.check(CheckOutcome::new("mass_conservation", mass_dev == 0.0, mass_dev, 0.0, anchors::CONSERVATION));
    let drift = series.momentum_drift();
    report.check(CheckOutcome::new("momentum_drift", drift < 1e-10, drift, 1e-10, anchors::CONSERVATION));
}

fn metadata_checks(report: &mut RunReport, dir: &Path) -> Result<()> {
    let meta: MetadataFile = io::read_json(&dir.join(io::METADATA_FILE))?;
    let worst = meta.runs.iter().map(|r| r.ledger_residual).fold(0.0, f64::max);
    report.check(CheckOutcome::new("energy_ledger", worst <= 1e-9, worst, 1e-9, anchors::DISSIPATION));
    let violations: u64 = meta.runs.iter().map(|r| r.counters.majorant_violations).sum();
    let candidates: u64 = meta.runs.iter().map(|r| r.counters.candidates).sum();
    report.observe("majorant_violations", violations);
    report.observe("candidates", candidates);
    report.observe("collisions", meta.runs.iter().map(|r| r.counters.collisions).sum::<u64>());
    report.observe("dt_halvings", meta.runs.iter().map(|r| r.dt_halvings).max().unwrap_or(0));
    Ok(())
}

/// Energy must not increase between samples of an original-frame run.
fn monotone_energy_check(report: &mut RunReport, series: &MomentSeries) {
    let e0 = series.energy.first().copied().unwrap_or(1.0).abs().max(f64::MIN_POSITIVE);
    let rise = series.energy.windows(2).map(|w| (w[1] - w[0]) / e0).fold(f64::NEG_INFINITY, f64::max);
    let rise = if rise.is_finite() { rise } else { 0.0 };
    report.check(CheckOutcome::new("energy_nonincreasing", rise <= 1e-12, rise, 1e-12, anchors::DISSIPATION));
}

/// Agreement of the measured energy rate with `−D(f̂)` in standard errors.
pub fn dissipation_identity(dt: &[f64], before: &[f64], after: &[f64], d_hist: &[f64]) -> (f64, f64, f64) {
    let k = dt.len() as f64;
    let rates: Vec<f64> = dt.iter().zip(before.iter().zip(after)).map(|(h, (a, b))| (b - a) / h).collect();
    let mean = rates.iter().sum::<f64>() / k;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let d = d_hist.iter().sum::<f64>() / k;
    let stderr = (var / k).sqrt();
    ((mean + d).abs() / stderr, mean, d)
}

fn analyze_dissipation(report: &mut RunReport, dir: &Path) -> Result<()> {
    let t = io::read_table(&dir.join(io::DISSIPATION_FILE))?;
    let (dt, before, after, d) =
        (t.floats("dt")?, t.floats("energy_before")?, t.floats("energy_after")?, t.floats("d_hist")?);
    if dt.len() < 2 {
        return Err(Error::parse(&t.path, "need at least two steps"));
    }
    let (z, rate, dmean) = dissipation_identity(&dt, &before, &after, &d);
    report.observe("dissipation_rate_measured", rate);
    report.observe("dissipation_functional", dmean);
    report.check(CheckOutcome::new("dissipation_identity", z <= 3.0, z, 3.0, anchors::DISSIPATION));
    Ok(())
}

fn energy_bound_checks(report: &mut RunReport, cfg: &ExperimentConfig, series: &MomentSeries) -> Result<()> {
    let tau = tau_of_config(cfg)?;
    let b = energy_bounds_check(&series.times, &series.energy, cfg.physics.mass, tau, cfg.analysis.t_transient);
    if let Some(upper) = b.upper_bound {
        report.check(CheckOutcome::new("energy_sup", b.upper_pass, b.sup, upper, anchors::ENERGY_SUP));
    } else if let Some(n) = &b.notice {
        report.observe("energy_sup", n);
    }
    report.check(CheckOutcome::new(
        "energy_inf_after_transient",
        b.lower_pass,
        b.inf_after_transient,
        0.0,
        anchors::ENERGY_INF,
    ));
    report.observe("energy_bounds", &b);
    Ok(())
}

/// `E(t)(1 + c t)²` of the original-frame image, compared over the times
/// after the transient.
fn haff_envelope_check(report: &mut RunReport, cfg: &ExperimentConfig, series: &MomentSeries) -> Result<()> {
    let state = ScalingState::new(cfg.physics.c_star, series.dimension)?;
    let out = rescale::transfer_series(series, Direction::GToF, &state, None)?;
    let ys: Vec<f64> = out
        .series
        .times
        .iter()
        .zip(&out.series.energy)
        .zip(&out.source_time)
        .filter(|(_, tau)| **tau >= cfg.analysis.t_transient)
        .map(|((t, e), _)| e * (1.0 + cfg.physics.c_star * t).powi(2))
        .collect();
    if ys.is_empty() {
        report.observe("haff_envelope", "no samples after the transient");
        return Ok(());
    }
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = hi / lo;
    report.check(CheckOutcome::new("haff_envelope_ratio", lo > 0.0 && ratio < 10.0, ratio, 10.0, anchors::HAFF));
    Ok(())
}

fn nearest(hists: &[VelocityHistogram], t: f64) -> Option<&VelocityHistogram> {
    hists.iter().find(|h| (h.time - t).abs() <= 1e-6 * t.abs().max(1.0))
}

fn tail_check(report: &mut RunReport, cfg: &ExperimentConfig, hist: &VelocityHistogram, hints: &mut PlotHints) {
    let window = cfg.analysis.tail_window.map(|w| (w[0], w[1]));
    match tail_fit(hist, window, &cfg.analysis.tail_candidates) {
        Ok(fit) => {
            let s1 = fit.candidates.iter().find(|c| c.s == 1.0);
            let others = fit.candidates.iter().filter(|c| c.s != 1.0).map(|c| c.rms).fold(f64::INFINITY, f64::min);
            let (pass, value) = match s1 {
                Some(c) => (c.rms < others, c.rms - others),
                None => (false, f64::NAN),
            };
            report.check(CheckOutcome::new("tail_order_s1", pass, value, 0.0, anchors::TAIL));
            hints.tail_window = Some(fit.window);
            report.observe("tail_fit", &fit);
        }
        Err(e) => {
            report.check(CheckOutcome::new("tail_order_s1", false, f64::NAN, 0.0, anchors::TAIL));
            report.observe("tail_fit_error", e.to_string());
        }
    }
}

fn invariant_check(report: &mut RunReport, cfg: &ExperimentConfig, series: &MomentSeries) -> Result<()> {
    let z = normalized_series(series, cfg.analysis.moment_a)?;
    let t0 = cfg.analysis.invariant_t0;
    let idx: Vec<usize> = (0..series.len()).filter(|i| series.times[*i] >= t0).collect();
    let Some(first) = idx.first() else {
        report.check(CheckOutcome::new("moment_invariant_set", false, f64::NAN, 0.0, anchors::INVARIANT_SET));
        report.observe("moment_invariant_set", format!("no samples after t0 = {t0}"));
        return Ok(());
    };
    let x = invariant_radius(&z[*first], cfg.analysis.invariant_inflate);
    let times: Vec<f64> = idx.iter().map(|i| series.times[*i]).collect();
    let zs: Vec<_> = idx.iter().map(|i| z[*i].clone()).collect();
    let r = invariant_set_check(&times, &zs, x)?;
    report.check(CheckOutcome::new(
        "moment_invariant_set",
        r.pass && x.is_finite(),
        x,
        f64::INFINITY,
        anchors::INVARIANT_SET,
    ));
    let last = &z[*idx.last().expect("nonempty")];
    report.observe("z_p_final", last.orders.iter().zip(&last.z).collect::<Vec<_>>());
    report.observe("moment_invariant_report", &r);
    Ok(())
}

fn analyze_selfsim(report: &mut RunReport, cfg: &ExperimentConfig, dir: &Path, hints: &mut PlotHints) -> Result<()> {
    let series = io::read_moments(&dir.join(io::MOMENTS_FILE))?.series;
    if series.frame != Frame::Rescaled {
        return Err(Error::Frame { expected: "rescaled", found: series.frame.name() });
    }
    conservation_checks(report, &series);
    metadata_checks(report, dir)?;
    energy_bound_checks(report, cfg, &series)?;
    haff_envelope_check(report, cfg, &series)?;
    invariant_check(report, cfg, &series)?;
    let hists = read_histograms(dir, "hist")?;
    let [ta, tb] = cfg.analysis.stationarity_times;
    match (nearest(&hists, ta), nearest(&hists, tb)) {
        (Some(a), Some(b)) => {
            let d = observables::l1_distance(a, b)?;
            let tol = cfg.analysis.stationarity_tolerance;
            report.check(CheckOutcome::new("profile_stationarity_l1", d < tol, d, tol, anchors::STATIONARITY));
        }
        _ => report.observe("profile_stationarity_l1", format!("no histograms at t = {ta} and t = {tb}")),
    }
    let last = hists.last().ok_or_else(|| Error::MissingInputs(vec![dir.join("hist_t*.csv").display().to_string()]))?;
    tail_check(report, cfg, last, hints);
    hints.histogram = Some(io::histogram_name("hist", last.time));
    let pos = read_histograms(dir, "pos")?;
    if !pos.is_empty() && pos.iter().any(|h| h.time >= cfg.analysis.t_star) {
        let p = positivity_check(&pos, cfg.analysis.positivity_radius, cfg.analysis.t_star)?;
        report.check(CheckOutcome::new("positivity", p.pass, p.min_density, 0.0, anchors::POSITIVITY));
        report.observe("positivity", &p);
    }
    hints.moments = Some(io::MOMENTS_FILE.into());
    Ok(())
}

fn analyze_haff(report: &mut RunReport, cfg: &ExperimentConfig, dir: &Path, hints: &mut PlotHints) -> Result<()> {
    let series = io::read_moments(&dir.join(io::MOMENTS_FILE))?.series;
    conservation_checks(report, &series);
    let original = match series.frame {
        Frame::Original => {
            hints.moments = Some(io::MOMENTS_FILE.into());
            series
        }
        Frame::Rescaled => {
            let path = dir.join(io::TRANSFERRED_FILE);
            if !path.is_file() {
                return Err(Error::MissingInputs(vec![path.display().to_string()]));
            }
            hints.moments = Some(io::TRANSFERRED_FILE.into());
            haff_envelope_check(report, cfg, &series)?;
            io::read_moments(&path)?.series
        }
    };
    let w = (cfg.analysis.haff_window[0], cfg.analysis.haff_window[1]);
    hints.haff_window = Some(w);
    match haff_fit(&original.times, &original.energy, w) {
        Ok(fit) => {
            report.check(CheckOutcome::new(
                "haff_slope",
                (fit.slope + 2.0).abs() <= 0.15,
                fit.slope,
                0.15,
                anchors::HAFF,
            ));
            hints.haff_slope = Some(fit.slope);
            report.observe("haff_fit", fit);
        }
        Err(e) => {
            report.check(CheckOutcome::new("haff_slope", false, f64::NAN, 0.15, anchors::HAFF));
            report.observe("haff_fit_error", e.to_string());
        }
    }
    Ok(())
}

fn analyze_transfer(report: &mut RunReport, cfg: &ExperimentConfig, dir: &Path, hints: &mut PlotHints) -> Result<()> {
    let source = io::read_moments(&dir.join(io::MOMENTS_FILE))?.series;
    let target = io::read_moments(&dir.join(io::TRANSFERRED_FILE))?.series;
    let direction = cfg.analysis.direction;
    let back_dir = match direction {
        Direction::FToG => Direction::GToF,
        Direction::GToF => Direction::FToG,
    };
    let state = ScalingState::new(cfg.physics.c_star, source.dimension)?;
    let back = rescale::transfer_series(&target, back_dir, &state, None)?.series;
    let rel = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
    };
    let mut err =
        rel(&source.energy, &back.energy).max(rel(&source.mass, &back.mass)).max(rel(&source.times, &back.times));
    for (a, b) in source.m.iter().zip(&back.m) {
        err = err.max(rel(a, b));
    }
    report.check(CheckOutcome::new("transfer_round_trip", err <= 1e-10, err, 1e-10, anchors::MOMENT_TRANSFER));
    hints.moments = Some(if target.frame == Frame::Original { io::TRANSFERRED_FILE } else { io::MOMENTS_FILE }.into());
    Ok(())
}

fn analyze_qcheck(report: &mut RunReport, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let q = io::read_table(&dir.join(io::QCHECK_FILE))?;
    let direct = q.floats("q_plus_direct")?;
    let carleman = q.floats("q_plus_carleman")?;
    let q_minus = q.floats("q_minus")?;
    let e = cfg.physics.restitution;
    if e > 0.0 {
        let worst = direct.iter().zip(&carleman).map(|(d, c)| (d - c).abs() / d.abs()).fold(0.0, f64::max);
        report.check(CheckOutcome::new("carleman_vs_direct", worst <= 0.02, worst, 0.02, anchors::CARLEMAN));
    } else {
        let min = carleman.iter().copied().fold(f64::INFINITY, f64::min);
        let ok = carleman.iter().all(|c| c.is_finite() && *c > 0.0);
        report.check(CheckOutcome::new("carleman_e0_finite_positive", ok, min, 0.0, anchors::CARLEMAN));
    }
    let op = &cfg.operator;
    let maxwellian =
        matches!(&op.f, super::config::DensitySpec::Gaussian { mean, .. } if mean.iter().all(|x| *x == 0.0));
    if e == 1.0 && op.f == op.g && maxwellian {
        let worst = carleman.iter().zip(&q_minus).map(|(p, m)| (p - m).abs() / m).fold(0.0, f64::max);
        report.check(CheckOutcome::new("elastic_maxwellian_null", worst <= 1e-3, worst, 1e-3, anchors::CARLEMAN));
    }

    let j = io::read_table(&dir.join(io::JENSEN_FILE))?;
    let (l, b, tol) = (j.floats("loss_rate")?, j.floats("bound")?, j.floats("tolerance")?);
    let margin =
        l.iter().zip(&b).zip(&tol).map(|((l, b), t)| (l - b + t) / l.abs().max(1e-300)).fold(f64::INFINITY, f64::min);
    let pass = l.iter().zip(&b).zip(&tol).all(|((l, b), t)| l - b >= -t);
    report.check(CheckOutcome::new("jensen_lower_bound", pass, margin, 0.0, anchors::JENSEN));

    let v = io::read_table(&dir.join(io::OPERATOR_FILE))?;
    let names = v.strings("name")?;
    let vals = v.floats("value")?;
    let refs = v.floats("reference")?;
    let get = |n: &str| names.iter().position(|x| x == n).map(|i| (vals[i], refs[i]));
    let n = cfg.physics.dimension;
    if let (Some((wm, sm)), Some((we, se))) = (get("weak_mass"), get("weak_energy")) {
        let rm = (wm - sm).abs() / sm.abs();
        let re = (we - se).abs() / se.abs();
        report.check(CheckOutcome::new("weak_vs_strong_mass", rm <= 0.01, rm, 0.01, anchors::WEAK));
        report.check(CheckOutcome::new("weak_vs_strong_energy", re <= 0.01, re, 0.01, anchors::WEAK));
        let mut worst: f64 = 0.0;
        for i in 0..n {
            if let Some((w, s)) = get(&format!("weak_momentum_{i}")) {
                worst = worst.max(w.abs()).max(s.abs());
            }
        }
        report.check(CheckOutcome::new("weak_momentum_abs", worst <= 1e-3, worst, 1e-3, anchors::WEAK));
    } else {
        report.observe("weak_form", "not applicable: the strong form matches the weak form only for N = 3 and e > 0");
    }
    if let Some((r, m)) = get("residual_mass") {
        let rel = r.abs() / m;
        report.check(CheckOutcome::new("collision_mass_residual", rel <= 1e-9, rel, 1e-9, anchors::CONSERVATION));
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        if let Some((r, s)) = get(&format!("residual_momentum_{i}")) {
            worst = worst.max(r.abs() / s);
        }
    }
    report.check(CheckOutcome::new("collision_momentum_residual", worst <= 1e-9, worst, 1e-9, anchors::CONSERVATION));
    if let Some((r, d)) = get("residual_energy") {
        let rel = if e < 1.0 { r.abs() / d } else { r.abs() };
        report.check(CheckOutcome::new("collision_energy_identity", rel <= 1e-8, rel, 1e-8, anchors::DISSIPATION));
    }
    if let Some((r, reference)) = get("spreading_radius") {
        let floor = 5f64.sqrt() / 2.0;
        report.check(CheckOutcome::new("spreading_radius_floor", r >= floor, r, floor, anchors::SPREADING));
        report.check(CheckOutcome::new("spreading_radius_edge", r >= reference, r, reference, anchors::SPREADING));
    }
    Ok(())
}

/// Linear fit of `log d` on the first half of the window, shifted up by its
/// largest residual, extrapolated over the second half.
pub fn stability_envelope(t: &[f64], d: &[f64]) -> Result<(f64, f64, f64)> {
    let t_end = t.last().copied().unwrap_or(0.0);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (ti, di) in t.iter().zip(d) {
        if *ti <= 0.5 * t_end && *di > 0.0 {
            xs.push(*ti);
            ys.push(di.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Fit("stability envelope needs three samples in the first half".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let icpt = my - slope * mx;
    let shift = xs.iter().zip(&ys).map(|(x, y)| y - icpt - slope * x).fold(0.0, f64::max);
    let excess = t
        .iter()
        .zip(d)
        .filter(|(ti, di)| **ti > 0.5 * t_end && **di > 0.0)
        .map(|(ti, di)| di.ln() - (icpt + shift + slope * ti))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((icpt + shift, slope, excess))
}

fn analyze_stability(report: &mut RunReport, dir: &Path, hints: &mut PlotHints) -> Result<()> {
    let s = io::read_table(&dir.join(io::STABILITY_FILE))?;
    let (t, d) = (s.floats("t")?, s.floats("distance")?);
    let series = io::read_moments(&dir.join(io::MOMENTS_FILE))?.series;
    conservation_checks(report, &series);
    report.observe("initial_distance", d.first().copied().unwrap_or(f64::NAN));
    match stability_envelope(&t, &d) {
        Ok((a, b, excess)) => {
            let slack = 2f64.ln();
            report.check(CheckOutcome::new(
                "stability_log_linear_envelope",
                excess <= slack,
                excess,
                slack,
                anchors::STABILITY,
            ));
            report.observe("stability_envelope", serde_json::json!({"intercept": a, "slope": b}));
        }
        Err(e) => {
            report.check(CheckOutcome::new(
                "stability_log_linear_envelope",
                false,
                f64::NAN,
                2f64.ln(),
                anchors::STABILITY,
            ));
            report.observe("stability_envelope_error", e.to_string());
        }
    }
    hints.moments = Some(io::MOMENTS_FILE.into());
    Ok(())
}

/// Builds the report of a raw-output directory.
pub fn analyze(cfg: &ExperimentConfig, dir: &Path, stamp: &Stamp) -> Result<(RunReport, PlotHints)> {
    let missing = missing_files(dir, cfg.mode)?;
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let mut report = RunReport::new(cfg.mode.name(), stamp);
    let mut hints = PlotHints::default();
    match cfg.mode {
        Mode::Simulate => {
            let series = io::read_moments(&dir.join(io::MOMENTS_FILE))?.series;
            conservation_checks(&mut report, &series);
            metadata_checks(&mut report, dir)?;
            match series.frame {
                Frame::Original => monotone_energy_check(&mut report, &series),
                Frame::Rescaled => energy_bound_checks(&mut report, cfg, &series)?,
            }
            analyze_dissipation(&mut report, dir)?;
            hints.moments = Some(io::MOMENTS_FILE.into());
        }
        Mode::Selfsim => analyze_selfsim(&mut report, cfg, dir, &mut hints)?,
        Mode::Haff => analyze_haff(&mut report, cfg, dir, &mut hints)?,
        Mode::Tail => {
            let hists = read_histograms(dir, "hist")?;
            let last = hists.last().expect("checked by missing_files");
            tail_check(&mut report, cfg, last, &mut hints);
            hints.histogram = Some(io::histogram_name("hist", last.time));
        }
        Mode::Transfer => analyze_transfer(&mut report, cfg, dir, &mut hints)?,
        Mode::Qcheck => analyze_qcheck(&mut report, cfg, dir)?,
        Mode::Stability => analyze_stability(&mut report, dir, &mut hints)?,
        Mode::Report => return Err(Error::Domain("a report directory records the mode that produced it".into())),
    }
    Ok((report, hints))
}
