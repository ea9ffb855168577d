//! Moments, histograms, fits and run-level checks.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::dsmc::{Frame, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::quadrature::sphere_area;
use crate::vecn;

/// Default orders `p` of the moments `m_p = ∫ g |v|^{2p} dv`.
pub const DEFAULT_ORDERS: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 3.0, 4.0];

/// Anchor labels attached to checks in reports.
pub mod anchors {
    pub const HAFF: &str = "(hafflaw)";
    pub const DISSIPATION: &str = "(eqdiffEE)";
    pub const CARLEMAN: &str = "(carlQ)";
    pub const WEAK: &str = "(Qplusweak)";
    pub const JENSEN: &str = "(Lgv)";
    pub const ENERGY_SUP: &str = "(BorneY2)";
    pub const ENERGY_INF: &str = "(EE>r2)";
    pub const MOMENT_TRANSFER: &str = "(momentgtof)";
    pub const TAIL: &str = "BGPtail";
    pub const POSITIVITY: &str = "theopositivity";
    pub const INVARIANT_SET: &str = "MM:superS";
    pub const SPREADING: &str = "MM:lem:spread";
    pub const STATIONARITY: &str = "selfsim";
    pub const STABILITY: &str = "stab";
    pub const CONSERVATION: &str = "conservation";

    pub const ALL: [&str; 12] = [
        HAFF,
        DISSIPATION,
        CARLEMAN,
        WEAK,
        JENSEN,
        ENERGY_SUP,
        ENERGY_INF,
        MOMENT_TRANSFER,
        TAIL,
        POSITIVITY,
        INVARIANT_SET,
        SPREADING,
    ];
}

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub paper_ref: String,
}

impl CheckOutcome {
    pub fn new(check: impl Into<String>, pass: bool, value: f64, tolerance: f64, anchor: &str) -> Self {
        CheckOutcome { check: check.into(), pass, value, tolerance, paper_ref: anchor.to_string() }
    }
}

/// Moments of a velocity distribution at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentValues {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub orders: Vec<f64>,
    pub m: Vec<f64>,
}

/// Time series of moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub frame: Frame,
    pub dimension: usize,
    pub orders: Vec<f64>,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub momentum: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// `m[k][i]` is the moment of order `orders[k]` at `times[i]`.
    pub m: Vec<Vec<f64>>,
}

impl MomentSeries {
    pub fn new(frame: Frame, dimension: usize, orders: &[f64]) -> Self {
        MomentSeries {
            frame,
            dimension,
            orders: orders.to_vec(),
            times: Vec::new(),
            mass: Vec::new(),
            momentum: Vec::new(),
            energy: Vec::new(),
            m: vec![Vec::new(); orders.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, values: &MomentValues) -> Result<()> {
        if values.orders != self.orders {
            return Err(Error::Domain("moment orders do not match the series".into()));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::Domain(format!("series times must increase ({t} after {last})")));
            }
        }
        self.times.push(t);
        self.mass.push(values.mass);
        self.momentum.push(values.momentum.clone());
        self.energy.push(values.energy);
        for (col, v) in self.m.iter_mut().zip(&values.m) {
            col.push(*v);
        }
        Ok(())
    }

    /// Column of the moment of order `p`, if tracked.
    pub fn order(&self, p: f64) -> Option<&[f64]> {
        self.orders.iter().position(|q| (q - p).abs() < 1e-12).map(|k| self.m[k].as_slice())
    }

    pub fn values_at(&self, i: usize) -> MomentValues {
        MomentValues {
            mass: self.mass[i],
            momentum: self.momentum[i].clone(),
            energy: self.energy[i],
            orders: self.orders.clone(),
            m: self.m.iter().map(|c| c[i]).collect(),
        }
    }

    /// Largest relative deviation of the mass from its first value.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass.first().copied().unwrap_or(0.0);
        self.mass.iter().map(|m| ((m - m0) / m0).abs()).fold(0.0, f64::max)
    }

    /// Largest momentum change relative to the thermal momentum `√(ρ E)`.
    pub fn momentum_drift(&self) -> f64 {
        let Some(p0) = self.momentum.first() else { return 0.0 };
        self.momentum
            .iter()
            .zip(self.mass.iter().zip(&self.energy))
            .map(|(p, (m, e))| {
                let d: f64 = p.iter().zip(p0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                d / (m * e).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Pointwise average of series sharing the same time axis.
    pub fn average(series: &[MomentSeries]) -> Result<MomentSeries> {
        let first = series.first().ok_or_else(|| Error::Domain("no series to average".into()))?;
        if series.iter().any(|s| s.times != first.times || s.orders != first.orders) {
            return Err(Error::Domain("series to average must share times and orders".into()));
        }
        let k = series.len() as f64;
        let mut out = first.clone();
        let avg =
            |get: &dyn Fn(&MomentSeries, usize) -> f64, i: usize| series.iter().map(|s| get(s, i)).sum::<f64>() / k;
        for i in 0..first.len() {
            out.mass[i] = avg(&|s, i| s.mass[i], i);
            out.energy[i] = avg(&|s, i| s.energy[i], i);
            for d in 0..first.momentum[i].len() {
                out.momentum[i][d] = avg(&|s, i| s.momentum[i][d], i);
            }
            for c in 0..first.orders.len() {
                out.m[c][i] = avg(&|s, i| s.m[c][i], i);
            }
        }
        Ok(out)
    }
}

/// Moments of an ensemble; `orders` are the `p` of `|v|^{2p}`.
pub fn moments<const N: usize>(ens: &ParticleEnsemble<N>, orders: &[f64]) -> MomentValues {
    let w = ens.weight();
    let mut momentum = [0.0; N];
    let mut energy = 0.0;
    let mut m = vec![0.0; orders.len()];
    for v in ens.velocities() {
        let r2 = vecn::norm2(&v);
        for i in 0..N {
            momentum[i] += v[i];
        }
        energy += r2;
        for (acc, p) in m.iter_mut().zip(orders) {
            *acc += if *p == 0.0 { 1.0 } else { r2.powf(*p) };
        }
    }
    MomentValues {
        mass: ens.mass(),
        momentum: momentum.iter().map(|x| w * x).collect(),
        energy: w * energy,
        orders: orders.to_vec(),
        m: m.iter().map(|x| w * x).collect(),
    }
}

/// Moments of a radial histogram, treating the density as constant on each
/// shell. Overflow mass is counted in `mass` but not in the other moments.
pub fn histogram_moments(hist: &VelocityHistogram, orders: &[f64]) -> Result<MomentValues> {
    if hist.axis.is_some() {
        return Err(Error::Binning("moments need a radial histogram".into()));
    }
    let n = hist.dimension as f64;
    let area = sphere_area(hist.dimension);
    let shell = |a: f64, b: f64, k: f64| area * (b.powf(n + k) - a.powf(n + k)) / (n + k);
    let mut m = vec![0.0; orders.len()];
    let mut energy = 0.0;
    for (i, d) in hist.density.iter().enumerate() {
        let (a, b) = (hist.edges[i], hist.edges[i + 1]);
        energy += d * shell(a, b, 2.0);
        for (acc, p) in m.iter_mut().zip(orders) {
            *acc += d * shell(a, b, 2.0 * p);
        }
    }
    Ok(MomentValues { mass: hist.total_mass, momentum: vec![0.0; hist.dimension], energy, orders: orders.to_vec(), m })
}

/// Moments normalized by `Γ(a p + 1/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMoments {
    pub a: f64,
    pub orders: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn normalized_moments(orders: &[f64], m: &[f64], a: f64) -> Result<NormalizedMoments> {
    if !(a >= 2.0) {
        return Err(Error::Domain(format!("normalization parameter a must be at least 2, got {a}")));
    }
    if orders.len() != m.len() {
        return Err(Error::Domain("orders and moments differ in length".into()));
    }
    let z = orders.iter().zip(m).map(|(p, mp)| mp / gamma(a * p + 0.5)).collect();
    Ok(NormalizedMoments { a, orders: orders.to_vec(), z })
}

/// Normalized moments along a series.
pub fn normalized_series(series: &MomentSeries, a: f64) -> Result<Vec<NormalizedMoments>> {
    (0..series.len())
        .map(|i| {
            let m: Vec<f64> = series.m.iter().map(|c| c[i]).collect();
            normalized_moments(&series.orders, &m, a)
        })
        .collect()
}

/// Smallest `x` with `z_p ≤ x^p` for every tracked `p > 0`, times `inflate`.
pub fn invariant_radius(z: &NormalizedMoments, inflate: f64) -> f64 {
    z.orders.iter().zip(&z.z).filter(|(p, _)| **p > 0.0).map(|(p, zp)| zp.max(0.0).powf(1.0 / p)).fold(0.0, f64::max)
        * inflate
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantViolation {
    pub time: f64,
    pub order: f64,
    pub z: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub x: f64,
    pub pass: bool,
    /// First time at which every `z_p ≤ x^p`.
    pub entered_at: Option<f64>,
    pub first_violation: Option<InvariantViolation>,
}

/// Checks that once the moments enter `{z_p ≤ x^p ∀p}` they never leave.
pub fn invariant_set_check(times: &[f64], z: &[NormalizedMoments], x: f64) -> Result<InvariantReport> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("invariant set radius must be positive, got {x}")));
    }
    let violation = |t: f64, zm: &NormalizedMoments| {
        zm.orders.iter().zip(&zm.z).find_map(|(p, zp)| {
            let bound = x.powf(*p);
            (*zp > bound).then_some(InvariantViolation { time: t, order: *p, z: *zp, bound })
        })
    };
    let mut entered_at = None;
    for (t, zm) in times.iter().zip(z) {
        let v = violation(*t, zm);
        match (entered_at, v) {
            (None, None) => entered_at = Some(*t),
            (Some(_), Some(v)) => {
                return Ok(InvariantReport { x, pass: false, entered_at, first_violation: Some(v) });
            }
            _ => {}
        }
    }
    Ok(InvariantReport { x, pass: entered_at.is_some(), entered_at, first_violation: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialMoment {
    /// `+∞` if the exponent overflows.
    pub value: f64,
    /// Set when the top 1% of particles carry more than half of the sum.
    pub unreliable: bool,
    /// Speed at which the exponent overflowed.
    pub saturating_speed: Option<f64>,
}

/// `∫ g exp(r |v|^s) dv` over an ensemble.
pub fn exponential_moment<const N: usize>(ens: &ParticleEnsemble<N>, r: f64, s: f64) -> Result<ExponentialMoment> {
    if !(r > 0.0) || !(s > 0.0 && s <= 1.0) {
        return Err(Error::Domain(format!("exponential moment needs r > 0 and s in (0, 1], got r={r}, s={s}")));
    }
    let speeds: Vec<f64> = ens.velocities().map(|v| vecn::norm(&v)).collect();
    exponential_moment_of_speeds(&speeds, ens.weight(), r, s)
}

pub fn exponential_moment_of_speeds(speeds: &[f64], weight: f64, r: f64, s: f64) -> Result<ExponentialMoment> {
    let mut terms: Vec<f64> = Vec::with_capacity(speeds.len());
    for &c in speeds {
        let x = r * c.powf(s);
        if x > 709.0 {
            return Ok(ExponentialMoment { value: f64::INFINITY, unreliable: true, saturating_speed: Some(c) });
        }
        terms.push(x.exp());
    }
    let total: f64 = terms.iter().sum();
    terms.sort_by(|a, b| b.total_cmp(a));
    let top = (terms.len() / 100).max(1);
    let head: f64 = terms[..top.min(terms.len())].iter().sum();
    Ok(ExponentialMoment { value: weight * total, unreliable: head > 0.5 * total, saturating_speed: None })
}

/// Mass-normalized velocity histogram, radial or along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityHistogram {
    pub dimension: usize,
    /// `None` for radial histograms, otherwise the axis of the marginal.
    pub axis: Option<usize>,
    pub edges: Vec<f64>,
    /// Mass per unit volume (radial) or per unit length (marginal).
    pub density: Vec<f64>,
    pub counts: Vec<u64>,
    pub total_mass: f64,
    pub overflow_mass: f64,
    /// Energy of the sampled distribution, used for default tail windows.
    pub energy: f64,
    pub frame: Frame,
    pub time: f64,
}

impl VelocityHistogram {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Volume (radial) or length (marginal) of each bin.
    pub fn bin_volumes(&self) -> Vec<f64> {
        let n = self.dimension as f64;
        let area = sphere_area(self.dimension);
        self.edges
            .windows(2)
            .map(|w| match self.axis {
                None => area * (w[1].powf(n) - w[0].powf(n)) / n,
                Some(_) => w[1] - w[0],
            })
            .collect()
    }

    /// Mass inside the binned range, plus the overflow.
    pub fn mass(&self) -> f64 {
        self.density.iter().zip(self.bin_volumes()).map(|(d, v)| d * v).sum::<f64>() + self.overflow_mass
    }

    /// Thermal speed `σ` with `σ² = E / (N ρ)`.
    pub fn thermal_speed(&self) -> f64 {
        (self.energy / (self.dimension as f64 * self.total_mass)).sqrt()
    }

    fn same_binning(&self, other: &Self) -> Result<()> {
        let same = self.dimension == other.dimension
            && self.axis == other.axis
            && self.edges.len() == other.edges.len()
            && self.edges.iter().zip(&other.edges).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
        if same {
            Ok(())
        } else {
            Err(Error::Binning("histograms have different binning".into()))
        }
    }
}

/// Radial histogram of `bins` equal shells on `[0, r_max]`.
pub fn radial_histogram<const N: usize>(
    ens: &ParticleEnsemble<N>,
    bins: usize,
    r_max: f64,
) -> Result<VelocityHistogram> {
    let speeds: Vec<f64> = ens.velocities().map(|v| vecn::norm(&v)).collect();
    let mut hist = histogram_from_samples(&speeds, ens.weight(), N, None, bins, 0.0, r_max)?;
    hist.energy = ens.energy();
    hist.frame = ens.frame();
    hist.time = ens.time();
    Ok(hist)
}

/// Marginal histogram of one velocity component on `[−half_width, half_width]`.
pub fn axis_histogram<const N: usize>(
    ens: &ParticleEnsemble<N>,
    axis: usize,
    bins: usize,
    half_width: f64,
) -> Result<VelocityHistogram> {
    if axis >= N {
        return Err(Error::Domain(format!("axis {axis} out of range for N = {N}")));
    }
    let xs: Vec<f64> = ens.velocities().map(|v| v[axis]).collect();
    let mut hist = histogram_from_samples(&xs, ens.weight(), N, Some(axis), bins, -half_width, half_width)?;
    hist.energy = ens.energy();
    hist.frame = ens.frame();
    hist.time = ens.time();
    Ok(hist)
}

/// Histogram of scalar samples of equal weight. Radial histograms use
/// shell volumes; marginal ones use bin lengths.
pub fn histogram_from_samples(
    samples: &[f64],
    weight: f64,
    dimension: usize,
    axis: Option<usize>,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<VelocityHistogram> {
    if bins < 8 {
        return Err(Error::Binning(format!("histograms need at least 8 bins, got {bins}")));
    }
    if samples.is_empty() {
        return Err(Error::Binning("cannot histogram an empty ensemble".into()));
    }
    if !(hi > lo) {
        return Err(Error::Binning(format!("empty histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    let mut overflow = 0u64;
    for &x in samples {
        let k = ((x - lo) / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1;
        } else {
            overflow += 1;
        }
    }
    let mut hist = VelocityHistogram {
        dimension,
        axis,
        edges,
        density: Vec::new(),
        counts,
        total_mass: weight * samples.len() as f64,
        overflow_mass: weight * overflow as f64,
        energy: 0.0,
        frame: Frame::Original,
        time: 0.0,
    };
    hist.density = hist.counts.iter().zip(hist.bin_volumes()).map(|(c, v)| weight * *c as f64 / v).collect();
    Ok(hist)
}

/// Edges of `bins` radial shells of equal volume in the ball of `r_max`.
pub fn equal_volume_edges(r_max: f64, bins: usize, dimension: usize) -> Vec<f64> {
    (0..=bins).map(|k| r_max * (k as f64 / bins as f64).powf(1.0 / dimension as f64)).collect()
}

/// Radial histogram of speed samples of equal weight on explicit edges.
pub fn radial_histogram_on_edges(
    speeds: &[f64],
    weight: f64,
    dimension: usize,
    edges: Vec<f64>,
) -> Result<VelocityHistogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Binning("edges must be strictly increasing".into()));
    }
    if speeds.is_empty() {
        return Err(Error::Binning("cannot histogram an empty ensemble".into()));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    let mut overflow = 0u64;
    for &x in speeds {
        match edges.partition_point(|e| *e <= x) {
            k if k >= 1 && k <= bins => counts[k - 1] += 1,
            _ => overflow += 1,
        }
    }
    let mut hist = VelocityHistogram {
        dimension,
        axis: None,
        edges,
        density: Vec::new(),
        counts,
        total_mass: weight * speeds.len() as f64,
        overflow_mass: weight * overflow as f64,
        energy: 0.0,
        frame: Frame::Original,
        time: 0.0,
    };
    hist.density = hist.counts.iter().zip(hist.bin_volumes()).map(|(c, v)| weight * *c as f64 / v).collect();
    Ok(hist)
}

/// `(shell center, shell mass)` pairs of a radial histogram; overflow mass
/// is dropped.
pub fn histogram_shells(hist: &VelocityHistogram) -> Result<Vec<(f64, f64)>> {
    if hist.axis.is_some() {
        return Err(Error::Binning("shells need a radial histogram".into()));
    }
    Ok(hist
        .centers()
        .into_iter()
        .zip(hist.density.iter().zip(hist.bin_volumes()))
        .map(|(r, (d, v))| (r, d * v))
        .collect())
}

/// `∫ |a − b| dv` over the binned range.
pub fn l1_distance(a: &VelocityHistogram, b: &VelocityHistogram) -> Result<f64> {
    a.same_binning(b)?;
    Ok(a.density.iter().zip(&b.density).zip(a.bin_volumes()).map(|((x, y), v)| (x - y).abs() * v).sum())
}

/// `∫ |a − b| (1 + |v|²) dv` over the binned range.
pub fn stability_metric(a: &VelocityHistogram, b: &VelocityHistogram) -> Result<f64> {
    a.same_binning(b)?;
    let n = a.dimension as f64;
    let area = sphere_area(a.dimension);
    Ok(a.density
        .iter()
        .zip(&b.density)
        .zip(a.edges.windows(2))
        .map(|((x, y), w)| {
            let weight = match a.axis {
                None => {
                    area * ((w[1].powf(n) - w[0].powf(n)) / n + (w[1].powf(n + 2.0) - w[0].powf(n + 2.0)) / (n + 2.0))
                }
                Some(_) => (w[1] - w[0]) + (w[1].powi(3) - w[0].powi(3)) / 3.0,
            };
            (x - y).abs() * weight
        })
        .sum())
}

/// Least-squares fit `log G ≈ log a₁ − a₂ r^s` for one exponent `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit {
    pub s: f64,
    pub a1: f64,
    pub a2: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub window: (f64, f64),
    pub bins_used: usize,
    pub selected: ProfileFit,
    /// Fits for every candidate exponent, in the order given.
    pub candidates: Vec<ProfileFit>,
}

impl TailFit {
    /// Residual of the best candidate other than the selected one.
    pub fn runner_up(&self) -> Option<&ProfileFit> {
        self.candidates.iter().filter(|f| f.s != self.selected.s).min_by(|a, b| a.rms.total_cmp(&b.rms))
    }
}

pub const TAIL_MIN_COUNT: u64 = 20;
pub const TAIL_MIN_BINS: usize = 8;

/// Default tail window `[3σ, 6σ]`.
pub fn default_tail_window(hist: &VelocityHistogram) -> (f64, f64) {
    let s = hist.thermal_speed();
    (3.0 * s, 6.0 * s)
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("degenerate fit: abscissae have zero variance".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let rms = (ss / n).sqrt();
    let stderr = if xs.len() > 2 { (ss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok((slope, intercept, rms, stderr))
}

/// Fits the tail of a radial profile for each candidate `s` and selects the
/// one with the smaller RMS residual of `log G`.
pub fn tail_fit(hist: &VelocityHistogram, window: Option<(f64, f64)>, s_candidates: &[f64]) -> Result<TailFit> {
    if hist.axis.is_some() {
        return Err(Error::Binning("tail fits need a radial histogram".into()));
    }
    let window = window.unwrap_or_else(|| default_tail_window(hist));
    let centers = hist.centers();
    let (mut rs, mut logs) = (Vec::new(), Vec::new());
    for ((r, d), c) in centers.iter().zip(&hist.density).zip(&hist.counts) {
        if *r >= window.0 && *r <= window.1 && *c >= TAIL_MIN_COUNT && *d > 0.0 {
            rs.push(*r);
            logs.push(d.ln());
        }
    }
    if rs.is_empty() {
        return Err(Error::Fit(format!("no populated bins in tail window [{:.4}, {:.4}]", window.0, window.1)));
    }
    if rs.len() < TAIL_MIN_BINS {
        return Err(Error::Fit(format!(
            "tail window [{:.4}, {:.4}] has {} usable bins, need {TAIL_MIN_BINS}",
            window.0,
            window.1,
            rs.len()
        )));
    }
    let mut candidates = Vec::new();
    for &s in s_candidates {
        let xs: Vec<f64> = rs.iter().map(|r| r.powf(s)).collect();
        let (slope, intercept, rms, _) = linear_fit(&xs, &logs)?;
        candidates.push(ProfileFit { s, a1: intercept.exp(), a2: -slope, rms });
    }
    let selected = *candidates
        .iter()
        .min_by(|a, b| a.rms.total_cmp(&b.rms))
        .ok_or_else(|| Error::Fit("no candidate exponents".into()))?;
    Ok(TailFit { window, bins_used: rs.len(), selected, candidates })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HaffFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Least-squares slope of `log E` against `log(1 + t)` on `window`.
pub fn haff_fit(times: &[f64], energy: &[f64], window: (f64, f64)) -> Result<HaffFit> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (t, e) in times.iter().zip(energy) {
        if *t >= window.0 && *t <= window.1 {
            if !(*e > 0.0) {
                return Err(Error::Fit(format!("nonpositive energy {e} at t = {t}")));
            }
            xs.push((1.0 + t).ln());
            ys.push(e.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Fit(format!(
            "Haff fit window [{}, {}] holds {} samples, need 3",
            window.0,
            window.1,
            xs.len()
        )));
    }
    let (slope, intercept, _, stderr) = linear_fit(&xs, &ys)?;
    Ok(HaffFit { slope, intercept, stderr, points: xs.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBoundsReport {
    pub initial: f64,
    /// `max{E_in, 4/(τ²ρ³)}·1.05`; absent when `τ = 0`.
    pub upper_bound: Option<f64>,
    pub sup: f64,
    pub sup_time: f64,
    pub upper_pass: bool,
    /// First time the upper bound is exceeded.
    pub violation_time: Option<f64>,
    pub inf_after_transient: f64,
    pub inf_time: f64,
    pub lower_pass: bool,
    pub notice: Option<String>,
}

/// Upper and lower energy bounds for a rescaled-frame series.
pub fn energy_bounds_check(times: &[f64], energy: &[f64], rho: f64, tau: f64, t_transient: f64) -> EnergyBoundsReport {
    let initial = energy.first().copied().unwrap_or(f64::NAN);
    let (mut sup, mut sup_time) = (f64::NEG_INFINITY, f64::NAN);
    for (t, e) in times.iter().zip(energy) {
        if *e > sup {
            sup = *e;
            sup_time = *t;
        }
    }
    let (upper_bound, notice) = if tau > 0.0 {
        (Some(initial.max(4.0 / (tau * tau * rho.powi(3))) * 1.05), None)
    } else {
        (None, Some("τ = 0: no upper bound for the elastic rescaled gas, check skipped".to_string()))
    };
    let violation_time = upper_bound.and_then(|b| times.iter().zip(energy).find(|(_, e)| **e > b).map(|(t, _)| *t));
    let (mut inf, mut inf_time) = (f64::INFINITY, f64::NAN);
    for (t, e) in times.iter().zip(energy) {
        if *t >= t_transient && *e < inf {
            inf = *e;
            inf_time = *t;
        }
    }
    EnergyBoundsReport {
        initial,
        upper_bound,
        sup,
        sup_time,
        upper_pass: violation_time.is_none(),
        violation_time,
        inf_after_transient: inf,
        inf_time,
        lower_pass: inf.is_finite() && inf > 0.0,
        notice,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub radius: f64,
    pub t_star: f64,
    pub pass: bool,
    pub checked: usize,
    pub min_density: f64,
    pub min_time: f64,
    /// `(a₁, a₂)` of an envelope `a₁ e^{−a₂ r}` below the last checked profile.
    pub envelope: Option<(f64, f64)>,
}

/// Checks `min_{|v| ≤ R} g(t, v) > 0` for every histogram with `t ≥ t_star`,
/// using bins lying inside the ball.
pub fn positivity_check(hists: &[VelocityHistogram], radius: f64, t_star: f64) -> Result<PositivityReport> {
    let mut report = PositivityReport {
        radius,
        t_star,
        pass: true,
        checked: 0,
        min_density: f64::INFINITY,
        min_time: f64::NAN,
        envelope: None,
    };
    let mut last = None;
    for h in hists.iter().filter(|h| h.time >= t_star) {
        if h.axis.is_some() {
            return Err(Error::Binning("positivity needs radial histograms".into()));
        }
        let inside: Vec<(f64, f64)> = h
            .edges
            .windows(2)
            .zip(&h.density)
            .filter(|(w, _)| w[1] <= radius + 1e-12)
            .map(|(w, d)| (0.5 * (w[0] + w[1]), *d))
            .collect();
        if inside.is_empty() {
            return Err(Error::Binning(format!("no bins inside |v| ≤ {radius}")));
        }
        report.checked += 1;
        for (_, d) in &inside {
            if *d < report.min_density {
                report.min_density = *d;
                report.min_time = h.time;
            }
        }
        last = Some(inside);
    }
    if report.checked == 0 {
        return Err(Error::Domain(format!("no histogram at or after t* = {t_star}")));
    }
    report.pass = report.min_density > 0.0;
    if let Some(inside) = last.filter(|_| report.pass) {
        let xs: Vec<f64> = inside.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = inside.iter().map(|p| p.1.ln()).collect();
        if let Ok((slope, _, _, _)) = linear_fit(&xs, &ys) {
            let a2 = (-slope).max(0.0);
            let a1 = inside.iter().map(|(r, d)| d * (a2 * r).exp()).fold(f64::INFINITY, f64::min);
            report.envelope = Some((a1, a2));
        }
    }
    Ok(report)
}
