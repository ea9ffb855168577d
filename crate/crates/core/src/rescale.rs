//! Exact changes of variables between original and self-similar frames.
//!
//! With `V(t) = 1 + c t`, `K = V^N` and `T(t) = ln(1 + c t)/c`, a solution
//! `f` of the original equation and a solution `g` of the rescaled one are
//! related by `f(t, v) = K(t) g(T(t), V(t) v)`.

use serde::{Deserialize, Serialize};

use crate::dsmc::{Frame, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::observables::{MomentSeries, VelocityHistogram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    pub c_star: f64,
    pub dimension: usize,
}

/// `(K, T, V)` at one original time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scaling {
    pub k: f64,
    pub t: f64,
    pub v: f64,
}

impl ScalingState {
    pub fn new(c_star: f64, dimension: usize) -> Result<Self> {
        if !(c_star > 0.0) || !c_star.is_finite() {
            return Err(Error::Domain(format!("c* must be positive, got {c_star}")));
        }
        if dimension < 2 {
            return Err(Error::Domain(format!("dimension must be at least 2, got {dimension}")));
        }
        Ok(ScalingState { c_star, dimension })
    }

    pub fn unit(dimension: usize) -> Self {
        ScalingState { c_star: 1.0, dimension }
    }

    /// Rescaled time `T(t)`.
    pub fn rescaled_time(&self, t: f64) -> f64 {
        (self.c_star * t).ln_1p() / self.c_star
    }

    /// Original time `t` with `T(t) = τ`.
    pub fn original_time(&self, tau: f64) -> f64 {
        (self.c_star * tau).exp_m1() / self.c_star
    }

    /// `V` as a function of rescaled time, `e^{c τ}`.
    pub fn stretch_at(&self, tau: f64) -> f64 {
        (self.c_star * tau).exp()
    }
}

pub fn scaling_functions(t: f64, state: &ScalingState) -> Result<Scaling> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("original time must be nonnegative, got {t}")));
    }
    let v = 1.0 + state.c_star * t;
    Ok(Scaling { k: v.powi(state.dimension as i32), t: state.rescaled_time(t), v })
}

/// Maps an original-frame ensemble at time `t` to the rescaled frame at
/// `T(t)`: velocities are multiplied by `V(t)`.
pub fn forward_map<const N: usize>(ens: &mut ParticleEnsemble<N>, state: &ScalingState) -> Result<()> {
    if ens.frame() != Frame::Original {
        return Err(Error::Frame { expected: "original", found: ens.frame().name() });
    }
    let s = scaling_functions(ens.time(), state)?;
    ens.remap(s.v, s.t, Frame::Rescaled);
    Ok(())
}

/// Maps a rescaled-frame ensemble at `τ` back to original time `t(τ)`.
pub fn inverse_map<const N: usize>(ens: &mut ParticleEnsemble<N>, state: &ScalingState) -> Result<()> {
    if ens.frame() != Frame::Rescaled {
        return Err(Error::Frame { expected: "rescaled", found: ens.frame().name() });
    }
    let tau = ens.time();
    ens.remap(1.0 / state.stretch_at(tau), state.original_time(tau), Frame::Original);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Original to rescaled.
    #[serde(rename = "f-to-g")]
    FToG,
    /// Rescaled to original.
    #[serde(rename = "g-to-f")]
    GToF,
}

impl Direction {
    pub fn source_frame(self) -> Frame {
        match self {
            Direction::FToG => Frame::Original,
            Direction::GToF => Frame::Rescaled,
        }
    }

    pub fn target_frame(self) -> Frame {
        match self {
            Direction::FToG => Frame::Rescaled,
            Direction::GToF => Frame::Original,
        }
    }
}

fn map_time(direction: Direction, state: &ScalingState, s: f64) -> f64 {
    match direction {
        Direction::FToG => state.rescaled_time(s),
        Direction::GToF => state.original_time(s),
    }
}

fn source_time_of(direction: Direction, state: &ScalingState, target: f64) -> f64 {
    match direction {
        Direction::FToG => state.original_time(target),
        Direction::GToF => state.rescaled_time(target),
    }
}

/// Factor multiplying a moment of degree `k` at source time `s`.
fn moment_factor(direction: Direction, state: &ScalingState, s: f64, k: f64) -> f64 {
    match direction {
        Direction::FToG => (1.0 + state.c_star * s).powf(k),
        Direction::GToF => state.stretch_at(s).powf(-k),
    }
}

/// A transferred scalar moment series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferredMoment {
    pub source_time: Vec<f64>,
    pub target_time: Vec<f64>,
    pub values: Vec<f64>,
    /// True when values were interpolated in the source time.
    pub interpolated: bool,
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Domain("interpolation needs at least 2 matching samples".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("interpolation abscissae must increase".into()));
        }
        let n = xs.len();
        let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            m[i] = if d[i - 1] * d[i] <= 0.0 { 0.0 } else { 0.5 * (d[i - 1] + d[i]) };
        }
        for i in 0..n - 1 {
            if d[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / d[i];
            let b = m[i + 1] / d[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                m[i] = t * a * d[i];
                m[i + 1] = t * b * d[i];
            }
        }
        Ok(MonotoneCubic { xs: xs.to_vec(), ys: ys.to_vec(), slopes: m })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        let tol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        if x < lo - tol || x > hi + tol {
            return Err(Error::Extrapolation(format!("time {x} outside the sampled window [{lo}, {hi}]")));
        }
        let x = x.clamp(lo, hi);
        let i = match self.xs.partition_point(|p| *p <= x) {
            0 => 0,
            k => (k - 1).min(self.xs.len() - 2),
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1])
    }
}

/// Transfers a moment of degree `k` (of `|v|^k`). Without `targets` each
/// sample is mapped exactly; with `targets` the source series is
/// interpolated at the preimages of the target times.
pub fn moment_transfer(
    times: &[f64],
    values: &[f64],
    direction: Direction,
    k: f64,
    state: &ScalingState,
    targets: Option<&[f64]>,
) -> Result<TransferredMoment> {
    if times.len() != values.len() {
        return Err(Error::Domain("times and values differ in length".into()));
    }
    match targets {
        None => Ok(TransferredMoment {
            source_time: times.to_vec(),
            target_time: times.iter().map(|s| map_time(direction, state, *s)).collect(),
            values: times.iter().zip(values).map(|(s, x)| x * moment_factor(direction, state, *s, k)).collect(),
            interpolated: false,
        }),
        Some(targets) => {
            let interp = MonotoneCubic::new(times, values)?;
            let mut out = TransferredMoment {
                source_time: Vec::with_capacity(targets.len()),
                target_time: targets.to_vec(),
                values: Vec::with_capacity(targets.len()),
                interpolated: true,
            };
            for &t in targets {
                let s = source_time_of(direction, state, t);
                out.values.push(interp.eval(s)? * moment_factor(direction, state, s, k));
                out.source_time.push(s);
            }
            Ok(out)
        }
    }
}

/// A moment series mapped to the other frame, with its source times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesTransfer {
    pub series: MomentSeries,
    pub source_time: Vec<f64>,
    pub interpolated: bool,
}

/// Transfers every column of a series: mass (degree 0), momentum (1),
/// energy (2) and `m_p` (`2p`).
pub fn transfer_series(
    series: &MomentSeries,
    direction: Direction,
    state: &ScalingState,
    targets: Option<&[f64]>,
) -> Result<SeriesTransfer> {
    if series.frame != direction.source_frame() {
        return Err(Error::Frame { expected: direction.source_frame().name(), found: series.frame.name() });
    }
    let go = |vals: &[f64], k: f64| moment_transfer(&series.times, vals, direction, k, state, targets);
    let mass = go(&series.mass, 0.0)?;
    let energy = go(&series.energy, 2.0)?;
    let dims = series.momentum.first().map(|p| p.len()).unwrap_or(series.dimension);
    let mut momentum_cols = Vec::with_capacity(dims);
    for d in 0..dims {
        let col: Vec<f64> = series.momentum.iter().map(|p| p[d]).collect();
        momentum_cols.push(go(&col, 1.0)?.values);
    }
    let mut m = Vec::with_capacity(series.orders.len());
    for (p, col) in series.orders.iter().zip(&series.m) {
        m.push(go(col, 2.0 * p)?.values);
    }
    let n = mass.values.len();
    Ok(SeriesTransfer {
        series: MomentSeries {
            frame: direction.target_frame(),
            dimension: series.dimension,
            orders: series.orders.clone(),
            times: mass.target_time.clone(),
            mass: mass.values,
            momentum: (0..n).map(|i| momentum_cols.iter().map(|c| c[i]).collect()).collect(),
            energy: energy.values,
            m,
        },
        source_time: mass.source_time,
        interpolated: mass.interpolated,
    })
}

/// Maps a histogram between frames: `g(T(t), w) = f(t, w/V)/K`.
pub fn map_histogram(
    hist: &VelocityHistogram,
    direction: Direction,
    state: &ScalingState,
) -> Result<VelocityHistogram> {
    if hist.frame != direction.source_frame() {
        return Err(Error::Frame { expected: direction.source_frame().name(), found: hist.frame.name() });
    }
    let stretch = match direction {
        Direction::FToG => scaling_functions(hist.time, state)?.v,
        Direction::GToF => 1.0 / state.stretch_at(hist.time),
    };
    let volume = match hist.axis {
        None => stretch.powi(hist.dimension as i32),
        Some(_) => stretch,
    };
    Ok(VelocityHistogram {
        edges: hist.edges.iter().map(|e| e * stretch).collect(),
        density: hist.density.iter().map(|d| d / volume).collect(),
        energy: hist.energy * stretch * stretch,
        frame: direction.target_frame(),
        time: map_time(direction, state, hist.time),
        ..hist.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsmc::{init_ensemble, SimConfig};
    use proptest::prelude::*;

    #[test]
    fn scaling_values() {
        let s3 = ScalingState::unit(3);
        assert_eq!(scaling_functions(0.0, &s3).unwrap(), Scaling { k: 1.0, t: 0.0, v: 1.0 });
        let one = scaling_functions(1.0, &s3).unwrap();
        assert_eq!((one.k, one.v), (8.0, 2.0));
        assert!((one.t - 2f64.ln()).abs() < 1e-15);
        let c2 = ScalingState::new(2.0, 3).unwrap();
        let s = scaling_functions(1.0, &c2).unwrap();
        assert_eq!(s.v, 3.0);
        assert!((s.t - 3f64.ln() / 2.0).abs() < 1e-15);
        assert!(scaling_functions(-1.0, &s3).is_err());
    }

    #[test]
    fn forward_and_inverse_maps() {
        let mut ens = init_ensemble::<3>(&SimConfig { particles: 50, ..SimConfig::default() }).unwrap();
        let v0: Vec<_> = ens.velocities().collect();
        let e0 = ens.energy();
        let st = ScalingState::unit(3);
        forward_map(&mut ens, &st).unwrap();
        assert_eq!(ens.velocities().collect::<Vec<_>>(), v0);
        assert!(forward_map(&mut ens, &st).is_err());
        inverse_map(&mut ens, &st).unwrap();
        ens.remap(1.0, 1.0, Frame::Original);
        forward_map(&mut ens, &st).unwrap();
        assert!((ens.time() - 2f64.ln()).abs() < 1e-15);
        assert!((ens.energy() - 4.0 * e0).abs() < 1e-12 * e0);
        assert!((ens.velocity(3)[0] - 2.0 * v0[3][0]).abs() < 1e-14);
        inverse_map(&mut ens, &st).unwrap();
        assert!((ens.time() - 1.0).abs() < 1e-14);
        for (a, b) in ens.velocities().zip(&v0) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 1e-14 * b[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_rescaled_energy_decays_like_inverse_square() {
        let st = ScalingState::unit(3);
        let taus: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let out = moment_transfer(&taus, &vec![7.0; 50], Direction::GToF, 2.0, &st, None).unwrap();
        for (t, e) in out.target_time.iter().zip(&out.values) {
            assert!((e - 7.0 / (1.0 + t).powi(2)).abs() < 1e-12);
        }
        let mass = moment_transfer(&taus, &vec![1.0; 50], Direction::GToF, 0.0, &st, None).unwrap();
        assert!(mass.values.iter().all(|m| *m == 1.0));
    }

    #[test]
    fn interpolated_transfer_round_trip_and_extrapolation() {
        let st = ScalingState::unit(3);
        let ts: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
        let es: Vec<f64> = ts.iter().map(|t| 3.0 / (1.0 + t).powi(2) + 0.1 * (-t).exp()).collect();
        let fwd = moment_transfer(&ts, &es, Direction::FToG, 2.0, &st, None).unwrap();
        let back = moment_transfer(&fwd.target_time, &fwd.values, Direction::GToF, 2.0, &st, Some(&ts[..195])).unwrap();
        for (a, b) in back.values.iter().zip(&es) {
            assert!((a - b).abs() < 1e-6 * b, "{a} vs {b}");
        }
        assert!(back.interpolated);
        assert!(matches!(
            moment_transfer(&ts, &es, Direction::FToG, 2.0, &st, Some(&[100.0])),
            Err(Error::Extrapolation(_))
        ));
    }

    proptest! {
        #[test]
        fn monotone_cubic_preserves_monotonicity(mut ys in proptest::collection::vec(0.0f64..10.0, 3..20), x in 0.0f64..1.0) {
            ys.sort_by(f64::total_cmp);
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
            let p = MonotoneCubic::new(&xs, &ys).unwrap();
            let at = x * (ys.len() - 1) as f64;
            let y = p.eval(at).unwrap();
            let y2 = p.eval((at + 0.01).min((ys.len() - 1) as f64)).unwrap();
            prop_assert!(y >= ys[0] - 1e-12 && y <= ys[ys.len() - 1] + 1e-12);
            prop_assert!(y2 >= y - 1e-12);
        }

        #[test]
        fn time_maps_invert(t in 0.0f64..1e3, c in 0.1f64..5.0) {
            let st = ScalingState::new(c, 3).unwrap();
            let back = st.original_time(st.rescaled_time(t));
            prop_assert!((back - t).abs() <= 1e-12 * t.max(1.0));
        }
    }
}
