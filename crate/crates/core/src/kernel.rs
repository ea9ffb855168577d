//! Collision kinematics and angular kernels for inelastic hard spheres.
//!
//! Velocities are `[f64; N]`. The restitution law fixes the post-collisional
//! relative velocity `u' = (1-e)/2 u + (1+e)/2 |u| σ`; the angular kernel
//! `b(û·σ)` is normalized to unit mass on `S^{N-1}`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{sphere_area, zonal_integral, GaussLegendre};
use crate::vecn::{self, Vector};

pub const DEFAULT_ORDER: usize = 64;
const SAMPLING_CAP: usize = 100_000;

/// Velocity-space dimension, `N >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("dimension must be at least 2, got {n}")));
        }
        Ok(Dimension(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Constant normal restitution coefficient `e ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestitutionLaw {
    e: f64,
}

impl RestitutionLaw {
    pub fn new(e: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::Domain(format!("restitution out of [0,1]: {e}")));
        }
        Ok(RestitutionLaw { e })
    }

    pub fn elastic() -> Self {
        RestitutionLaw { e: 1.0 }
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    /// `β = (e+1)/(2e)`; undefined for `e = 0`.
    pub fn beta(&self) -> Result<f64> {
        beta_of(self)
    }

    /// `1/β = 2e/(1+e)`, finite on the whole range including `e = 0`.
    pub fn beta_inv(&self) -> f64 {
        2.0 * self.e / (1.0 + self.e)
    }

    /// `e β = (1+e)/2`.
    pub fn e_beta(&self) -> f64 {
        0.5 * (1.0 + self.e)
    }
}

pub fn beta_of(law: &RestitutionLaw) -> Result<f64> {
    if law.e <= 0.0 {
        return Err(Error::Domain("β = (e+1)/(2e) is singular at e = 0".to_string()));
    }
    Ok((law.e + 1.0) / (2.0 * law.e))
}

/// A pair of colliding velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionPair<const N: usize> {
    pub v: Vector<N>,
    pub v_star: Vector<N>,
}

impl<const N: usize> CollisionPair<N> {
    pub fn new(v: Vector<N>, v_star: Vector<N>) -> Self {
        CollisionPair { v, v_star }
    }

    /// Relative velocity `v - v_*`.
    pub fn u(&self) -> Vector<N> {
        vecn::sub(&self.v, &self.v_star)
    }

    pub fn u_hat(&self) -> Option<Vector<N>> {
        vecn::normalize(&self.u())
    }

    fn center(&self) -> Vector<N> {
        std::array::from_fn(|i| 0.5 * (self.v[i] + self.v_star[i]))
    }
}

fn split<const N: usize>(center: &Vector<N>, rel: &Vector<N>) -> (Vector<N>, Vector<N>) {
    (std::array::from_fn(|i| center[i] + 0.5 * rel[i]), std::array::from_fn(|i| center[i] - 0.5 * rel[i]))
}

/// Post-collisional velocities `(v', v'_*)`.
pub fn post_collisional<const N: usize>(
    pair: &CollisionPair<N>,
    sigma: &Vector<N>,
    law: &RestitutionLaw,
) -> (Vector<N>, Vector<N>) {
    let u = pair.u();
    let speed = vecn::norm(&u);
    if speed == 0.0 {
        return (pair.v, pair.v_star);
    }
    let a = 0.5 * (1.0 - law.e);
    let c = 0.5 * (1.0 + law.e) * speed;
    let u_post: Vector<N> = std::array::from_fn(|i| a * u[i] + c * sigma[i]);
    split(&pair.center(), &u_post)
}

/// Pre-collisional velocities `('v, 'v_*)` leading to `(v, v_*)`.
pub fn pre_collisional<const N: usize>(
    pair: &CollisionPair<N>,
    sigma: &Vector<N>,
    law: &RestitutionLaw,
) -> Result<(Vector<N>, Vector<N>)> {
    let beta = law.beta()?;
    let u = pair.u();
    let speed = vecn::norm(&u);
    if speed == 0.0 {
        return Ok((pair.v, pair.v_star));
    }
    let u_pre: Vector<N> = std::array::from_fn(|i| (1.0 - beta) * u[i] + beta * speed * sigma[i]);
    Ok(split(&pair.center(), &u_pre))
}

/// `|v'|² + |v'_*|² − |v|² − |v_*|²` evaluated directly from the
/// post-collisional velocities. Subject to cancellation when the kinetic
/// energies are large compared with `|u|²`.
pub fn kinetic_energy_change<const N: usize>(pair: &CollisionPair<N>, sigma: &Vector<N>, law: &RestitutionLaw) -> f64 {
    let (vp, vsp) = post_collisional(pair, sigma, law);
    let after = vecn::norm2(&vp) + vecn::norm2(&vsp);
    let before = vecn::norm2(&pair.v) + vecn::norm2(&pair.v_star);
    after - before
}

/// Energy change of one collision, `−(1−e²)/4 |u|² (1 − û·σ)`.
///
/// Agrees with [`kinetic_energy_change`] up to rounding, is never positive,
/// and vanishes exactly when `e = 1`, `σ = û` or `u = 0`.
pub fn delta_energy<const N: usize>(pair: &CollisionPair<N>, sigma: &Vector<N>, law: &RestitutionLaw) -> f64 {
    let u = pair.u();
    let speed2 = vecn::norm2(&u);
    if speed2 == 0.0 || law.e == 1.0 {
        return 0.0;
    }
    let cos = (vecn::dot(&u, sigma) / speed2.sqrt()).min(1.0);
    -0.25 * (1.0 - law.e * law.e) * speed2 * (1.0 - cos)
}

/// Kernel specification as it appears in configuration files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    #[default]
    Isotropic,
    Tabulated {
        cos_theta: Vec<f64>,
        values: Vec<f64>,
    },
    /// `b(x) = c (1 − x)^{−p}`.
    Power {
        exponent: f64,
    },
}

impl KernelSpec {
    pub fn build(&self, dim: Dimension) -> Result<AngularKernel> {
        let shape = match self {
            KernelSpec::Isotropic => KernelShape::Isotropic,
            KernelSpec::Tabulated { cos_theta, values } => KernelShape::tabulated(cos_theta.clone(), values.clone())?,
            KernelSpec::Power { exponent } => KernelShape::Power(*exponent),
        };
        AngularKernel::new(shape, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Isotropic,
    Tabulated,
    ClosedForm,
}

pub type ZonalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Unnormalized shape of the angular kernel as a function of `x = û·σ`.
#[derive(Clone)]
pub enum KernelShape {
    Isotropic,
    /// Piecewise-linear in `x` through `(cos_theta[k], values[k])`.
    Tabulated {
        xs: Vec<f64>,
        ys: Vec<f64>,
    },
    Power(f64),
    ClosedForm(ZonalFn),
}

impl fmt::Debug for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelShape::Isotropic => write!(f, "Isotropic"),
            KernelShape::Tabulated { xs, .. } => write!(f, "Tabulated({} nodes)", xs.len()),
            KernelShape::Power(p) => write!(f, "Power({p})"),
            KernelShape::ClosedForm(_) => write!(f, "ClosedForm"),
        }
    }
}

impl KernelShape {
    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::Kernel("tabulated kernel needs matching cos_theta/values of length >= 2".into()));
        }
        if (xs[0] + 1.0).abs() > 1e-12 || (xs[xs.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::Kernel("tabulated cos_theta must span [-1, 1]".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Kernel("tabulated cos_theta must be increasing".into()));
        }
        if ys.iter().any(|y| !y.is_finite() || *y < 0.0) {
            return Err(Error::Kernel("tabulated values must be finite and nonnegative".into()));
        }
        Ok(KernelShape::Tabulated { xs, ys })
    }

    pub fn closed_form(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        KernelShape::ClosedForm(Arc::new(f))
    }

    fn eval(&self, x: f64) -> f64 {
        match self {
            KernelShape::Isotropic => 1.0,
            KernelShape::Tabulated { xs, ys } => {
                let x = x.clamp(-1.0, 1.0);
                let k = match xs.partition_point(|t| *t <= x) {
                    0 => 0,
                    k if k >= xs.len() => xs.len() - 2,
                    k => k - 1,
                };
                let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
                ys[k] + t * (ys[k + 1] - ys[k])
            }
            KernelShape::Power(p) => {
                if *p == 0.0 {
                    1.0
                } else {
                    (1.0 - x).max(0.0).powf(-p)
                }
            }
            KernelShape::ClosedForm(f) => f(x),
        }
    }

    fn kind(&self) -> KernelKind {
        match self {
            KernelShape::Isotropic => KernelKind::Isotropic,
            KernelShape::Tabulated { .. } => KernelKind::Tabulated,
            KernelShape::Power(_) | KernelShape::ClosedForm(_) => KernelKind::ClosedForm,
        }
    }

    /// `∫_{S^{d-1}} (1 − x)^q · shape(x) dσ`, exact where a closed form exists.
    fn moment(&self, d: usize, q: f64, order: usize) -> f64 {
        match self {
            KernelShape::Isotropic => power_sphere_integral(d, -q),
            KernelShape::Power(p) => power_sphere_integral(d, p - q),
            KernelShape::Tabulated { xs, .. } => {
                // Piecewise in θ so the linear pieces are integrated smoothly.
                let gl = GaussLegendre::new(8);
                let outer = if d == 2 { 2.0 } else { sphere_area(d - 1) };
                let mut total = 0.0;
                for w in xs.windows(2) {
                    let (t_hi, t_lo) = (w[0].clamp(-1.0, 1.0).acos(), w[1].clamp(-1.0, 1.0).acos());
                    total += gl.integrate(t_lo, t_hi, |t| {
                        let x = t.cos();
                        (1.0 - x).powf(q) * self.eval(x) * t.sin().powi(d as i32 - 2)
                    });
                }
                outer * total
            }
            KernelShape::ClosedForm(_) => zonal_integral(d, order, |x| (1.0 - x).max(0.0).powf(q) * self.eval(x)),
        }
    }
}

/// `∫_{S^{d-1}} (1 − x)^{−p} dσ` for `p < (d−1)/2`.
fn power_sphere_integral(d: usize, p: f64) -> f64 {
    let outer = if d == 2 { 2.0 } else { sphere_area(d - 1) };
    let a = 0.5 * (d as f64 - 1.0 - 2.0 * p);
    let b = 0.5 * (d as f64 - 1.0);
    if a <= 0.0 {
        return f64::INFINITY;
    }
    outer * 2f64.powf(d as f64 - 1.0 - p) * 0.5 * statrs::function::beta::beta(a, b)
}

/// Angular kernel `b(x) = c · shape(x)` on `x ∈ [-1, 1]`.
#[derive(Clone, Debug)]
pub struct AngularKernel {
    shape: KernelShape,
    scale: f64,
    dim: Dimension,
    order: usize,
    b0: f64,
    b1: f64,
}

impl AngularKernel {
    /// Builds the kernel and rescales it to unit mass on `S^{N-1}`.
    pub fn new(shape: KernelShape, dim: Dimension) -> Result<Self> {
        Self::with_order(shape, dim, DEFAULT_ORDER)
    }

    pub fn with_order(shape: KernelShape, dim: Dimension, order: usize) -> Result<Self> {
        let mass = shape.moment(dim.get(), 0.0, order);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Kernel(format!(
                "kernel shape {shape:?} has non-normalizable mass {mass} on S^{}",
                dim.get() - 1
            )));
        }
        let scale = 1.0 / mass;
        if (scale - 1.0).abs() > 1e-12 {
            log::debug!("angular kernel {shape:?} rescaled by {scale:.6e} to unit mass");
        }
        Ok(Self::raw(shape, dim, scale, order))
    }

    /// A kernel with an explicit constant, without normalization.
    pub fn raw(shape: KernelShape, dim: Dimension, scale: f64, order: usize) -> Self {
        let (mut b0, mut b1) = (f64::INFINITY, 0.0f64);
        let m = 2000;
        for k in 0..=m {
            let x = -1.0 + 2.0 * k as f64 / m as f64;
            let b = scale * shape.eval(x);
            b0 = b0.min(b);
            b1 = b1.max(b);
        }
        if let KernelShape::Tabulated { ys, .. } = &shape {
            b0 = ys.iter().fold(f64::INFINITY, |a, y| a.min(scale * y));
            b1 = ys.iter().fold(0.0, |a, y| a.max(scale * y));
        }
        AngularKernel { shape, scale, dim, order, b0, b1 }
    }

    pub fn isotropic(dim: Dimension) -> Self {
        Self::new(KernelShape::Isotropic, dim).expect("isotropic kernel is normalizable")
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.scale * self.shape.eval(x)
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }

    pub fn kind(&self) -> KernelKind {
        self.shape.kind()
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self.shape, KernelShape::Isotropic)
    }

    /// `∫_{S^{N-1}} b(û·σ) dσ`.
    pub fn normalization(&self) -> f64 {
        self.scale * self.shape.moment(self.dim.get(), 0.0, self.order)
    }
}

/// `m_b = ∫ (1 − û·σ)/2 · b(û·σ) dσ`.
pub fn angular_momentum_mb(kernel: &AngularKernel, dim: Dimension) -> Result<f64> {
    if dim != kernel.dim {
        return Err(Error::Kernel(format!(
            "kernel normalized for N = {}, queried at N = {}",
            kernel.dim.get(),
            dim.get()
        )));
    }
    let d = dim.get();
    let mb = 0.5 * kernel.scale * kernel.shape.moment(d, 1.0, kernel.order);
    if let KernelShape::ClosedForm(_) = kernel.shape {
        let fine = 0.5 * kernel.scale * kernel.shape.moment(d, 1.0, 2 * kernel.order);
        let estimate = (fine - mb).abs();
        if estimate > 1e-8 * fine.abs().max(1e-300) {
            return Err(Error::Quadrature { what: format!("m_b at order {}", kernel.order), estimate });
        }
    }
    Ok(mb)
}

/// Inelasticity coefficient `τ = m_b (1 − e²)/4`.
pub fn tau_of(mb: f64, law: &RestitutionLaw) -> f64 {
    mb * 0.25 * (1.0 - law.e * law.e)
}

/// Uniformly distributed point of `S^{N-1}`.
pub fn uniform_sphere<const N: usize, R: Rng + ?Sized>(rng: &mut R) -> Vector<N> {
    loop {
        let g: Vector<N> = std::array::from_fn(|_| rng.sample(StandardNormal));
        if let Some(s) = vecn::normalize(&g) {
            return s;
        }
    }
}

/// Draws `σ` with density `b(û·σ)` on `S^{N-1}` by rejection from the
/// uniform distribution. Returns the direction and the number of proposals.
pub fn sample_sigma_counted<const N: usize, R: Rng + ?Sized>(
    rng: &mut R,
    u_hat: &Vector<N>,
    kernel: &AngularKernel,
) -> Result<(Vector<N>, usize)> {
    if kernel.is_isotropic() || kernel.b0 >= kernel.b1 {
        return Ok((uniform_sphere(rng), 1));
    }
    if !kernel.b1.is_finite() {
        return Err(Error::Kernel("rejection sampling needs a bounded kernel".into()));
    }
    for tries in 1..=SAMPLING_CAP {
        let s = uniform_sphere::<N, R>(rng);
        let x = vecn::dot(u_hat, &s);
        if rng.random::<f64>() * kernel.b1 < kernel.eval(x) {
            return Ok((s, tries));
        }
    }
    Err(Error::SamplingCap(SAMPLING_CAP))
}

pub fn sample_sigma<const N: usize, R: Rng + ?Sized>(
    rng: &mut R,
    u_hat: &Vector<N>,
    kernel: &AngularKernel,
) -> Result<Vector<N>> {
    sample_sigma_counted(rng, u_hat, kernel).map(|(s, _)| s)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelValidation {
    pub normalization: f64,
    pub b0: f64,
    pub b1: f64,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl KernelValidation {
    pub fn passed(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks cutoff bounds and normalization (fatal) and monotone convexity
/// (warning only).
pub fn validate_kernel(kernel: &AngularKernel, dim: Dimension) -> KernelValidation {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    if dim != kernel.dim {
        errors.push(format!("kernel normalized for N = {}, validated at N = {}", kernel.dim.get(), dim.get()));
    }
    let d = dim.get();
    let normalization = kernel.scale * kernel.shape.moment(d, 0.0, 4 * kernel.order);
    let tol = match kernel.kind() {
        KernelKind::Tabulated => 1e-6,
        _ => 1e-10,
    };
    if !((normalization - 1.0).abs() <= tol) {
        errors.push(format!("normalization {normalization:.12} differs from 1 by more than {tol:e}"));
    }
    if !(kernel.b0 > 0.0) {
        errors.push(format!("lower bound b0 = {} is not positive", kernel.b0));
    }
    if !kernel.b1.is_finite() {
        errors.push("upper bound b1 is not finite".to_string());
    }

    let m = 400;
    let h = 2.0 / m as f64;
    let samples: Vec<f64> = (0..=m).map(|k| kernel.eval((-1.0 + k as f64 * h).min(1.0 - 1e-9))).collect();
    let scale = kernel.b1.clamp(1e-300, 1e300);
    let slack = 1e-9 * scale;
    if let Some(k) = samples.windows(2).position(|w| w[1] < w[0] - slack) {
        warnings.push(format!("b is not nondecreasing near x = {:.4}", -1.0 + k as f64 * h));
    }
    if let Some(k) = samples.windows(3).position(|w| w[2] - 2.0 * w[1] + w[0] < -slack) {
        warnings.push(format!("b is not convex near x = {:.4}", -1.0 + (k + 1) as f64 * h));
    }
    KernelValidation { normalization, b0: kernel.b0, b1: kernel.b1, errors, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn d(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn beta_values() {
        assert_eq!(RestitutionLaw::new(1.0).unwrap().beta().unwrap(), 1.0);
        assert_eq!(RestitutionLaw::new(0.5).unwrap().beta().unwrap(), 1.5);
        assert!(RestitutionLaw::new(0.0).unwrap().beta().is_err());
        assert!(RestitutionLaw::new(1.5).is_err());
        assert!(Dimension::new(1).is_err());
    }

    #[test]
    fn post_collisional_examples() {
        let pair = CollisionPair::new([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        let sigma = [0.0, 1.0, 0.0];
        let (vp, vsp) = post_collisional(&pair, &sigma, &RestitutionLaw::elastic());
        assert_eq!(vp, [0.0, 1.0, 0.0]);
        assert_eq!(vsp, [0.0, -1.0, 0.0]);

        let (vp, vsp) = post_collisional(&pair, &sigma, &RestitutionLaw::new(0.0).unwrap());
        assert_eq!(vp, [0.5, 0.5, 0.0]);
        assert_eq!(vsp, [-0.5, -0.5, 0.0]);

        let u_hat = pair.u_hat().unwrap();
        let (vp, vsp) = post_collisional(&pair, &u_hat, &RestitutionLaw::new(0.3).unwrap());
        assert_eq!((vp, vsp), (pair.v, pair.v_star));
    }

    #[test]
    fn zero_relative_velocity_is_identity() {
        let pair = CollisionPair::new([0.2, 0.3], [0.2, 0.3]);
        let law = RestitutionLaw::new(0.5).unwrap();
        assert_eq!(post_collisional(&pair, &[0.0, 1.0], &law), (pair.v, pair.v_star));
        assert_eq!(pre_collisional(&pair, &[0.0, 1.0], &law).unwrap(), (pair.v, pair.v_star));
        assert_eq!(delta_energy(&pair, &[0.0, 1.0], &law), 0.0);
    }

    #[test]
    fn pre_collisional_examples() {
        let pair = CollisionPair::new([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        let sigma = [0.0, 1.0, 0.0];
        let (pv, pvs) = pre_collisional(&pair, &sigma, &RestitutionLaw::elastic()).unwrap();
        assert_eq!(pv, [0.0, 1.0, 0.0]);
        assert_eq!(pvs, [0.0, -1.0, 0.0]);

        let (pv, pvs) = pre_collisional(&pair, &sigma, &RestitutionLaw::new(0.5).unwrap()).unwrap();
        for (got, want) in pv.iter().zip([-0.5, 1.5, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in pvs.iter().zip([0.5, -1.5, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }

        let (pv, pvs) = pre_collisional(&pair, &pair.u_hat().unwrap(), &RestitutionLaw::elastic()).unwrap();
        assert_eq!((pv, pvs), (pair.v, pair.v_star));
        assert!(pre_collisional(&pair, &sigma, &RestitutionLaw::new(0.0).unwrap()).is_err());
    }

    #[test]
    fn delta_energy_examples() {
        let law = RestitutionLaw::new(0.5).unwrap();
        // |u| = 2, û·σ = 0
        let pair = CollisionPair::new([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
        let sigma = [0.0, 0.0, 1.0];
        let direct = delta_energy(&pair, &sigma, &law);
        assert!((direct + 0.75).abs() < 1e-14);
        assert!((kinetic_energy_change(&pair, &sigma, &law) + 0.75).abs() < 1e-15);
        assert_eq!(delta_energy(&pair, &sigma, &RestitutionLaw::elastic()), 0.0);
    }

    #[test]
    fn mb_examples() {
        let k3 = AngularKernel::isotropic(d(3));
        assert!((k3.eval(0.3) - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!((angular_momentum_mb(&k3, d(3)).unwrap() - 0.5).abs() < 1e-13);
        let k2 = AngularKernel::isotropic(d(2));
        assert!((k2.eval(0.3) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((angular_momentum_mb(&k2, d(2)).unwrap() - 0.5).abs() < 1e-13);
        assert!(angular_momentum_mb(&k3, d(2)).is_err());
    }

    #[test]
    fn mb_vanishes_for_forward_concentrated_kernel() {
        let k = AngularKernel::with_order(KernelShape::closed_form(|x| (400.0 * (x - 1.0)).exp()), d(3), 1024).unwrap();
        let mb = angular_momentum_mb(&k, d(3)).unwrap();
        // Analytic value for the exponential profile is ≈ 1/(2·400).
        assert!(mb > 0.0 && mb < 2e-3, "mb = {mb}");
    }

    #[test]
    fn mb_of_power_kernel_matches_quadrature() {
        let dim = d(3);
        let power = AngularKernel::new(KernelShape::Power(-1.0), dim).unwrap();
        let closed = AngularKernel::with_order(KernelShape::closed_form(|x| 1.0 - x), dim, 64).unwrap();
        let a = angular_momentum_mb(&power, dim).unwrap();
        let b = angular_momentum_mb(&closed, dim).unwrap();
        // b ∝ (1 − x): m_b = ½ ∫(1−x)² / ∫(1−x) = ½ · (8/3)/2 = 2/3
        assert!((a - 2.0 / 3.0).abs() < 1e-12, "{a}");
        assert!((b - 2.0 / 3.0).abs() < 1e-12, "{b}");
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_of(0.5, &RestitutionLaw::elastic()), 0.0);
        assert!((tau_of(0.5, &RestitutionLaw::new(0.0).unwrap()) - 0.125).abs() < 1e-15);
        assert!((tau_of(0.5, &RestitutionLaw::new(0.8).unwrap()) - 0.045).abs() < 1e-15);
    }

    #[test]
    fn tabulated_kernel_is_normalized_and_interpolated() {
        let dim = d(3);
        let shape = KernelShape::tabulated(vec![-1.0, 0.0, 1.0], vec![1.0, 2.0, 4.0]).unwrap();
        let k = AngularKernel::new(shape, dim).unwrap();
        let report = validate_kernel(&k, dim);
        assert!(report.passed(), "{report:?}");
        // ∫ b dσ = 2π (∫_{-1}^0 (2 + x) dx + ∫_0^1 (2 + 2x) dx) = 2π · 4.5
        assert!((k.eval(0.5) - 3.0 / (9.0 * PI)).abs() < 1e-12);
        assert!(k.b0() > 0.0 && k.b1() / k.b0() - 4.0 < 1e-12);
    }

    #[test]
    fn validation_examples() {
        let dim = d(3);
        let physical = KernelSpec::Power { exponent: 0.0 }.build(dim).unwrap();
        let r = validate_kernel(&physical, dim);
        assert!(r.passed() && r.warnings.is_empty(), "{r:?}");

        let doubled = AngularKernel::raw(KernelShape::Isotropic, dim, 2.0 / (4.0 * PI), 64);
        let r = validate_kernel(&doubled, dim);
        assert!(!r.passed());
        assert!(r.errors[0].contains("normalization"));

        let linear = AngularKernel::new(KernelShape::closed_form(|x| 1.0 + x), dim).unwrap();
        let r = validate_kernel(&linear, dim);
        // b(−1) = 0 violates the lower cutoff bound but not monotone convexity.
        assert!(r.warnings.is_empty(), "{r:?}");

        let shifted = AngularKernel::new(KernelShape::closed_form(|x| 1.5 + x), dim).unwrap();
        let r = validate_kernel(&shifted, dim);
        assert!(r.passed() && r.warnings.is_empty(), "{r:?}");

        let concave = AngularKernel::new(KernelShape::closed_form(|x| 2.0 - x * x), dim).unwrap();
        let r = validate_kernel(&concave, dim);
        assert!(r.passed());
        assert_eq!(r.warnings.len(), 2, "{r:?}");

        let unbounded = KernelSpec::Power { exponent: 0.5 }.build(dim).unwrap();
        assert!(!validate_kernel(&unbounded, dim).passed());
    }

    #[test]
    fn isotropic_sigma_has_uniform_cosine() {
        let k = AngularKernel::isotropic(d(3));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u_hat = vecn::normalize(&[1.0, 2.0, -0.5]).unwrap();
        let n = 100_000;
        let mut xs: Vec<f64> =
            (0..n).map(|_| vecn::dot(&u_hat, &sample_sigma(&mut rng, &u_hat, &k).unwrap())).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = 0.5 * (x + 1.0);
                (cdf - i as f64 / n as f64).abs().max((cdf - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov distribution: P(D > 1.628/√n) = 0.01.
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn sampled_sigma_reproduces_mb() {
        let dim = d(3);
        let k = AngularKernel::new(KernelShape::closed_form(|x| 1.0 + 0.8 * x + 0.5 * x * x), dim).unwrap();
        let mb = angular_momentum_mb(&k, dim).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u_hat = [0.0, 0.0, 1.0];
        let n = 100_000;
        let vals: Vec<f64> =
            (0..n).map(|_| 0.5 * (1.0 - vecn::dot(&u_hat, &sample_sigma(&mut rng, &u_hat, &k).unwrap()))).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - mb).abs() < 3.0 * se, "mean {mean} mb {mb} se {se}");
    }

    #[test]
    fn constant_kernel_accepts_every_proposal() {
        let dim = d(3);
        let k = AngularKernel::new(KernelShape::closed_form(|_| 3.0), dim).unwrap();
        assert_eq!(k.b0(), k.b1());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (_, tries) = sample_sigma_counted(&mut rng, &[1.0, 0.0, 0.0], &k).unwrap();
            assert_eq!(tries, 1);
        }
    }

    fn unit3(a: f64, b: f64) -> [f64; 3] {
        let z = 2.0 * a - 1.0;
        let s = (1.0 - z * z).sqrt();
        let phi = 2.0 * PI * b;
        [s * phi.cos(), s * phi.sin(), z]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn momentum_is_conserved(
            v in prop::array::uniform3(-10.0f64..10.0),
            w in prop::array::uniform3(-10.0f64..10.0),
            a in 0.0f64..1.0, b in 0.0f64..1.0, e in 0.0f64..=1.0,
        ) {
            let pair = CollisionPair::new(v, w);
            let sigma = unit3(a, b);
            let (vp, vsp) = post_collisional(&pair, &sigma, &RestitutionLaw::new(e).unwrap());
            let mag = vecn::norm(&v) + vecn::norm(&w);
            for i in 0..3 {
                prop_assert!((vp[i] + vsp[i] - v[i] - w[i]).abs() <= 4.0 * f64::EPSILON * mag.max(1.0));
            }
        }

        #[test]
        fn dissipation_sign_and_closed_form(
            v in prop::array::uniform3(-10.0f64..10.0),
            w in prop::array::uniform3(-10.0f64..10.0),
            a in 0.0f64..1.0, b in 0.0f64..1.0, e in 0.0f64..=1.0,
        ) {
            let pair = CollisionPair::new(v, w);
            let sigma = unit3(a, b);
            let law = RestitutionLaw::new(e).unwrap();
            let raw = kinetic_energy_change(&pair, &sigma, &law);
            let closed = delta_energy(&pair, &sigma, &law);
            prop_assert!(closed <= 0.0);
            let scale = vecn::norm2(&v) + vecn::norm2(&w);
            // Closed form against the direct difference of kinetic energies,
            // relative to the magnitude being differenced.
            prop_assert!((raw - closed).abs() <= 1e-12 * scale.max(1e-300) + 1e-300,
                "raw {raw} closed {closed}");
        }

        #[test]
        fn pre_post_round_trip(
            v in prop::array::uniform3(-5.0f64..5.0),
            w in prop::array::uniform3(-5.0f64..5.0),
            a in 0.0f64..1.0, b in 0.0f64..1.0, e in 0.05f64..=1.0,
        ) {
            let pair = CollisionPair::new(v, w);
            prop_assume!(vecn::norm(&pair.u()) > 1e-3);
            let law = RestitutionLaw::new(e).unwrap();
            let sigma = unit3(a, b);
            let (pv, pvs) = pre_collisional(&pair, &sigma, &law).unwrap();
            let pre = CollisionPair::new(pv, pvs);
            let pu = pre.u();
            // Oracle: solve u = (1−e)/2 'u + (1+e)/2 |'u| σ' for σ'.
            let u = pair.u();
            let c = 0.5 * (1.0 + e) * vecn::norm(&pu);
            let solved: [f64; 3] = std::array::from_fn(|i| (u[i] - 0.5 * (1.0 - e) * pu[i]) / c);
            prop_assert!((vecn::norm(&solved) - 1.0).abs() < 1e-9);
            let u_hat = pair.u_hat().unwrap();
            let formula = vecn::normalize(&std::array::from_fn(|i| (1.0 + e) * u_hat[i] - (1.0 - e) * sigma[i])).unwrap();
            for i in 0..3 {
                prop_assert!((solved[i] - formula[i]).abs() < 1e-9);
            }
            let (bv, bvs) = post_collisional(&pre, &formula, &law);
            for i in 0..3 {
                prop_assert!((bv[i] - v[i]).abs() < 1e-10 * (1.0 + vecn::norm(&pu)));
                prop_assert!((bvs[i] - w[i]).abs() < 1e-10 * (1.0 + vecn::norm(&pu)));
            }
            prop_assert!(vecn::norm(&pu) >= vecn::norm(&u) * (1.0 - 1e-12));
        }

        #[test]
        fn elastic_pre_and_post_coincide(
            v in prop::array::uniform3(-5.0f64..5.0),
            w in prop::array::uniform3(-5.0f64..5.0),
            a in 0.0f64..1.0, b in 0.0f64..1.0,
        ) {
            let pair = CollisionPair::new(v, w);
            let sigma = unit3(a, b);
            let law = RestitutionLaw::elastic();
            let post = post_collisional(&pair, &sigma, &law);
            let pre = pre_collisional(&pair, &sigma, &law).unwrap();
            for i in 0..3 {
                prop_assert!((post.0[i] - pre.0[i]).abs() < 1e-12);
                prop_assert!((post.1[i] - pre.1[i]).abs() < 1e-12);
            }
        }
    }
}
