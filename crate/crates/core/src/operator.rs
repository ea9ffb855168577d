//! Deterministic evaluation of the collision operator.
//!
//! The gain term is available in three forms: the direct strong form
//! integrating pre-collisional velocities over `(v_*, σ)`, the Carleman form
//! integrating over `'v` and a hyperplane of partners `'v_*`, and the weak
//! form integrated against a test function. They serve as independent
//! cross-checks of each other and of the particle simulator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{angular_momentum_mb, post_collisional, tau_of, AngularKernel, CollisionPair, RestitutionLaw};
use crate::quadrature::{sphere_area, sphere_points, zonal_integral, GaussLegendre, SphereRule, VelocityRule};
use crate::vecn::{self, Vector};

/// A nonnegative velocity density that can be evaluated pointwise.
pub trait Density<const N: usize>: Sync {
    fn value(&self, v: &Vector<N>) -> f64;

    /// A ball `(center, radius)` outside of which the density vanishes (or is
    /// negligible).
    fn support_ball(&self) -> (Vector<N>, f64);

    /// Interval of `t` for which `x + t d` may lie in the support; `d` is a
    /// unit vector.
    fn line_support(&self, x: &Vector<N>, d: &Vector<N>) -> Option<(f64, f64)> {
        let (c, r) = self.support_ball();
        ball_chord(x, d, &c, r)
    }
}

fn ball_chord<const N: usize>(x: &Vector<N>, d: &Vector<N>, c: &Vector<N>, r: f64) -> Option<(f64, f64)> {
    let w = vecn::sub(x, c);
    let b = vecn::dot(d, &w);
    let disc = b * b - (vecn::norm2(&w) - r * r);
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

/// Isotropic Gaussian of given mass, mean and temperature (per-component
/// variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<const N: usize> {
    pub mass: f64,
    pub mean: Vector<N>,
    pub temperature: f64,
}

impl<const N: usize> Gaussian<N> {
    pub fn standard() -> Self {
        Gaussian { mass: 1.0, mean: [0.0; N], temperature: 1.0 }
    }

    pub fn new(mass: f64, mean: Vector<N>, temperature: f64) -> Self {
        Gaussian { mass, mean, temperature }
    }
}

impl<const N: usize> Density<N> for Gaussian<N> {
    fn value(&self, v: &Vector<N>) -> f64 {
        let r2 = vecn::norm2(&vecn::sub(v, &self.mean));
        let t = self.temperature;
        self.mass * (-0.5 * r2 / t).exp() / (2.0 * std::f64::consts::PI * t).powf(N as f64 / 2.0)
    }

    fn support_ball(&self) -> (Vector<N>, f64) {
        // exp(-40) ~ 4e-18 relative to the peak.
        (self.mean, (80.0 * self.temperature).sqrt())
    }
}

/// Constant density `height` on a closed ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallIndicator<const N: usize> {
    pub center: Vector<N>,
    pub radius: f64,
    pub height: f64,
}

impl<const N: usize> BallIndicator<N> {
    pub fn unit() -> Self {
        BallIndicator { center: [0.0; N], radius: 1.0, height: 1.0 }
    }
}

impl<const N: usize> Density<N> for BallIndicator<N> {
    fn value(&self, v: &Vector<N>) -> f64 {
        if vecn::norm2(&vecn::sub(v, &self.center)) <= self.radius * self.radius {
            self.height
        } else {
            0.0
        }
    }

    fn support_ball(&self) -> (Vector<N>, f64) {
        (self.center, self.radius)
    }
}

/// Density sampled on the uniform tensor grid `[-L, L]^N`, interpolated
/// multilinearly and extended by zero.
#[derive(Debug, Clone)]
pub struct DensityGrid<const N: usize> {
    extent: f64,
    points: usize,
    spacing: f64,
    values: Vec<f64>,
    mass: f64,
    momentum: Vector<N>,
    energy: f64,
    support_radius: f64,
}

impl<const N: usize> DensityGrid<N> {
    pub fn from_values(extent: f64, points: usize, values: Vec<f64>) -> Result<Self> {
        if N < 2 {
            return Err(Error::Domain("velocity dimension must be at least 2".into()));
        }
        if !(extent > 0.0) || points < 2 {
            return Err(Error::Domain(format!(
                "grid needs positive extent and at least 2 points per axis (got L={extent}, n={points})"
            )));
        }
        if values.len() != points.pow(N as u32) {
            return Err(Error::Domain(format!("grid expects {} values, got {}", points.pow(N as u32), values.len())));
        }
        if let Some(bad) = values.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain(format!("grid values must be finite and nonnegative, found {bad}")));
        }
        let spacing = 2.0 * extent / (points - 1) as f64;
        let mut grid = DensityGrid {
            extent,
            points,
            spacing,
            values,
            mass: 0.0,
            momentum: [0.0; N],
            energy: 0.0,
            support_radius: extent * (N as f64).sqrt(),
        };
        let peak = grid.values.iter().cloned().fold(0.0, f64::max);
        let mut reach: f64 = 0.0;
        let (mut mass, mut momentum, mut energy) = (0.0, [0.0; N], 0.0);
        for (v, w, g) in grid.nodes() {
            mass += w * g;
            for i in 0..N {
                momentum[i] += w * g * v[i];
            }
            energy += w * g * vecn::norm2(&v);
            if g > 1e-14 * peak {
                reach = reach.max(vecn::norm(&v));
            }
        }
        grid.mass = mass;
        grid.momentum = momentum;
        grid.energy = energy;
        grid.support_radius = grid.support_radius.min(reach + spacing * (N as f64).sqrt());
        Ok(grid)
    }

    pub fn from_fn(extent: f64, points: usize, f: impl Fn(&Vector<N>) -> f64) -> Result<Self> {
        let total = points.pow(N as u32);
        let h = 2.0 * extent / (points.max(2) - 1) as f64;
        let values = (0..total)
            .map(|flat| {
                let mut rem = flat;
                let v: Vector<N> = std::array::from_fn(|_| {
                    let i = rem % points;
                    rem /= points;
                    -extent + i as f64 * h
                });
                f(&v)
            })
            .collect();
        Self::from_values(extent, points, values)
    }

    pub fn sample(extent: f64, points: usize, density: &impl Density<N>) -> Result<Self> {
        Self::from_fn(extent, points, |v| density.value(v))
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn momentum(&self) -> Vector<N> {
        self.momentum
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Grid nodes with their trapezoid weights and values.
    pub fn nodes(&self) -> impl Iterator<Item = (Vector<N>, f64, f64)> + '_ {
        let n = self.points;
        let h = self.spacing;
        let cell = h.powi(N as i32);
        self.values.iter().enumerate().map(move |(flat, &g)| {
            let mut rem = flat;
            let mut w = cell;
            let v: Vector<N> = std::array::from_fn(|_| {
                let i = rem % n;
                rem /= n;
                if i == 0 || i == n - 1 {
                    w *= 0.5;
                }
                -self.extent + i as f64 * h
            });
            (v, w, g)
        })
    }

    /// The grid as a discrete measure (nodes with nonzero mass).
    pub fn measure(&self) -> Vec<(Vector<N>, f64)> {
        self.nodes().filter(|(_, _, g)| *g > 0.0).map(|(v, w, g)| (v, w * g)).collect()
    }
}

impl<const N: usize> Density<N> for DensityGrid<N> {
    fn value(&self, v: &Vector<N>) -> f64 {
        let n = self.points;
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut frac = [0.0; N];
        let mut strides = [0usize; N];
        for k in 0..N {
            let p = (v[k] + self.extent) / self.spacing;
            if !(p >= 0.0 && p <= (n - 1) as f64) {
                return 0.0;
            }
            let i = (p.floor() as usize).min(n - 2);
            frac[k] = p - i as f64;
            base += i * stride;
            strides[k] = stride;
            stride *= n;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << N) {
            let mut w = 1.0;
            let mut idx = base;
            for k in 0..N {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    idx += strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    fn support_ball(&self) -> (Vector<N>, f64) {
        ([0.0; N], self.support_radius)
    }

    fn line_support(&self, x: &Vector<N>, d: &Vector<N>) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = ball_chord(x, d, &[0.0; N], self.support_radius)?;
        for k in 0..N {
            if d[k].abs() < 1e-300 {
                if x[k].abs() > self.extent {
                    return None;
                }
                continue;
            }
            let a = (-self.extent - x[k]) / d[k];
            let b = (self.extent - x[k]) / d[k];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        (hi > lo).then_some((lo, hi))
    }
}

/// Quadrature orders for operator evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes along radial directions.
    pub radial_order: usize,
    /// Polar order of the sphere rules (circles use twice this many points).
    pub angular_order: usize,
    /// Gauss–Legendre nodes along hyperplane rays (Carleman form).
    pub hyperplane_order: usize,
    /// Nodes per axis for tensor rules over velocity space.
    pub velocity_order: usize,
    /// Probe velocities, when fixed by configuration.
    pub targets: Vec<Vec<f64>>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            radial_order: 24,
            angular_order: 16,
            hyperplane_order: 24,
            velocity_order: 20,
            targets: Vec::new(),
        }
    }
}

impl QuadratureSpec {
    pub fn uniform(order: usize) -> Self {
        QuadratureSpec {
            radial_order: order,
            angular_order: order,
            hyperplane_order: order,
            velocity_order: order,
            targets: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("radial_order", self.radial_order),
            ("angular_order", self.angular_order),
            ("hyperplane_order", self.hyperplane_order),
            ("velocity_order", self.velocity_order),
        ] {
            if v < 4 {
                errs.push(format!("quadrature.{name} must be at least 4, got {v}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Orders scaled by `num/den` (at least 4), used for error estimates.
    pub fn coarsened(&self, num: usize, den: usize) -> Self {
        let c = |o: usize| (o * num / den).max(4);
        QuadratureSpec {
            radial_order: c(self.radial_order),
            angular_order: c(self.angular_order),
            hyperplane_order: c(self.hyperplane_order),
            velocity_order: c(self.velocity_order),
            targets: self.targets.clone(),
        }
    }
}

type TestFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Test function `ψ` for the weak form.
#[derive(Clone)]
pub enum TestFunction {
    One,
    Component(usize),
    SpeedSquared,
    /// Must grow at most linearly in `|v|`.
    Custom(Arc<TestFn>),
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestFunction::One => write!(f, "One"),
            TestFunction::Component(i) => write!(f, "Component({i})"),
            TestFunction::SpeedSquared => write!(f, "SpeedSquared"),
            TestFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl TestFunction {
    #[inline]
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::Component(i) => v[*i],
            TestFunction::SpeedSquared => v.iter().map(|x| x * x).sum(),
            TestFunction::Custom(f) => f(v),
        }
    }
}

/// Discretize a density with a velocity rule into `(node, mass)` pairs,
/// dropping nodes with zero mass.
pub fn discretize<const N: usize>(density: &impl Density<N>, rule: &VelocityRule<N>) -> Vec<(Vector<N>, f64)> {
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .filter_map(|(v, w)| {
            let m = w * density.value(v);
            (m != 0.0).then_some((*v, m))
        })
        .collect()
}

/// `(g ∗ Φ)(v) = ∫ g(v_*) |v − v_*| dv_*` by trapezoid quadrature on the grid.
pub fn loss_rate<const N: usize>(g: &DensityGrid<N>, v: &Vector<N>) -> f64 {
    g.nodes().filter(|(_, _, x)| *x > 0.0).map(|(vs, w, x)| w * x * vecn::norm(&vecn::sub(v, &vs))).sum()
}

/// `(g ∗ Φ)(v)` against a discrete measure.
pub fn loss_rate_measure<const N: usize>(g: &[(Vector<N>, f64)], v: &Vector<N>) -> f64 {
    g.iter().map(|(vs, m)| m * vecn::norm(&vecn::sub(v, vs))).sum()
}

/// `Q⁻(g, f)(v) = (g ∗ Φ)(v) f(v)`.
pub fn q_minus<const N: usize>(g: &DensityGrid<N>, f: &impl Density<N>, v: &Vector<N>) -> f64 {
    let fv = f.value(v);
    if fv == 0.0 {
        return 0.0;
    }
    loss_rate(g, v) * fv
}

/// Gain term from the strong form, integrating over `v_* = v − r û` and `σ`.
pub fn q_plus_direct<const N: usize>(
    g: &impl Density<N>,
    f: &impl Density<N>,
    v: &Vector<N>,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let beta = law.beta().map_err(|_| {
        Error::Domain("the strong form of Q⁺ is singular at e = 0; use the Carleman form in N = 3".into())
    })?;
    let e = law.e();
    let sphere = SphereRule::<N>::new(quad.angular_order);
    let gl = GaussLegendre::new(quad.radial_order);
    let (cf, rf) = f.support_ball();
    let (cg, rg) = g.support_ball();
    let r_max = vecn::norm(&vecn::sub(&cf, &cg)) + rf + rg;
    let b_vals: Vec<f64> = sphere.points.iter().map(|p| kernel.eval(p[0])).collect();
    let half_beta = 0.5 * beta;

    let mut total = 0.0;
    for (r, wr) in gl.on(0.0, r_max) {
        let radial = wr * r.powi(N as i32);
        let mut shell = 0.0;
        for (u_hat, wu) in sphere.points.iter().zip(&sphere.weights) {
            let frame = vecn::frame(u_hat);
            let u = vecn::scale(u_hat, r);
            let v_star = vecn::sub(v, &u);
            let mut inner = 0.0;
            for ((local, ws), b) in sphere.points.iter().zip(&sphere.weights).zip(&b_vals) {
                let sigma = vecn::expand(&frame, local);
                // 'v = v + β/2 (|u|σ − u), 'v_* = v_* − β/2 (|u|σ − u)
                let shift: Vector<N> = std::array::from_fn(|i| half_beta * (r * sigma[i] - u[i]));
                let fv = f.value(&vecn::add(v, &shift));
                if fv == 0.0 {
                    continue;
                }
                let gv = g.value(&vecn::sub(&v_star, &shift));
                inner += ws * b * fv * gv;
            }
            shell += wu * inner;
        }
        total += radial * shell;
    }
    Ok(total / (e * e))
}

/// Gain term from the Carleman representation: an outer integral over
/// `'v = v + ρ ω` and an inner one over `'v_*` in the hyperplane orthogonal
/// to `ω` through `Ω(v, 'v) = v + (1 − β⁻¹)(v − 'v)`.
///
/// Valid for `e ∈ (0, 1]` in any dimension, and for `e = 0` when `N = 3`.
pub fn q_plus_carleman<const N: usize>(
    g: &impl Density<N>,
    f: &impl Density<N>,
    v: &Vector<N>,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let e = law.e();
    if e == 0.0 && N != 3 {
        return Err(Error::Domain(format!("the Carleman form at e = 0 is only defined for N = 3 (got N = {N})")));
    }
    let beta_inv = law.beta_inv();
    // 2^{N-1} / (β^{N-1} e²) = 2^{N-1} β^{3-N} / (eβ)²
    let prefactor = 2f64.powi(N as i32 - 1) * beta_inv.powi(N as i32 - 3) / law.e_beta().powi(2);

    // Directions from v that can reach the support of f.
    let (cf, rf) = f.support_ball();
    let to_center = vecn::sub(&cf, v);
    let dist = vecn::norm(&to_center);
    let outer_sphere = if dist > rf {
        let axis = vecn::scale(&to_center, 1.0 / dist);
        let frame = vecn::frame(&axis);
        let mut cap = SphereRule::<N>::cap(quad.angular_order, (1.0 - (rf / dist).powi(2)).sqrt());
        for p in cap.points.iter_mut() {
            *p = vecn::expand(&frame, p);
        }
        cap
    } else {
        SphereRule::<N>::new(quad.angular_order)
    };
    let plane_dirs = sphere_points(N - 1, quad.angular_order);
    let gl_out = GaussLegendre::new(quad.radial_order);
    let gl_in = GaussLegendre::new(quad.hyperplane_order);
    let (cg, rg) = g.support_ball();

    let mut total = 0.0;
    for (omega, w_omega) in outer_sphere.points.iter().zip(&outer_sphere.weights) {
        let Some((t0, t1)) = f.line_support(v, omega) else { continue };
        let (t0, t1) = (t0.max(0.0), t1);
        if t1 <= t0 {
            continue;
        }
        let frame = vecn::frame(omega);
        let in_plane: Vec<Vector<N>> = plane_dirs
            .iter()
            .map(|(eta, _)| {
                let mut local = [0.0; N];
                local[1..].copy_from_slice(eta);
                vecn::expand(&frame, &local)
            })
            .collect();
        let mut ray = 0.0;
        for (rho, w_rho) in gl_out.on(t0, t1) {
            let pv = vecn::axpy(v, rho, omega);
            let fv = f.value(&pv);
            if fv == 0.0 || rho <= 0.0 {
                continue;
            }
            let omega_pt = vecn::axpy(v, -(1.0 - beta_inv) * rho, omega);
            // Disk cut from the support ball of g by the hyperplane.
            let offset = vecn::dot(&vecn::sub(&cg, &omega_pt), omega);
            let disk2 = rg * rg - offset * offset;
            if disk2 <= 0.0 {
                continue;
            }
            let center = vecn::axpy(&cg, -offset, omega);
            let mut plane = 0.0;
            for (eta, (_, w_eta)) in in_plane.iter().zip(&plane_dirs) {
                let Some((s0, s1)) = g.line_support(&center, eta) else { continue };
                let s0 = s0.max(0.0);
                if s1 <= s0 {
                    continue;
                }
                let mut line = 0.0;
                for (s, ws) in gl_in.on(s0, s1) {
                    let pvs = vecn::axpy(&center, s, eta);
                    let gv = g.value(&pvs);
                    if gv == 0.0 {
                        continue;
                    }
                    let v_star = vecn::sub(&vecn::add(&pv, &pvs), v);
                    let u = vecn::sub(v, &v_star);
                    let speed = vecn::norm(&u);
                    if speed == 0.0 {
                        continue;
                    }
                    let pu = vecn::sub(&pv, &pvs);
                    // 'u = (1 − β) u + β |u| σ  ⇒  σ ∥ β⁻¹ 'u + (1 − β⁻¹) u
                    let dir: Vector<N> = std::array::from_fn(|i| beta_inv * pu[i] + (1.0 - beta_inv) * u[i]);
                    let cos = match vecn::normalize(&dir) {
                        Some(sigma) => (vecn::dot(&u, &sigma) / speed).clamp(-1.0, 1.0),
                        None => 1.0,
                    };
                    let weight = speed.powi(3 - N as i32) * kernel.eval(cos) * s.powi(N as i32 - 2);
                    line += ws * weight * gv;
                }
                plane += w_eta * line;
            }
            ray += w_rho * fv * rho.powi(N as i32 - 2) * plane;
        }
        total += w_omega * ray;
    }
    Ok(prefactor * total)
}

/// Evaluates a gain-term routine at `quad` and at a coarsened rule, giving
/// `(value, |value − coarse|)`.
pub fn with_error_estimate(
    quad: &QuadratureSpec,
    mut eval: impl FnMut(&QuadratureSpec) -> Result<f64>,
) -> Result<(f64, f64)> {
    let fine = eval(quad)?;
    let coarse = eval(&quad.coarsened(2, 3))?;
    Ok((fine, (fine - coarse).abs()))
}

/// `∫∫∫ f g_* |u| b(û·σ) ψ(v') dσ dv_* dv` over discrete measures.
pub fn weak_moment<const N: usize>(
    f: &[(Vector<N>, f64)],
    g: &[(Vector<N>, f64)],
    psi: &TestFunction,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    angular_order: usize,
) -> f64 {
    let sphere = SphereRule::<N>::new(angular_order);
    let b_vals: Vec<f64> = sphere.points.iter().map(|p| kernel.eval(p[0])).collect();
    let mut total = 0.0;
    for (v, mf) in f {
        let mut row = 0.0;
        for (vs, mg) in g {
            let pair = CollisionPair::new(*v, *vs);
            let u = pair.u();
            let speed = vecn::norm(&u);
            if speed == 0.0 {
                continue;
            }
            let frame = vecn::frame(&vecn::scale(&u, 1.0 / speed));
            let mut avg = 0.0;
            for ((local, ws), b) in sphere.points.iter().zip(&sphere.weights).zip(&b_vals) {
                let sigma = vecn::expand(&frame, local);
                let (vp, _) = post_collisional(&pair, &sigma, law);
                avg += ws * b * psi.eval(&vp);
            }
            row += mg * speed * avg;
        }
        total += mf * row;
    }
    total
}

/// `∫ Q⁻(g, f) ψ dv` over discrete measures.
pub fn loss_moment<const N: usize>(f: &[(Vector<N>, f64)], g: &[(Vector<N>, f64)], psi: &TestFunction) -> f64 {
    f.iter().map(|(v, m)| m * psi.eval(v) * loss_rate_measure(g, v)).sum()
}

/// `∫ Q⁺(g, f) ψ dv` from pointwise strong-form values on a velocity rule.
pub fn gain_moment_strong<const N: usize>(
    g: &impl Density<N>,
    f: &impl Density<N>,
    psi: &TestFunction,
    rule: &VelocityRule<N>,
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let mut total = 0.0;
    for (v, w) in rule.nodes.iter().zip(&rule.weights) {
        let p = psi.eval(v);
        if p == 0.0 {
            continue;
        }
        total += w * p * q_plus_direct(g, f, v, law, kernel, quad)?;
    }
    Ok(total)
}

/// `D(f) = τ ∫∫ f f_* |u|³ dv dv_*` over a discrete measure.
pub fn dissipation<const N: usize>(
    f: &[(Vector<N>, f64)],
    law: &RestitutionLaw,
    kernel: &AngularKernel,
) -> Result<f64> {
    let mb = angular_momentum_mb(kernel, kernel.dim())?;
    let tau = tau_of(mb, law);
    if tau == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (v, m)) in f.iter().enumerate() {
        let mut row = 0.0;
        for (vs, ms) in &f[i + 1..] {
            row += ms * vecn::norm(&vecn::sub(v, vs)).powi(3);
        }
        total += 2.0 * m * row;
    }
    Ok(tau * total)
}

/// `D(f)` for a radially symmetric density given as masses on spheres
/// `(radius, mass)`; the angle between the two velocities is integrated out.
pub fn dissipation_radial<const N: usize>(
    shells: &[(f64, f64)],
    law: &RestitutionLaw,
    kernel: &AngularKernel,
) -> Result<f64> {
    let mb = angular_momentum_mb(kernel, kernel.dim())?;
    let tau = tau_of(mb, law);
    if tau == 0.0 {
        return Ok(0.0);
    }
    let pair_mean = |r: f64, s: f64| -> f64 {
        if N == 3 {
            if r == 0.0 || s == 0.0 {
                return (r + s).powi(3);
            }
            ((r + s).powi(5) - (r - s).abs().powi(5)) / (10.0 * r * s)
        } else {
            let h = |x: f64| (r * r + s * s - 2.0 * r * s * x).max(0.0).powf(1.5);
            zonal_integral(N, 24, h) / sphere_area(N)
        }
    };
    let mut total = 0.0;
    for (i, (r, m)) in shells.iter().enumerate() {
        total += m * m * pair_mean(*r, *r);
        for (s, ms) in &shells[i + 1..] {
            total += 2.0 * m * ms * pair_mean(*r, *s);
        }
    }
    Ok(tau * total)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentResiduals<const N: usize> {
    pub mass_residual: f64,
    #[serde(skip)]
    pub momentum_residual: Vector<N>,
    pub energy_residual: f64,
    pub dissipation: f64,
}

/// Residuals of `∫ Q(f, f) (1, v, |v|²) dv` against mass and momentum
/// conservation and the energy dissipation identity.
pub fn collision_moment_check<const N: usize>(
    f: &[(Vector<N>, f64)],
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    angular_order: usize,
) -> Result<MomentResiduals<N>> {
    let q = |psi: TestFunction| weak_moment(f, f, &psi, law, kernel, angular_order) - loss_moment(f, f, &psi);
    let d = dissipation(f, law, kernel)?;
    let momentum = std::array::from_fn(|i| q(TestFunction::Component(i)));
    Ok(MomentResiduals {
        mass_residual: q(TestFunction::One),
        momentum_residual: momentum,
        energy_residual: q(TestFunction::SpeedSquared) + d,
        dissipation: d,
    })
}

pub const SPREADING_THRESHOLD: f64 = 1e-3;

/// Largest radius along a ray where `Q⁺(1_B, 1_B)` exceeds
/// [`SPREADING_THRESHOLD`] of its value at the origin, `B` the unit ball.
pub fn spreading_support<const N: usize>(
    law: &RestitutionLaw,
    kernel: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let ball = BallIndicator::<N>::unit();
    let eval = |r: f64| -> Result<f64> {
        let mut v = [0.0; N];
        v[0] = r;
        q_plus_carleman(&ball, &ball, &v, law, kernel, quad)
    };
    let origin = eval(0.0)?;
    if !(origin > 0.0) {
        return Err(Error::Domain(format!("Q⁺(1_B, 1_B)(0) = {origin} is not positive")));
    }
    let threshold = SPREADING_THRESHOLD * origin;
    // Post-collisional speeds from the unit ball never exceed 2.
    let step = 0.05;
    let mut last_above = 0.0;
    let mut r = step;
    while r <= 2.0 + 1e-12 {
        if eval(r)? > threshold {
            last_above = r;
        }
        r += step;
    }
    let (mut lo, mut hi) = (last_above, last_above + step);
    for _ in 0..14 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Dimension;
    use crate::vecn::norm;

    fn iso(n: usize) -> AngularKernel {
        AngularKernel::isotropic(Dimension::new(n).unwrap())
    }

    #[test]
    fn ball_chord_matches_membership() {
        let ball = BallIndicator::<3> { center: [0.2, -0.1, 0.3], radius: 0.7, height: 1.0 };
        let x = [1.5, 0.4, -0.2];
        let d = vecn::normalize(&[-1.0, -0.2, 0.35]).unwrap();
        let (t0, t1) = ball.line_support(&x, &d).unwrap();
        for k in 0..200 {
            let t = -1.0 + 4.0 * k as f64 / 199.0;
            let inside = ball.value(&vecn::axpy(&x, t, &d)) > 0.0;
            assert_eq!(inside, t >= t0 && t <= t1, "t = {t}");
        }
    }

    #[test]
    fn grid_interpolation_is_exact_for_multilinear_functions() {
        let f = |v: &Vector<2>| 3.0 + v[0] + 0.5 * v[1] + 0.25 * v[0] * v[1];
        let grid = DensityGrid::<2>::from_fn(2.0, 9, f).unwrap();
        for v in [[0.13, -1.71], [1.999, 0.0], [-0.4, 0.77]] {
            assert!((grid.value(&v) - f(&v)).abs() < 1e-12);
        }
        assert_eq!(grid.value(&[2.5, 0.0]), 0.0);
    }

    #[test]
    fn grid_line_support_covers_nonzero_values() {
        let grid = DensityGrid::<2>::from_fn(1.0, 5, |_| 1.0).unwrap();
        let x = [-3.0, 0.2];
        let d = vecn::normalize(&[1.0, 0.1]).unwrap();
        let (t0, t1) = grid.line_support(&x, &d).unwrap();
        for k in 0..400 {
            let t = 8.0 * k as f64 / 399.0;
            if grid.value(&vecn::axpy(&x, t, &d)) > 0.0 {
                assert!(t >= t0 - 1e-12 && t <= t1 + 1e-12);
            }
        }
    }

    #[test]
    fn grid_moments_of_sampled_gaussian() {
        let g = Gaussian::<2>::new(2.0, [0.5, 0.0], 1.0);
        let grid = DensityGrid::sample(9.0, 121, &g).unwrap();
        // mass 2, momentum 2·0.5, energy 2·(2T + |m|²)
        assert!((grid.mass() - 2.0).abs() < 1e-8);
        assert!((grid.momentum()[0] - 1.0).abs() < 1e-8);
        assert!((grid.energy() - 2.0 * 2.25).abs() < 1e-6);
    }

    #[test]
    fn negative_grid_values_rejected() {
        assert!(DensityGrid::<2>::from_values(1.0, 2, vec![1.0, 0.0, -1.0, 0.0]).is_err());
        assert!(DensityGrid::<2>::from_values(1.0, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn direct_and_carleman_agree_in_two_dimensions() {
        let f = Gaussian::<2>::new(1.0, [0.3, 0.0], 1.0);
        let g = Gaussian::<2>::new(0.8, [-0.2, 0.1], 0.7);
        let quad = QuadratureSpec::uniform(24);
        for e in [0.5, 0.8, 1.0] {
            let law = RestitutionLaw::new(e).unwrap();
            for v in [[0.0, 0.0], [1.2, -0.4], [-2.0, 1.5]] {
                let d = q_plus_direct(&g, &f, &v, &law, &iso(2), &quad).unwrap();
                let c = q_plus_carleman(&g, &f, &v, &law, &iso(2), &quad).unwrap();
                assert!((d - c).abs() <= 1e-4 * d, "e={e} v={v:?}: {d} vs {c}");
            }
        }
    }

    #[test]
    fn elastic_maxwellian_balances_gain_and_loss() {
        let m = Gaussian::<2>::standard();
        let grid = DensityGrid::sample(9.0, 121, &m).unwrap();
        let law = RestitutionLaw::elastic();
        let quad = QuadratureSpec::uniform(24);
        for v in [[0.0, 0.0], [0.9, 0.3], [-1.7, 1.1]] {
            let gain = q_plus_direct(&m, &m, &v, &law, &iso(2), &quad).unwrap();
            let loss = q_minus(&grid, &m, &v);
            assert!((gain - loss).abs() < 1e-4 * loss.max(1e-3), "v={v:?}: {gain} vs {loss}");
        }
    }

    #[test]
    fn gain_term_is_homogeneous() {
        // g(λ·) for a centred Gaussian is again Gaussian with mass λ^{-N} and temperature T/λ².
        let lambda: f64 = 1.7;
        let g = Gaussian::<2>::new(1.0, [0.2, 0.0], 1.0);
        let f = Gaussian::<2>::new(1.0, [-0.1, 0.3], 0.8);
        let dil = |d: &Gaussian<2>| {
            Gaussian::new(d.mass / lambda.powi(2), vecn::scale(&d.mean, 1.0 / lambda), d.temperature / lambda.powi(2))
        };
        let law = RestitutionLaw::new(0.7).unwrap();
        let quad = QuadratureSpec::uniform(24);
        let v = [0.4, -0.25];
        let lhs = q_plus_direct(&dil(&g), &dil(&f), &v, &law, &iso(2), &quad).unwrap();
        let rhs = lambda.powi(-3) * q_plus_direct(&g, &f, &vecn::scale(&v, lambda), &law, &iso(2), &quad).unwrap();
        assert!((lhs - rhs).abs() < 1e-6 * rhs);
    }

    #[test]
    fn elastic_ball_gain_at_origin_is_two_pi() {
        // At v = 0 the constraint |'v|, |'v_*| ≤ 1 reads |u|² ≤ 2/(1+|cos θ|), giving 2π.
        let ball = BallIndicator::<3>::unit();
        let q =
            q_plus_carleman(&ball, &ball, &[0.0; 3], &RestitutionLaw::elastic(), &iso(3), &QuadratureSpec::uniform(12))
                .unwrap();
        assert!((q - 2.0 * std::f64::consts::PI).abs() < 1e-6, "{q}");
    }

    #[test]
    fn sticky_limit_rules() {
        let law = RestitutionLaw::new(0.0).unwrap();
        let quad = QuadratureSpec::uniform(8);
        let g2 = Gaussian::<2>::standard();
        assert!(q_plus_direct(&g2, &g2, &[0.0; 2], &law, &iso(2), &quad).is_err());
        assert!(q_plus_carleman(&g2, &g2, &[0.0; 2], &law, &iso(2), &quad).is_err());
        let g3 = Gaussian::<3>::standard();
        let q = q_plus_carleman(&g3, &g3, &[0.3, 0.0, 0.0], &law, &iso(3), &quad).unwrap();
        assert!(q.is_finite() && q > 0.0);
    }

    #[test]
    fn loss_rate_respects_jensen_bound() {
        let g = DensityGrid::<2>::sample(9.0, 81, &Gaussian::standard()).unwrap();
        for v in [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]] {
            assert!(loss_rate(&g, &v) >= g.mass() * norm(&v) - 1e-8);
        }
    }

    #[test]
    fn two_point_dissipation() {
        // Unit masses at ±e₁, e = 0, m_b = 1/2: τ = 1/8 and D = τ · 2 · 2³ = 2.
        let f = vec![([1.0, 0.0, 0.0], 1.0), ([-1.0, 0.0, 0.0], 1.0)];
        let d = dissipation(&f, &RestitutionLaw::new(0.0).unwrap(), &iso(3)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn radial_dissipation_matches_direct_double_sum() {
        let law = RestitutionLaw::new(0.6).unwrap();
        let rule = VelocityRule::<3>::tensor_gauss(6.0, 14);
        let g = Gaussian::<3>::standard();
        let direct = dissipation(&discretize(&g, &rule), &law, &iso(3)).unwrap();
        let radial = VelocityRule::<3>::radial(7.0, 40);
        let shells: Vec<(f64, f64)> =
            radial.nodes.iter().zip(&radial.weights).map(|(v, w)| (v[0], w * g.value(v))).collect();
        let d3 = dissipation_radial::<3>(&shells, &law, &iso(3)).unwrap();
        assert!((direct - d3).abs() < 1e-3 * d3, "{direct} vs {d3}");
        let rule2 = VelocityRule::<2>::tensor_gauss(6.0, 16);
        let g2 = Gaussian::<2>::standard();
        let direct2 = dissipation(&discretize(&g2, &rule2), &law, &iso(2)).unwrap();
        let radial2 = VelocityRule::<2>::radial(7.0, 40);
        let shells2: Vec<(f64, f64)> =
            radial2.nodes.iter().zip(&radial2.weights).map(|(v, w)| (v[0], w * g2.value(v))).collect();
        let d2 = dissipation_radial::<2>(&shells2, &law, &iso(2)).unwrap();
        assert!((direct2 - d2).abs() < 1e-3 * d2, "{direct2} vs {d2}");
    }

    #[test]
    fn moment_residuals_vanish_on_discrete_measures() {
        let rule = VelocityRule::<2>::tensor_gauss(5.0, 10);
        let f = discretize(&Gaussian::<2>::new(1.0, [0.3, -0.1], 1.0), &rule);
        let r = collision_moment_check(&f, &RestitutionLaw::new(0.8).unwrap(), &iso(2), 8).unwrap();
        assert!(r.mass_residual.abs() < 1e-10);
        assert!(r.momentum_residual.iter().all(|x| x.abs() < 1e-10));
        assert!(r.energy_residual.abs() < 1e-8 * r.dissipation);
    }

    #[test]
    fn quadrature_spec_validation_lists_all_low_orders() {
        let mut q = QuadratureSpec::uniform(3);
        q.velocity_order = 10;
        match q.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
