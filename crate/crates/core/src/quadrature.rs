//! Gauss–Legendre rules, product rules on spheres, and velocity-space rules.

use std::f64::consts::PI;

use crate::vecn::Vector;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// Integrate `h(cos θ) sin^{d-2} θ` over `θ ∈ [0, π]` and multiply by
/// `|S^{d-2}|`: the integral over `S^{d-1}` of a zonal function `h(x·σ)`.
pub fn zonal_integral(d: usize, order: usize, mut h: impl FnMut(f64) -> f64) -> f64 {
    assert!(d >= 2);
    let gl = GaussLegendre::new(order);
    let outer = if d == 2 { 2.0 } else { sphere_area(d - 1) };
    if d == 3 {
        outer * gl.integrate(-1.0, 1.0, h)
    } else {
        let p = (d - 2) as i32;
        outer * gl.integrate(0.0, PI, |t| h(t.cos()) * t.sin().powi(p))
    }
}

/// A product quadrature on `S^{d-1}` in local coordinates: component 0 is the
/// polar coordinate `cos θ` with respect to a reference axis.
#[derive(Debug, Clone)]
pub struct SphereRule<const N: usize> {
    pub points: Vec<Vector<N>>,
    pub weights: Vec<f64>,
}

impl<const N: usize> SphereRule<N> {
    pub fn new(order: usize) -> Self {
        let raw = sphere_points(N, order);
        let mut points = Vec::with_capacity(raw.len());
        let mut weights = Vec::with_capacity(raw.len());
        for (p, w) in raw {
            points.push(std::array::from_fn(|i| p[i]));
            weights.push(w);
        }
        SphereRule { points, weights }
    }

    /// Rule on the cap `{x : x_0 ≥ cos α}` of the sphere, in the same local
    /// coordinates.
    pub fn cap(order: usize, cos_alpha: f64) -> Self {
        let c = cos_alpha.clamp(-1.0, 1.0);
        let alpha = c.acos();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if N == 2 {
            for (phi, w) in GaussLegendre::new(2 * order).on(-alpha, alpha) {
                points.push(std::array::from_fn(|i| if i == 0 { phi.cos() } else { phi.sin() }));
                weights.push(w);
            }
            return SphereRule { points, weights };
        }
        let inner = sphere_points(N - 1, order);
        let gl = GaussLegendre::new(order);
        let polar: Vec<(f64, f64)> = if N == 3 {
            gl.on(c, 1.0).collect()
        } else {
            let p = (N - 2) as i32;
            gl.on(0.0, alpha).map(|(t, w)| (t.cos(), w * t.sin().powi(p))).collect()
        };
        for (x, wx) in polar {
            let s = (1.0 - x * x).max(0.0).sqrt();
            for (q, wq) in &inner {
                points.push(std::array::from_fn(|i| if i == 0 { x } else { s * q[i - 1] }));
                weights.push(wx * wq);
            }
        }
        SphereRule { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Points and weights on `S^{d-1}`. The circle uses `2 * order` equispaced
/// points; higher spheres recurse through the polar angle.
pub fn sphere_points(d: usize, order: usize) -> Vec<(Vec<f64>, f64)> {
    assert!(d >= 1 && order >= 1);
    match d {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let m = 2 * order;
            let h = 2.0 * PI / m as f64;
            (0..m)
                .map(|k| {
                    let phi = (k as f64 + 0.5) * h;
                    (vec![phi.cos(), phi.sin()], h)
                })
                .collect()
        }
        _ => {
            let inner = sphere_points(d - 1, order);
            let gl = GaussLegendre::new(order);
            let mut out = Vec::with_capacity(order * inner.len());
            // Polar measure sin^{d-2} θ dθ, written as d(cos θ) when d = 3.
            let polar: Vec<(f64, f64)> = if d == 3 {
                gl.on(-1.0, 1.0).collect()
            } else {
                let p = (d - 2) as i32;
                gl.on(0.0, PI).map(|(t, w)| (t.cos(), w * t.sin().powi(p))).collect()
            };
            for (x, wx) in polar {
                let s = (1.0 - x * x).max(0.0).sqrt();
                for (eta, we) in &inner {
                    let mut p = Vec::with_capacity(d);
                    p.push(x);
                    p.extend(eta.iter().map(|c| s * c));
                    out.push((p, wx * we));
                }
            }
            out
        }
    }
}

/// Nodes and weights for integrals over `R^N`.
#[derive(Debug, Clone)]
pub struct VelocityRule<const N: usize> {
    pub nodes: Vec<Vector<N>>,
    pub weights: Vec<f64>,
}

impl<const N: usize> VelocityRule<N> {
    /// Tensor-product Gauss–Legendre on `[-half_width, half_width]^N`.
    pub fn tensor_gauss(half_width: f64, order: usize) -> Self {
        let gl = GaussLegendre::new(order);
        let axis: Vec<(f64, f64)> = gl.on(-half_width, half_width).collect();
        let total = order.pow(N as u32);
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut node = [0.0; N];
            let mut w = 1.0;
            for c in node.iter_mut() {
                let (x, wx) = axis[rem % order];
                rem /= order;
                *c = x;
                w *= wx;
            }
            nodes.push(node);
            weights.push(w);
        }
        VelocityRule { nodes, weights }
    }

    /// Nodes along the first axis on `[0, r_max]` with the radial measure
    /// `|S^{N-1}| r^{N-1} dr`. Exact only for radially symmetric integrands.
    pub fn radial(r_max: f64, order: usize) -> Self {
        let gl = GaussLegendre::new(order);
        let area = sphere_area(N);
        let mut nodes = Vec::with_capacity(order);
        let mut weights = Vec::with_capacity(order);
        for (r, w) in gl.on(0.0, r_max) {
            let mut node = [0.0; N];
            node[0] = r;
            nodes.push(node);
            weights.push(w * area * r.powi(N as i32 - 1));
        }
        VelocityRule { nodes, weights }
    }

    /// Nodes `(x, ρ, 0, …)` for integrands symmetric about the first axis,
    /// with `x ∈ [-half_width, half_width]`, `ρ ∈ [0, half_width]` and the
    /// measure `|S^{N-2}| ρ^{N-2} dρ dx`.
    pub fn axisymmetric(half_width: f64, order: usize) -> Self {
        let gl = GaussLegendre::new(order);
        let area = sphere_area(N - 1);
        let mut nodes = Vec::with_capacity(order * order);
        let mut weights = Vec::with_capacity(order * order);
        for (x, wx) in gl.on(-half_width, half_width) {
            for (rho, wr) in gl.on(0.0, half_width) {
                let mut node = [0.0; N];
                node[0] = x;
                node[1] = rho;
                nodes.push(node);
                weights.push(wx * wr * area * rho.powi(N as i32 - 2));
            }
        }
        VelocityRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let gl = GaussLegendre::new(8);
        // Degree 15 is the highest exactly integrated; use x^14.
        let got = gl.integrate(-1.0, 1.0, |x| x.powi(14));
        assert!((got - 2.0 / 15.0).abs() < 1e-14);
        let w: f64 = gl.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_high_order_is_accurate() {
        let gl = GaussLegendre::new(64);
        let got = gl.integrate(0.0, PI, f64::sin);
        assert!((got - 2.0).abs() < 1e-13);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-13);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn sphere_rules_sum_to_area_and_integrate_quadratics() {
        for (d, order) in [(2usize, 8usize), (3, 8), (4, 16)] {
            let pts = sphere_points(d, order);
            let total: f64 = pts.iter().map(|(_, w)| w).sum();
            assert!((total - sphere_area(d)).abs() < 1e-8, "d={d} total={total}");
            // ∫ x_0^2 dσ = |S^{d-1}| / d
            let second: f64 = pts.iter().map(|(p, w)| w * p[0] * p[0]).sum();
            assert!((second - sphere_area(d) / d as f64).abs() < 1e-8, "d={d}");
            for (p, _) in &pts {
                let n: f64 = p.iter().map(|c| c * c).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zonal_integral_matches_area() {
        for d in 2..=5 {
            let got = zonal_integral(d, 64, |_| 1.0);
            assert!((got - sphere_area(d)).abs() < 1e-9, "d={d} got={got}");
        }
    }

    #[test]
    fn tensor_rule_integrates_gaussian() {
        let rule = VelocityRule::<2>::tensor_gauss(8.0, 40);
        let s: f64 =
            rule.nodes.iter().zip(&rule.weights).map(|(v, w)| w * (-0.5 * (v[0] * v[0] + v[1] * v[1])).exp()).sum();
        assert!((s - 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn axisymmetric_rule_integrates_shifted_gaussian() {
        let rule = VelocityRule::<3>::axisymmetric(9.0, 40);
        let f = |v: &[f64; 3]| (-0.5 * ((v[0] - 0.3).powi(2) + v[1] * v[1] + v[2] * v[2])).exp();
        let mass: f64 = rule.nodes.iter().zip(&rule.weights).map(|(v, w)| w * f(v)).sum();
        let mx: f64 = rule.nodes.iter().zip(&rule.weights).map(|(v, w)| w * v[0] * f(v)).sum();
        let z = (2.0 * PI).powf(1.5);
        assert!((mass - z).abs() < 1e-8 * z);
        assert!((mx - 0.3 * z).abs() < 1e-8 * z);
    }
}
