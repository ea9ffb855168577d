//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string; the `*_json` functions hold the logic and run natively as well.

use granular::dsmc::{self, Frame, InitialCondition, SimConfig};
use granular::kernel::{delta_energy, post_collisional, CollisionPair, RestitutionLaw};
use granular::observables::{haff_fit, tail_fit, HaffFit, TailFit};
use granular::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Particle cap for in-browser runs.
pub const MAX_PARTICLES: usize = 50_000;

#[derive(Serialize)]
struct Collision {
    v_post: [f64; 2],
    w_post: [f64; 2],
    energy_before: f64,
    energy_after: f64,
    /// Closed-form loss `(1−e²)/4 |u|² (1 − û·σ)`.
    loss: f64,
    /// Circle traced by `v'` as σ turns: center and radius.
    locus_center: [f64; 2],
    locus_radius: f64,
}

/// Planar collision of `v` and `w` for the impact direction at `angle`
/// (radians from the x axis).
pub fn collision_json(v: [f64; 2], w: [f64; 2], angle: f64, e: f64) -> Result<String> {
    let law = RestitutionLaw::new(e)?;
    let pair = CollisionPair::new(v, w);
    let sigma = [angle.cos(), angle.sin()];
    let (vp, wp) = post_collisional(&pair, &sigma, &law);
    let u = pair.u();
    let speed = u[0].hypot(u[1]);
    let norm2 = |a: &[f64; 2]| a[0] * a[0] + a[1] * a[1];
    let out = Collision {
        v_post: vp,
        w_post: wp,
        energy_before: 0.5 * (norm2(&v) + norm2(&w)),
        energy_after: 0.5 * (norm2(&vp) + norm2(&wp)),
        loss: -0.5 * delta_energy(&pair, &sigma, &law),
        locus_center: std::array::from_fn(|i| 0.5 * (v[i] + w[i]) + 0.25 * (1.0 - e) * u[i]),
        locus_radius: 0.25 * (1.0 + e) * speed,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

fn check_particles(particles: usize) -> Result<()> {
    if !(100..=MAX_PARTICLES).contains(&particles) {
        return Err(Error::Domain(format!("particles must lie in [100, {MAX_PARTICLES}], got {particles}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct Cooling {
    t: Vec<f64>,
    energy: Vec<f64>,
    fit: Option<HaffFit>,
    window: (f64, f64),
}

/// Original-frame cooling of a unit Maxwellian in three dimensions with the
/// energy-decay slope fitted on the last decade of time.
pub fn cooling_json(e: f64, particles: usize, t_final: f64, seed: u64) -> Result<String> {
    check_particles(particles)?;
    if !(t_final > 0.0 && t_final <= 200.0) {
        return Err(Error::Domain(format!("t_final must lie in (0, 200], got {t_final}")));
    }
    let cfg = SimConfig {
        restitution: e,
        particles,
        t_final,
        frame: Frame::Original,
        seed,
        cadence: t_final / 200.0,
        ..SimConfig::default()
    };
    let out = dsmc::run::<3>(&cfg)?;
    let window = (0.1 * t_final, t_final);
    let fit = haff_fit(&out.moments.times, &out.moments.energy, window).ok();
    let res = Cooling { t: out.moments.times, energy: out.moments.energy, fit, window };
    Ok(serde_json::to_string(&res).expect("serializable"))
}

#[derive(Serialize)]
struct Profile {
    r: Vec<f64>,
    density: Vec<f64>,
    thermal_speed: f64,
    tail: Option<TailFit>,
    tail_error: Option<String>,
}

/// Rescaled radial profile at time `tau` from a two-bump start, with the
/// `exp(−a r^s)` tail fit over `s ∈ {1, 2}` on 1.5 to 3.5 thermal speeds.
pub fn profile_json(e: f64, particles: usize, tau: f64, seed: u64) -> Result<String> {
    check_particles(particles)?;
    if !(tau > 0.0 && tau <= 12.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 12], got {tau}")));
    }
    let mut cfg = SimConfig {
        restitution: e,
        particles,
        t_final: tau,
        frame: Frame::Rescaled,
        seed,
        cadence: tau,
        initial: InitialCondition::TwoBump { offset: vec![1.5, 0.0, 0.0], width: 0.5 },
        ..SimConfig::default()
    };
    cfg.histograms.times = vec![tau];
    cfg.histograms.bins = 48;
    let out = dsmc::run::<3>(&cfg)?;
    let hist = out.histograms.last().ok_or_else(|| Error::Domain("run produced no histogram".into()))?;
    let s = hist.thermal_speed();
    let (tail, tail_error) = match tail_fit(hist, Some((1.5 * s, 3.5 * s)), &[1.0, 2.0]) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let res = Profile { r: hist.centers(), density: hist.density.clone(), thermal_speed: s, tail, tail_error };
    Ok(serde_json::to_string(&res).expect("serializable"))
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn collision(vx: f64, vy: f64, wx: f64, wy: f64, angle: f64, e: f64) -> std::result::Result<String, JsError> {
    js(collision_json([vx, vy], [wx, wy], angle, e))
}

#[wasm_bindgen]
pub fn cooling(e: f64, particles: usize, t_final: f64, seed: u32) -> std::result::Result<String, JsError> {
    js(cooling_json(e, particles, t_final, seed.into()))
}

#[wasm_bindgen]
pub fn profile(e: f64, particles: usize, tau: f64, seed: u32) -> std::result::Result<String, JsError> {
    js(profile_json(e, particles, tau, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn collision_conserves_momentum_and_loses_the_closed_form_energy() {
        let s = collision_json([1.0, 0.5], [-0.5, 0.2], 2.0, 0.6).unwrap();
        let v: Value = serde_json::from_str(&s).unwrap();
        let f = |k: &str, i: usize| v[k][i].as_f64().unwrap();
        for i in 0..2 {
            let before = [1.0 + -0.5, 0.5 + 0.2][i];
            assert!((f("v_post", i) + f("w_post", i) - before).abs() < 1e-12);
        }
        let loss = v["energy_before"].as_f64().unwrap() - v["energy_after"].as_f64().unwrap();
        assert!((loss - v["loss"].as_f64().unwrap()).abs() < 1e-12);
        let r = v["locus_radius"].as_f64().unwrap();
        let d = (f("v_post", 0) - f("locus_center", 0)).hypot(f("v_post", 1) - f("locus_center", 1));
        assert!((d - r).abs() < 1e-12);
    }

    #[test]
    fn cooling_and_profile_return_series() {
        let v: Value = serde_json::from_str(&cooling_json(0.8, 2000, 5.0, 3).unwrap()).unwrap();
        let energy = v["energy"].as_array().unwrap();
        assert!(energy.len() > 100);
        assert!(energy.last().unwrap().as_f64().unwrap() < energy[0].as_f64().unwrap());
        let p: Value = serde_json::from_str(&profile_json(0.8, 5000, 2.0, 3).unwrap()).unwrap();
        assert_eq!(p["r"].as_array().unwrap().len(), 48);
        assert!(p["tail"]["selected"]["s"].is_number(), "{p}");
        assert!(profile_json(0.8, 10, 2.0, 3).is_err());
    }
}
