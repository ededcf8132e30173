//! Time evolution of metrics under Ricci flow, storage and interpolation of
//! metric histories, and the coupled potential (conjugate-density)
//! evolution.
//!
//! Torus metrics evolve by the 2-D conformal reduction
//! `∂u/∂t = e^{−2u} Δ_flat u` of `∂g/∂t = −2 Ric`; the sphere radius obeys
//! the closed form `r²(t) = r₀² − 2(n−1)t`; flat space is a fixed point.

pub mod io;
pub mod modified;
pub mod potential;

pub use potential::{evolve_potential, PotentialMode, PotentialTrajectory};

use crate::error::{LabError, Result};
use crate::geometry::{GridShape, ManifoldBackend, TorusBackend};

/// Explicit time integrator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Configuration for `run_history`.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Requested step; `None` selects the stability-bound default.
    pub dt: Option<f64>,
    pub scheme: Scheme,
    /// Fraction of the diffusion stability limit used when `dt` is `None`.
    pub cfl_safety: f64,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { dt: None, scheme: Scheme::Rk4, cfl_safety: 0.2, max_steps: 2_000_000 }
    }
}

/// Diffusion stability limit for the torus flow: `h²·min(e^{2u})/4`.
pub fn cfl_limit(t: &TorusBackend) -> f64 {
    let s = t.shape();
    let h = s.hx.min(s.hy);
    let min_w = t.e2u().into_iter().fold(f64::INFINITY, f64::min);
    h * h * min_w / 4.0
}

/// Right-hand side of the conformal torus Ricci flow.
fn torus_rhs(shape: &GridShape, u: &[f64]) -> Vec<f64> {
    let lap = shape.lap_flat(u);
    lap.iter().zip(u).map(|(l, &ui)| l * (-2.0 * ui).exp()).collect()
}

/// One Ricci-flow step (classical 4-stage scheme).
pub fn step_forward(m: &ManifoldBackend, dt: f64) -> Result<ManifoldBackend> {
    step_with(m, dt, Scheme::Rk4)
}

/// One Ricci-flow step with an explicit scheme choice.
pub fn step_with(m: &ManifoldBackend, dt: f64, scheme: Scheme) -> Result<ManifoldBackend> {
    if dt <= 0.0 {
        return Err(LabError::InvalidParameter("dt must be positive".into()));
    }
    match m {
        ManifoldBackend::Euclidean(_) => Ok(m.clone()),
        ManifoldBackend::Sphere(s) => {
            let r2 = s.radius * s.radius - 2.0 * (s.n as f64 - 1.0) * dt;
            if r2 <= 0.0 {
                let t_ext = s.radius * s.radius / (2.0 * (s.n as f64 - 1.0)).max(f64::MIN_POSITIVE);
                return Err(LabError::Extinction { t: t_ext });
            }
            let mut s = s.clone();
            s.radius = r2.sqrt();
            Ok(ManifoldBackend::Sphere(s))
        }
        ManifoldBackend::ConformalTorus(t) => {
            let limit = cfl_limit(t);
            if dt > limit {
                return Err(LabError::CflViolation { dt, limit });
            }
            let shape = t.shape();
            let u = &t.u;
            let next = match scheme {
                Scheme::Euler => {
                    let k1 = torus_rhs(&shape, u);
                    add_scaled(u, &k1, dt)
                }
                Scheme::Rk4 => {
                    let k1 = torus_rhs(&shape, u);
                    let k2 = torus_rhs(&shape, &add_scaled(u, &k1, 0.5 * dt));
                    let k3 = torus_rhs(&shape, &add_scaled(u, &k2, 0.5 * dt));
                    let k4 = torus_rhs(&shape, &add_scaled(u, &k3, dt));
                    let mut out = u.clone();
                    for i in 0..out.len() {
                        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                    out
                }
            };
            Ok(ManifoldBackend::ConformalTorus(TorusBackend::new(
                shape.nx, shape.ny, t.lx, t.ly, next,
            )?))
        }
    }
}

/// Time-indexed sequence of metric states. Forward histories are indexed by
/// `t`; `backward_view` re-indexes the same data by `τ = t₀ − t`.
#[derive(Debug, Clone)]
pub struct MetricHistory {
    times: Vec<f64>,
    states: Vec<ManifoldBackend>,
    pub dt: f64,
    backward: bool,
}

impl MetricHistory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_backward(&self) -> bool {
        self.backward
    }

    /// Forward time of the first snapshot.
    pub fn t_first(&self) -> f64 {
        self.times[0]
    }

    /// Final forward time `t₀`.
    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Length of the stored interval (also the backward horizon `τ̄`).
    pub fn duration(&self) -> f64 {
        self.t_final() - self.t_first()
    }

    /// Snapshot index -> (index parameter, state). For a backward view the
    /// parameter is `τ`, counted from the final forward time.
    pub fn snapshot(&self, i: usize) -> (f64, &ManifoldBackend) {
        if self.backward {
            let k = self.times.len() - 1 - i;
            (self.t_final() - self.times[k], &self.states[k])
        } else {
            (self.times[i], &self.states[i])
        }
    }

    /// Forward-time snapshot access regardless of orientation.
    pub fn forward_snapshot(&self, i: usize) -> (f64, &ManifoldBackend) {
        (self.times[i], &self.states[i])
    }

    /// Same data re-indexed by `τ = t₀ − t`; an involution.
    pub fn backward_view(&self) -> MetricHistory {
        let mut h = self.clone();
        h.backward = !h.backward;
        h
    }

    fn param_to_forward_time(&self, x: f64) -> f64 {
        if self.backward {
            self.t_final() - x
        } else {
            x
        }
    }

    /// Interpolated state at parameter `x` (`t` forward, `τ` backward).
    ///
    /// Torus conformal factors interpolate nodewise with a cubic
    /// (Catmull-Rom) rule over four snapshots; sphere `r²` interpolates the
    /// same way (the flow is linear in `r²`, so this is exact); flat space
    /// is constant.
    pub fn sample(&self, x: f64) -> Result<ManifoldBackend> {
        let t = self.param_to_forward_time(x);
        let (lo, hi) = (self.t_first(), self.t_final());
        let eps = 1e-9 * (1.0 + hi.abs());
        if t < lo - eps || t > hi + eps {
            return Err(LabError::OutOfRange { t: x, lo: 0.0f64.min(lo), hi });
        }
        let t = t.clamp(lo, hi);
        // Locate the bracketing interval.
        let n = self.times.len();
        let pos = (t - lo) / self.dt;
        let k = (pos.floor() as usize).min(n - 2);
        let frac = (t - self.times[k]) / self.dt;
        if frac.abs() < 1e-12 {
            return Ok(self.states[k].clone());
        }
        if (frac - 1.0).abs() < 1e-12 {
            return Ok(self.states[k + 1].clone());
        }
        let km1 = k.saturating_sub(1);
        let kp2 = (k + 2).min(n - 1);
        let w = cr_weights_clamped(frac, k == 0, k + 2 > n - 1);
        match (&self.states[km1], &self.states[k], &self.states[k + 1], &self.states[kp2]) {
            (
                ManifoldBackend::ConformalTorus(a),
                ManifoldBackend::ConformalTorus(b),
                ManifoldBackend::ConformalTorus(c),
                ManifoldBackend::ConformalTorus(d),
            ) => {
                let mut u = vec![0.0; b.u.len()];
                for i in 0..u.len() {
                    u[i] = w[0] * a.u[i] + w[1] * b.u[i] + w[2] * c.u[i] + w[3] * d.u[i];
                }
                Ok(ManifoldBackend::ConformalTorus(TorusBackend::new(
                    b.shape().nx,
                    b.shape().ny,
                    b.lx,
                    b.ly,
                    u,
                )?))
            }
            (
                ManifoldBackend::Sphere(a),
                ManifoldBackend::Sphere(b),
                ManifoldBackend::Sphere(c),
                ManifoldBackend::Sphere(d),
            ) => {
                let r2 = w[0] * a.radius * a.radius
                    + w[1] * b.radius * b.radius
                    + w[2] * c.radius * c.radius
                    + w[3] * d.radius * d.radius;
                let mut s = b.clone();
                s.radius = r2.max(0.0).sqrt();
                Ok(ManifoldBackend::Sphere(s))
            }
            (ManifoldBackend::Euclidean(b), _, _, _) => Ok(ManifoldBackend::Euclidean(b.clone())),
            _ => Err(LabError::BackendMismatch("inconsistent history states".into())),
        }
    }
}

/// Catmull-Rom weights for the bracket `[p1, p2]`, degrading to quadratic
/// one-sided interpolation at the ends of the history.
pub(crate) fn cr_weights_clamped(t: f64, at_start: bool, at_end: bool) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    if at_start && at_end {
        // Only two points available: linear.
        return [0.0, 1.0 - t, t, 0.0];
    }
    if at_start {
        // Quadratic through p1, p2, p3.
        return [0.0, 1.0 - 1.5 * t + 0.5 * t2, t * (2.0 - t), 0.5 * t2 - 0.5 * t];
    }
    if at_end {
        // Quadratic through p0, p1, p2.
        return [0.5 * t2 - 0.5 * t, 1.0 - t2, 0.5 * t + 0.5 * t2, 0.0];
    }
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Run the Ricci flow to time `T`, storing every accepted step.
pub fn run_history(m0: &ManifoldBackend, t_total: f64, cfg: &FlowConfig) -> Result<MetricHistory> {
    if t_total <= 0.0 {
        return Err(LabError::InvalidParameter("run time must be positive".into()));
    }
    let dt_target = match cfg.dt {
        Some(dt) => dt,
        None => match m0 {
            ManifoldBackend::ConformalTorus(t) => cfg.cfl_safety * cfl_limit(t),
            ManifoldBackend::Sphere(_) => t_total / 512.0,
            ManifoldBackend::Euclidean(_) => t_total / 64.0,
        },
    };
    let steps = (t_total / dt_target).ceil() as usize;
    if steps > cfg.max_steps {
        return Err(LabError::InvalidParameter(format!(
            "{steps} steps exceed max_steps {}",
            cfg.max_steps
        )));
    }
    let dt = t_total / steps as f64;
    let r0_sq = match m0 {
        ManifoldBackend::Sphere(s) => s.radius * s.radius,
        _ => 0.0,
    };
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut cur = m0.clone();
    times.push(0.0);
    states.push(cur.clone());
    for k in 0..steps {
        cur = step_with(&cur, dt, cfg.scheme)?;
        if let ManifoldBackend::Sphere(s) = &cur {
            if s.radius * s.radius <= 1e-6 * r0_sq {
                return Err(LabError::Extinction { t: (k + 1) as f64 * dt });
            }
        }
        times.push((k + 1) as f64 * dt);
        states.push(cur.clone());
    }
    Ok(MetricHistory { times, states, dt, backward: false })
}

fn add_scaled(base: &[f64], delta: &[f64], c: f64) -> Vec<f64> {
    base.iter().zip(delta).map(|(b, d)| b + c * d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{scalar_curvature, EuclideanBackend, SphereBackend};
    use std::f64::consts::PI;

    fn torus64() -> ManifoldBackend {
        let t = TorusBackend::flat(64, 64, 2.0 * PI, 2.0 * PI).unwrap();
        let u = t.shape().from_fn(|x, _| 0.1 * x.sin());
        ManifoldBackend::ConformalTorus(
            TorusBackend::new(64, 64, 2.0 * PI, 2.0 * PI, u).unwrap(),
        )
    }

    #[test]
    fn euclidean_fixed_point() {
        let m = ManifoldBackend::Euclidean(EuclideanBackend::new(2, 8.0, 16).unwrap());
        let h = run_history(&m, 1.0, &FlowConfig::default()).unwrap();
        for i in 0..h.len() {
            let (_, s) = h.snapshot(i);
            assert!(matches!(s, ManifoldBackend::Euclidean(_)));
        }
    }

    #[test]
    fn sphere_closed_form() {
        let m = ManifoldBackend::Sphere(SphereBackend::new(2, 1.0).unwrap());
        let m1 = step_forward(&m, 0.1).unwrap();
        let ManifoldBackend::Sphere(s) = &m1 else { panic!() };
        assert!((s.radius * s.radius - 0.8).abs() < 1e-14);

        let m3 = ManifoldBackend::Sphere(SphereBackend::new(3, 1.0).unwrap());
        let h = run_history(&m3, 0.2, &FlowConfig::default()).unwrap();
        let (_, last) = h.snapshot(h.len() - 1);
        let ManifoldBackend::Sphere(s) = last else { panic!() };
        assert!((s.radius * s.radius - 0.2).abs() < 1e-12);
        assert!((s.scalar_curvature() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn sphere_extinction_detected() {
        let m = ManifoldBackend::Sphere(SphereBackend::new(2, 1.0).unwrap());
        let err = run_history(&m, 0.6, &FlowConfig::default()).unwrap_err();
        assert!(matches!(err, LabError::Extinction { .. }));
    }

    #[test]
    fn torus_amplitude_decays_and_rk4_self_converges() {
        let m = torus64();
        let cfg = FlowConfig::default();
        let h = run_history(&m, 0.05, &cfg).unwrap();
        let sup = |m: &ManifoldBackend| -> f64 {
            let ManifoldBackend::ConformalTorus(t) = m else { panic!() };
            t.u.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
        };
        let mut prev = f64::INFINITY;
        for i in 0..h.len() {
            let (_, s) = h.snapshot(i);
            let v = sup(s);
            assert!(v <= prev + 1e-14);
            prev = v;
        }
        // Step-halving self-convergence at the rk4 order. Coarse grid and a
        // step near the stability bound, so that the time error sits well
        // above the roundoff floor.
        let tc = TorusBackend::flat(16, 16, 2.0 * PI, 2.0 * PI).unwrap();
        let uc = tc.shape().from_fn(|x, y| 0.3 * x.sin() + 0.1 * (x + y).cos());
        let mc = ManifoldBackend::ConformalTorus(
            TorusBackend::new(16, 16, 2.0 * PI, 2.0 * PI, uc).unwrap(),
        );
        let run = |dt: f64| {
            run_history(&mc, 0.12, &FlowConfig { dt: Some(dt), ..FlowConfig::default() })
                .unwrap()
        };
        let (hc, h2, h4) = (run(0.012), run(0.006), run(0.003));
        let (_, a) = hc.snapshot(hc.len() - 1);
        let (_, b) = h2.snapshot(h2.len() - 1);
        let (_, c) = h4.snapshot(h4.len() - 1);
        let (ManifoldBackend::ConformalTorus(a), ManifoldBackend::ConformalTorus(b), ManifoldBackend::ConformalTorus(c)) =
            (a, b, c)
        else {
            panic!()
        };
        let d1: f64 =
            a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let d2: f64 =
            b.u.iter().zip(&c.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d1 / d2 > 12.0, "rk4 self-convergence ratio {}", d1 / d2);
    }

    #[test]
    fn cfl_violation_rejected() {
        let m = torus64();
        let ManifoldBackend::ConformalTorus(t) = &m else { panic!() };
        let bad = 2.0 * cfl_limit(t);
        assert!(matches!(step_forward(&m, bad), Err(LabError::CflViolation { .. })));
    }

    #[test]
    fn volume_evolution_identity() {
        // d/dt Vol = −∫R dV along the flow.
        let m = torus64();
        let h = run_history(&m, 0.02, &FlowConfig::default()).unwrap();
        let vol = |m: &ManifoldBackend| m.expect_torus().unwrap().volume();
        let mid = h.len() / 2;
        let (t1, s1) = h.snapshot(mid - 1);
        let (_, s_mid) = h.snapshot(mid);
        let (t2, s2) = h.snapshot(mid + 1);
        let dv = (vol(s2) - vol(s1)) / (t2 - t1);
        let r = scalar_curvature(s_mid);
        let integral =
            crate::geometry::integrate(s_mid, &r).unwrap();
        assert!((dv + integral).abs() < 1e-8, "dV/dt {dv} vs −∫R {}", -integral);
    }

    #[test]
    fn backward_view_involution_and_sphere_law() {
        let m = ManifoldBackend::Sphere(SphereBackend::new(2, 1.0).unwrap());
        let h = run_history(&m, 0.3, &FlowConfig { dt: Some(0.01), ..Default::default() })
            .unwrap();
        let b = h.backward_view();
        let bb = b.backward_view();
        assert!(!bb.is_backward());
        // r²(τ) = r²(t₀) + 2(n−1)τ
        let r2_final = 1.0 - 2.0 * 0.3;
        for &tau in &[0.0, 0.1, 0.25] {
            let s = b.sample(tau).unwrap();
            let ManifoldBackend::Sphere(s) = s else { panic!() };
            assert!(
                (s.radius * s.radius - (r2_final + 2.0 * tau)).abs() < 1e-12,
                "tau={tau}"
            );
        }
    }

    #[test]
    fn sample_matches_half_step_reference() {
        let m = torus64();
        let cfg = FlowConfig::default();
        let h = run_history(&m, 0.02, &cfg).unwrap();
        let h2 = run_history(&m, 0.02, &FlowConfig { dt: Some(h.dt / 2.0), ..cfg }).unwrap();
        // query halfway between snapshots of h: an exact snapshot of h2
        let t = h.t_first() + 7.5 * h.dt;
        let a = h.sample(t).unwrap();
        let b = h2.sample(t).unwrap();
        let (ManifoldBackend::ConformalTorus(a), ManifoldBackend::ConformalTorus(b)) = (&a, &b)
        else {
            panic!()
        };
        let err: f64 = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "interpolation error {err}");
        // out of range rejected
        assert!(h.sample(-1.0).is_err());
        assert!(h.sample(0.05).is_err());
    }
}
