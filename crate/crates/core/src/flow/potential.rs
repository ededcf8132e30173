//! Potential evolution coupled to a stored metric history.
//!
//! The potential `f` is attached at the final snapshot of a forward flow and
//! integrated in the backward time direction `τ = t₀ − t`, which is the
//! parabolic (well-posed) direction for its evolution equation. For the plain
//! and normalized modes the nonlinear `f`-equation is integrated through the
//! linear density substitution `w = e^{−f}` resp. `v = (4πτ)^{−n/2}e^{−f}`,
//! both of which satisfy `∂w/∂τ = Δ^g w − R w`; the gauge mode integrates
//! `∂f/∂τ = Δ^g f + R` directly.

use crate::error::{LabError, Result};
use crate::geometry::{AnalyticScalar, ManifoldBackend, Pt, ScalarField};

use super::MetricHistory;

/// Which evolution law the potential follows in backward time `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialMode {
    /// `∂f/∂τ = Δf − |∇f|² + R` (energy-functional coupling).
    Plain,
    /// `∂f/∂τ = Δf − |∇f|² + R − n/(2τ)` (entropy-functional coupling).
    Normalized,
    /// `∂f/∂τ = Δf + R` (gauge-transported potential).
    Gauge,
}

/// Potential snapshots aligned with the backward-indexed metric history:
/// entry `i` lives at backward parameter `i·dt`, physical `τ = τ₀ + i·dt`.
#[derive(Debug, Clone)]
pub struct PotentialTrajectory {
    pub mode: PotentialMode,
    /// Physical backward time of the attachment snapshot.
    pub tau0: f64,
    taus: Vec<f64>,
    fields: Vec<ScalarField>,
}

impl PotentialTrajectory {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Physical backward time of snapshot `i`.
    pub fn tau(&self, i: usize) -> f64 {
        self.taus[i]
    }

    pub fn field(&self, i: usize) -> &ScalarField {
        &self.fields[i]
    }
}

/// Evolve a potential attached at the final snapshot of `history` through
/// the whole stored interval. `tau0` is the physical backward time assigned
/// to the attachment snapshot (it enters only the normalized mode).
pub fn evolve_potential(
    history: &MetricHistory,
    f0: &ScalarField,
    mode: PotentialMode,
    tau0: f64,
) -> Result<PotentialTrajectory> {
    if tau0 < 0.0 || (mode == PotentialMode::Normalized && tau0 <= 0.0) {
        return Err(LabError::InvalidParameter(
            "attachment time tau0 must be positive".into(),
        ));
    }
    let h = if history.is_backward() { history.clone() } else { history.backward_view() };
    let (_, attach) = h.snapshot(0);
    match attach {
        ManifoldBackend::ConformalTorus(_) => evolve_torus(&h, f0, mode, tau0),
        ManifoldBackend::Sphere(_) => evolve_sphere(&h, f0, mode, tau0),
        ManifoldBackend::Euclidean(b) => evolve_euclid(&h, f0, mode, tau0, b.n),
    }
}

fn evolve_torus(
    h: &MetricHistory,
    f0: &ScalarField,
    mode: PotentialMode,
    tau0: f64,
) -> Result<PotentialTrajectory> {
    let (_, m0) = h.snapshot(0);
    let t0 = m0.expect_torus()?;
    let shape = t0.shape();
    let n = 2.0;
    let f_init = f0.torus_values(t0)?;
    let log_factor = |tau: f64| -> f64 {
        match mode {
            PotentialMode::Normalized => -(n / 2.0) * (4.0 * std::f64::consts::PI * tau).ln(),
            _ => 0.0,
        }
    };
    // State variable per mode: density w or v (log-transformed from f), or
    // f itself for the gauge law. Both density modes satisfy the same linear
    // equation; the (4πτ)^{−n/2} prefactor only shifts the recovered f.
    let mut state: Vec<f64> = match mode {
        PotentialMode::Gauge => f_init,
        _ => f_init.iter().map(|&f| (-f + log_factor(tau0)).exp()).collect(),
    };
    let recover = |state: &[f64], tau: f64| -> Result<Vec<f64>> {
        match mode {
            PotentialMode::Gauge => Ok(state.to_vec()),
            _ => state
                .iter()
                .map(|&w| {
                    if w <= 0.0 {
                        Err(LabError::NonConvergence(
                            "potential density lost positivity".into(),
                        ))
                    } else {
                        Ok(-w.ln() + log_factor(tau))
                    }
                })
                .collect(),
        }
    };
    // ∂w/∂s = e^{−2u}(Δ_flat w + 2 w Δ_flat u)   (density modes)
    // ∂f/∂s = e^{−2u}(Δ_flat f − 2 Δ_flat u)     (gauge mode)
    let rhs = |state: &[f64], m: &ManifoldBackend| -> Result<Vec<f64>> {
        let t = m.expect_torus()?;
        let lap_s = shape.lap_flat(state);
        let lap_u = shape.lap_flat(&t.u);
        let em2u = t.em2u();
        Ok((0..state.len())
            .map(|i| match mode {
                PotentialMode::Gauge => em2u[i] * (lap_s[i] - 2.0 * lap_u[i]),
                _ => em2u[i] * (lap_s[i] + 2.0 * state[i] * lap_u[i]),
            })
            .collect())
    };

    let dt = h.dt;
    let mut taus = vec![tau0];
    let mut fields = vec![ScalarField::TorusGrid(recover(&state, tau0)?)];
    for k in 0..h.len() - 1 {
        let s = k as f64 * dt;
        let (_, m_a) = h.snapshot(k);
        let m_half = h.sample(s + 0.5 * dt)?;
        let (_, m_b) = h.snapshot(k + 1);
        let k1 = rhs(&state, m_a)?;
        let k2 = rhs(&add(&state, &k1, 0.5 * dt), &m_half)?;
        let k3 = rhs(&add(&state, &k2, 0.5 * dt), &m_half)?;
        let k4 = rhs(&add(&state, &k3, dt), m_b)?;
        for i in 0..state.len() {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let tau = tau0 + (k + 1) as f64 * dt;
        taus.push(tau);
        fields.push(ScalarField::TorusGrid(recover(&state, tau)?));
    }
    Ok(PotentialTrajectory { mode, tau0, taus, fields })
}

fn evolve_sphere(
    h: &MetricHistory,
    f0: &ScalarField,
    mode: PotentialMode,
    tau0: f64,
) -> Result<PotentialTrajectory> {
    let (_, m0) = h.snapshot(0);
    let ManifoldBackend::Sphere(s0) = m0 else { unreachable!() };
    let n = s0.n as f64;
    let c0 = match f0 {
        ScalarField::Const(c) => *c,
        ScalarField::SphereLat(v) => {
            let c = v[0];
            if v.iter().any(|&x| (x - c).abs() > 1e-12) {
                return Err(LabError::InvalidParameter(
                    "sphere potential evolution requires a constant potential".into(),
                ));
            }
            c
        }
        _ => {
            return Err(LabError::BackendMismatch(
                "sphere potential must be constant or a latitude profile".into(),
            ))
        }
    };
    // For constant f the plain and gauge laws coincide: df/dτ = R(τ); the
    // normalized law subtracts n/(2τ). Both are scalar ODEs, integrated with
    // the classical 4-stage scheme against the sampled radius.
    let rhs = |s: f64, tau: f64| -> Result<f64> {
        let m = h.sample(s)?;
        let ManifoldBackend::Sphere(sp) = m else { unreachable!() };
        let mut d = sp.scalar_curvature();
        if mode == PotentialMode::Normalized {
            d -= n / (2.0 * tau);
        }
        Ok(d)
    };
    let dt = h.dt;
    let mut f = c0;
    let mut taus = vec![tau0];
    let mut fields = vec![ScalarField::Const(c0)];
    for k in 0..h.len() - 1 {
        let s = k as f64 * dt;
        let tau = tau0 + s;
        let k1 = rhs(s, tau)?;
        let k2 = rhs(s + 0.5 * dt, tau + 0.5 * dt)?;
        let k3 = k2;
        let k4 = rhs(s + dt, tau + dt)?;
        f += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        taus.push(tau + dt);
        fields.push(ScalarField::Const(f));
    }
    Ok(PotentialTrajectory { mode, tau0, taus, fields })
}

fn evolve_euclid(
    h: &MetricHistory,
    f0: &ScalarField,
    mode: PotentialMode,
    tau0: f64,
    n: usize,
) -> Result<PotentialTrajectory> {
    let analytic = f0.euclid_analytic(n)?;
    let (a0, b0) = probe_radial_quadratic(&analytic, n)?;
    let nf = n as f64;
    // Closed family f = a|x|² + b: the flat-space laws reduce to
    //   plain:       da/dτ = −4a²,  db/dτ = 2na
    //   normalized:  da/dτ = −4a²,  db/dτ = 2na − n/(2τ)
    //   gauge:       da/dτ = 0,     db/dτ = 2na
    let rhs = |a: f64, tau: f64| -> (f64, f64) {
        match mode {
            PotentialMode::Plain => (-4.0 * a * a, 2.0 * nf * a),
            PotentialMode::Normalized => (-4.0 * a * a, 2.0 * nf * a - nf / (2.0 * tau)),
            PotentialMode::Gauge => (0.0, 2.0 * nf * a),
        }
    };
    let dt = h.dt;
    let (mut a, mut b) = (a0, b0);
    let mut taus = vec![tau0];
    let mut fields =
        vec![ScalarField::EuclidAnalytic(AnalyticScalar::radial_quadratic(n, a, [0.0; 3], b))];
    for k in 0..h.len() - 1 {
        let tau = tau0 + k as f64 * dt;
        let (a1, b1) = rhs(a, tau);
        let (a2, b2) = rhs(a + 0.5 * dt * a1, tau + 0.5 * dt);
        let (a3, b3) = rhs(a + 0.5 * dt * a2, tau + 0.5 * dt);
        let (a4, b4) = rhs(a + dt * a3, tau + dt);
        a += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        b += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        if !a.is_finite() || !b.is_finite() {
            return Err(LabError::NonConvergence(
                "radial-quadratic potential coefficients blew up".into(),
            ));
        }
        taus.push(tau + dt);
        fields.push(ScalarField::EuclidAnalytic(AnalyticScalar::radial_quadratic(
            n,
            a,
            [0.0; 3],
            b,
        )));
    }
    Ok(PotentialTrajectory { mode, tau0, taus, fields })
}

/// Extract `(a, b)` from an origin-centered `a|x|² + b` potential, rejecting
/// anything outside that family (the flat backend evolves exactly within it).
fn probe_radial_quadratic(f: &AnalyticScalar, n: usize) -> Result<(f64, f64)> {
    let b = f.value(&[0.0; 3]);
    let mut e1: Pt = [0.0; 3];
    e1[0] = 1.0;
    let a = f.value(&e1) - b;
    let scale = 1.0 + a.abs() + b.abs();
    let mut probes: Vec<Pt> = vec![[2.0, 0.0, 0.0], [-1.3, 0.0, 0.0]];
    if n >= 2 {
        probes.push([0.7, -0.4, 0.0]);
        probes.push([1.0, 1.0, 0.0]);
    }
    if n >= 3 {
        probes.push([0.5, -0.2, 0.9]);
    }
    for p in probes {
        let r2: f64 = p.iter().take(n).map(|x| x * x).sum();
        if (f.value(&p) - (a * r2 + b)).abs() > 1e-8 * scale {
            return Err(LabError::InvalidParameter(
                "flat-space potential evolution requires an origin-centered \
                 radial-quadratic potential"
                    .into(),
            ));
        }
    }
    Ok((a, b))
}

fn add(base: &[f64], delta: &[f64], c: f64) -> Vec<f64> {
    base.iter().zip(delta).map(|(b, d)| b + c * d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusBackend;
    use crate::flow::{run_history, FlowConfig};
    use crate::geometry::{integrate, EuclideanBackend, SphereBackend};
    use std::f64::consts::PI;

    fn flat_history(n: usize, t: f64) -> MetricHistory {
        let m = ManifoldBackend::Euclidean(EuclideanBackend::gaussian_box(n, 1.5).unwrap());
        run_history(&m, t, &FlowConfig { dt: Some(t / 256.0), ..Default::default() }).unwrap()
    }

    #[test]
    fn flat_space_gaussian_family_plain() {
        // f = |x|²/(4τ) + (n/2)ln(4πτ) solves the plain law exactly.
        let n = 2;
        let tau0 = 0.5;
        let h = flat_history(n, 0.7);
        let f0 = ScalarField::EuclidAnalytic(AnalyticScalar::gaussian_potential(n, tau0));
        let traj = evolve_potential(&h, &f0, PotentialMode::Plain, tau0).unwrap();
        let last = traj.len() - 1;
        let tau = traj.tau(last);
        assert!((tau - (tau0 + 0.7)).abs() < 1e-12);
        let got = traj.field(last).euclid_analytic(n).unwrap();
        let want = AnalyticScalar::gaussian_potential(n, tau);
        for p in [[0.0, 0.0, 0.0], [1.0, -0.5, 0.0], [2.0, 1.0, 0.0]] {
            assert!(
                (got.value(&p) - want.value(&p)).abs() < 1e-8,
                "deviation {} at {p:?}",
                got.value(&p) - want.value(&p)
            );
        }
    }

    #[test]
    fn flat_space_normalized_keeps_offset_constant() {
        // With the same initial data the normalized law cancels the
        // (n/2)ln(4πτ) drift: a(τ) = 1/(4τ), b stays put.
        let n = 3;
        let tau0 = 0.4;
        let h = flat_history(n, 0.5);
        let f0 = ScalarField::EuclidAnalytic(AnalyticScalar::gaussian_potential(n, tau0));
        let traj = evolve_potential(&h, &f0, PotentialMode::Normalized, tau0).unwrap();
        let last = traj.len() - 1;
        let tau = traj.tau(last);
        let got = traj.field(last).euclid_analytic(n).unwrap();
        let b0 = AnalyticScalar::gaussian_potential(n, tau0).value(&[0.0; 3]);
        assert!((got.value(&[0.0; 3]) - b0).abs() < 1e-8);
        let a = got.value(&[1.0, 0.0, 0.0]) - got.value(&[0.0; 3]);
        assert!((a - 1.0 / (4.0 * tau)).abs() < 1e-8);
    }

    #[test]
    fn non_quadratic_potential_rejected() {
        let h = flat_history(2, 0.2);
        let f0 = ScalarField::EuclidAnalytic(AnalyticScalar::from_fn(2, |x| x[0].sin()));
        assert!(evolve_potential(&h, &f0, PotentialMode::Plain, 0.3).is_err());
    }

    #[test]
    fn sphere_constant_potential_closed_form() {
        // df/dτ = R gives f(τ) = f₀ + (n/2) ln(r²(τ)/r²(0 backward)).
        let m = ManifoldBackend::Sphere(SphereBackend::new(2, 1.0).unwrap());
        let h = run_history(&m, 0.2, &FlowConfig { dt: Some(0.001), ..Default::default() })
            .unwrap();
        let traj =
            evolve_potential(&h, &ScalarField::Const(0.3), PotentialMode::Plain, 0.25).unwrap();
        let r2_final = 1.0 - 2.0 * 0.2;
        let last = traj.len() - 1;
        let s = traj.tau(last) - 0.25;
        let want = 0.3 + 1.0 * ((r2_final + 2.0 * s) / r2_final).ln();
        let ScalarField::Const(got) = traj.field(last) else { panic!() };
        assert!((got - want).abs() < 1e-10, "got {got} want {want}");
    }

    #[test]
    fn torus_density_mass_is_conserved() {
        // ∫ e^{−f} dV(g(τ)) is an exact invariant of the density law; the
        // symmetric stencils make the discrete drift pure time error.
        let t = TorusBackend::flat(32, 32, 2.0 * PI, 2.0 * PI).unwrap();
        let u = t.shape().from_fn(|x, y| 0.08 * x.sin() + 0.05 * (y + x).cos());
        let m = ManifoldBackend::ConformalTorus(
            TorusBackend::new(32, 32, 2.0 * PI, 2.0 * PI, u).unwrap(),
        );
        let h = run_history(&m, 0.05, &FlowConfig::default()).unwrap();
        let f0 = ScalarField::TorusGrid(
            t.shape().from_fn(|x, y| 0.2 * (x - 0.3).cos() + 0.1 * y.sin()),
        );
        let traj = evolve_potential(&h, &f0, PotentialMode::Plain, 0.1).unwrap();
        let mass = |i: usize| -> f64 {
            let hb = h.backward_view();
            let (_, m) = hb.snapshot(i);
            let f = traj.field(i).torus_values(m.expect_torus().unwrap()).unwrap();
            let w = ScalarField::TorusGrid(f.iter().map(|&x| (-x).exp()).collect());
            integrate(m, &w).unwrap()
        };
        let m0 = mass(0);
        let m_end = mass(traj.len() - 1);
        assert!(
            (m_end - m0).abs() < 1e-10 * m0,
            "mass drift {} of {m0}",
            m_end - m0
        );
    }

    #[test]
    fn torus_recovered_potential_satisfies_its_equation() {
        // Centered time differencing of f against Δf − |∇f|² + R at an
        // interior snapshot: a direct residual check of the nonlinear law.
        let t = TorusBackend::flat(64, 64, 2.0 * PI, 2.0 * PI).unwrap();
        let u = t.shape().from_fn(|x, _| 0.08 * x.sin());
        let m = ManifoldBackend::ConformalTorus(
            TorusBackend::new(64, 64, 2.0 * PI, 2.0 * PI, u).unwrap(),
        );
        let h = run_history(&m, 0.01, &FlowConfig::default()).unwrap();
        let f0 = ScalarField::TorusGrid(t.shape().from_fn(|x, y| 0.3 * x.cos() + 0.2 * y.sin()));
        let traj = evolve_potential(&h, &f0, PotentialMode::Plain, 0.2).unwrap();
        let hb = h.backward_view();
        let mid = traj.len() / 2;
        let (_, m_mid) = hb.snapshot(mid);
        let tor = m_mid.expect_torus().unwrap();
        let f_m = traj.field(mid - 1).torus_values(tor).unwrap();
        let f_p = traj.field(mid + 1).torus_values(tor).unwrap();
        let dt = traj.tau(mid + 1) - traj.tau(mid);
        let f_mid = traj.field(mid).clone();
        let lap = crate::geometry::laplace_beltrami(m_mid, &f_mid).unwrap();
        let gn = crate::geometry::grad_norm_sq(m_mid, &f_mid).unwrap();
        let r = crate::geometry::scalar_curvature(m_mid);
        let (
            ScalarField::TorusGrid(lap),
            ScalarField::TorusGrid(gn),
            ScalarField::TorusGrid(r),
        ) = (lap, gn, r)
        else {
            panic!()
        };
        let mut worst: f64 = 0.0;
        for i in 0..lap.len() {
            let dfdtau = (f_p[i] - f_m[i]) / (2.0 * dt);
            worst = worst.max((dfdtau - (lap[i] - gn[i] + r[i])).abs());
        }
        assert!(worst < 2e-5, "potential equation residual {worst}");
    }

    #[test]
    fn torus_gauge_mode_self_converges() {
        let t = TorusBackend::flat(32, 32, 2.0 * PI, 2.0 * PI).unwrap();
        let u = t.shape().from_fn(|x, y| 0.1 * (x + y).sin());
        let m = ManifoldBackend::ConformalTorus(
            TorusBackend::new(32, 32, 2.0 * PI, 2.0 * PI, u).unwrap(),
        );
        let cfg = FlowConfig::default();
        let h1 = run_history(&m, 0.02, &cfg).unwrap();
        let h2 =
            run_history(&m, 0.02, &FlowConfig { dt: Some(h1.dt / 2.0), ..cfg.clone() }).unwrap();
        let h4 =
            run_history(&m, 0.02, &FlowConfig { dt: Some(h1.dt / 4.0), ..cfg }).unwrap();
        let f0 = ScalarField::TorusGrid(t.shape().from_fn(|x, _| 0.4 * x.cos()));
        let end = |h: &MetricHistory| -> Vec<f64> {
            let traj = evolve_potential(h, &f0, PotentialMode::Gauge, 0.1).unwrap();
            let hb = h.backward_view();
            let (_, m_end) = hb.snapshot(h.len() - 1);
            traj.field(traj.len() - 1).torus_values(m_end.expect_torus().unwrap()).unwrap()
        };
        let (a, b, c) = (end(&h1), end(&h2), end(&h4));
        let d1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let d2: f64 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d1 / d2 > 10.0, "time-order ratio {}", d1 / d2);
    }
}
