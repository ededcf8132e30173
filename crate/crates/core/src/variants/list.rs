//! Ricci flow coupled to a scalar (dilaton-type) field on the torus:
//!
//! ```text
//! ∂g/∂t = −2S_ij,   S_ij = R_ij − 2∂_iφ∂_jφ,
//! ∂φ/∂t = Δ^g φ,
//! ```
//!
//! with `S = tr_g S_ij = R − 2|∇φ|²` replacing the scalar curvature in the
//! entropy, its infimum, and the production formula.
//!
//! The metric slot is evolved through its conformal projection: `−2S_ij`
//! splits into a pure-trace part (which drives the conformal factor) and a
//! trace-free defect `−4(∂φ∂φ − ½|∇φ|²g)` that a conformal representation
//! cannot absorb. The defect is measured every step and the accumulated
//! drift `∫‖defect‖_{L²(dV)} dt` must stay below a configured fraction of
//! `‖g‖_{L²(dV)}`; the instantaneous defect/trace ratio is reported per
//! snapshot.

#![allow(non_snake_case)]

use crate::error::{LabError, Result};
use crate::flow::{cfl_limit, cr_weights_clamped};
use crate::functionals::mu::{minimize_entropy, MuResult};
use crate::geometry::{
    grad_norm_sq, hessian, integrate, laplace_beltrami, ManifoldBackend, ScalarField,
    TorusBackend,
};

use super::{add_scaled, check_grid, check_mass};

/// Default accumulated-defect budget for [`step_list`], as a fraction of the
/// metric's own `L²(dV)` norm.
pub const DEFECT_TOLERANCE: f64 = 1e-3;

/// A metric-scalar pair on the torus.
#[derive(Debug, Clone)]
pub struct ListState {
    pub metric: TorusBackend,
    /// Nodal values of the coupled scalar field.
    pub scalar: Vec<f64>,
}

impl ListState {
    pub fn new(metric: TorusBackend, scalar: Vec<f64>) -> Result<Self> {
        check_grid(&metric, &scalar, "coupled scalar")?;
        Ok(Self { metric, scalar })
    }

    pub fn backend(&self) -> ManifoldBackend {
        ManifoldBackend::ConformalTorus(self.metric.clone())
    }

    /// Extended scalar curvature `S = R − 2|∇φ|²`.
    pub fn extended_scalar(&self) -> Vec<f64> {
        let r = self.metric.scalar_curvature_grid();
        let em2u = self.metric.em2u();
        let s = self.metric.shape();
        let (px, py) = (s.dx(&self.scalar), s.dy(&self.scalar));
        (0..r.len())
            .map(|i| r[i] - 2.0 * em2u[i] * (px[i] * px[i] + py[i] * py[i]))
            .collect()
    }

    /// Coordinate components of `S_ij = R_ij − 2∂_iφ∂_jφ`
    /// (`R_ij = (R/2)g_ij` in two dimensions).
    pub fn extended_tensor(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let r = self.metric.scalar_curvature_grid();
        let e2u = self.metric.e2u();
        let s = self.metric.shape();
        let (px, py) = (s.dx(&self.scalar), s.dy(&self.scalar));
        let len = r.len();
        let mut xx = Vec::with_capacity(len);
        let mut xy = Vec::with_capacity(len);
        let mut yy = Vec::with_capacity(len);
        for i in 0..len {
            let ric = 0.5 * r[i] * e2u[i];
            xx.push(ric - 2.0 * px[i] * px[i]);
            xy.push(-2.0 * px[i] * py[i]);
            yy.push(ric - 2.0 * py[i] * py[i]);
        }
        (xx, xy, yy)
    }

    /// Largest nodal deviation between `S` and `tr_g S_ij` (a consistency
    /// invariant of the two assemblies; roundoff-sized by construction).
    pub fn trace_deviation(&self) -> f64 {
        let s = self.extended_scalar();
        let (xx, _, yy) = self.extended_tensor();
        let em2u = self.metric.em2u();
        (0..s.len())
            .map(|i| (s[i] - em2u[i] * (xx[i] + yy[i])).abs())
            .fold(0.0f64, f64::max)
    }

    /// `L²(dV)` norms of the trace-free and pure-trace parts of the metric
    /// rate `ġ = −2S_ij`.
    fn defect_norms(&self) -> (f64, f64) {
        let (sxx, sxy, syy) = self.extended_tensor();
        let e2u = self.metric.e2u();
        let em2u = self.metric.em2u();
        let shape = self.metric.shape();
        let cell = shape.hx * shape.hy;
        let mut tf = 0.0;
        let mut tr = 0.0;
        for i in 0..sxx.len() {
            let (gxx, gxy, gyy) = (-2.0 * sxx[i], -2.0 * sxy[i], -2.0 * syy[i]);
            let trace = em2u[i] * (gxx + gyy);
            let txx = gxx - 0.5 * trace * e2u[i];
            let tyy = gyy - 0.5 * trace * e2u[i];
            let w = em2u[i] * em2u[i];
            tf += w * (txx * txx + 2.0 * gxy * gxy + tyy * tyy) * e2u[i];
            tr += 0.5 * trace * trace * e2u[i];
        }
        ((tf * cell).sqrt(), (tr * cell).sqrt())
    }

    /// Instantaneous `‖trace-free ġ‖ / ‖pure-trace ġ‖` in `L²(dV)`.
    pub fn defect_ratio(&self) -> f64 {
        let (tf, tr) = self.defect_norms();
        if tr > 0.0 {
            tf / tr
        } else {
            0.0
        }
    }

    /// `‖g‖_{L²(dV)} = sqrt(2·Vol)` (the reference scale for the defect
    /// budget; `|g|²_g = n = 2` pointwise).
    fn metric_norm(&self) -> f64 {
        (2.0 * self.metric.volume()).sqrt()
    }
}

/// Configuration for [`run_list`].
#[derive(Debug, Clone)]
pub struct ListConfig {
    /// Requested step; `None` selects the stability-bound default.
    pub dt: Option<f64>,
    /// Fraction of the diffusion stability limit used when `dt` is `None`.
    pub cfl_safety: f64,
    pub max_steps: usize,
    /// Accumulated trace-free drift budget, as a fraction of `‖g‖_{L²(dV)}`.
    pub defect_tolerance: f64,
}

impl Default for ListConfig {
    fn default() -> Self {
        Self {
            dt: None,
            cfl_safety: 0.2,
            max_steps: 2_000_000,
            defect_tolerance: DEFECT_TOLERANCE,
        }
    }
}

/// Coupled right-hand side in conformal variables:
/// `∂u/∂t = e^{−2u}(Δ_flat u + |∇φ|²_flat)`, `∂φ/∂t = e^{−2u}Δ_flat φ`.
fn list_rhs(
    shape: &crate::geometry::GridShape,
    u: &[f64],
    phi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let lap_u = shape.lap_flat(u);
    let lap_p = shape.lap_flat(phi);
    let (px, py) = (shape.dx(phi), shape.dy(phi));
    let mut du = Vec::with_capacity(u.len());
    let mut dp = Vec::with_capacity(u.len());
    for i in 0..u.len() {
        let em2u = (-2.0 * u[i]).exp();
        du.push(em2u * (lap_u[i] + (px[i] * px[i] + py[i] * py[i])));
        dp.push(em2u * lap_p[i]);
    }
    (du, dp)
}

/// One classical 4-stage step of the coupled system (stability check only;
/// the defect policy lives in the callers).
fn advance(st: &ListState, dt: f64) -> Result<ListState> {
    if dt <= 0.0 {
        return Err(LabError::InvalidParameter("dt must be positive".into()));
    }
    let limit = cfl_limit(&st.metric);
    if dt > limit {
        return Err(LabError::CflViolation { dt, limit });
    }
    let shape = st.metric.shape();
    let (u, p) = (&st.metric.u, &st.scalar);
    let (k1u, k1p) = list_rhs(&shape, u, p);
    let (k2u, k2p) =
        list_rhs(&shape, &add_scaled(u, &k1u, 0.5 * dt), &add_scaled(p, &k1p, 0.5 * dt));
    let (k3u, k3p) =
        list_rhs(&shape, &add_scaled(u, &k2u, 0.5 * dt), &add_scaled(p, &k2p, 0.5 * dt));
    let (k4u, k4p) = list_rhs(&shape, &add_scaled(u, &k3u, dt), &add_scaled(p, &k3p, dt));
    let mut un = u.clone();
    let mut pn = p.clone();
    for i in 0..un.len() {
        un[i] += dt / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
        pn[i] += dt / 6.0 * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i]);
    }
    Ok(ListState {
        metric: TorusBackend::new(shape.nx, shape.ny, st.metric.lx, st.metric.ly, un)?,
        scalar: pn,
    })
}

/// One step of the coupled flow. The single-step trace-free drift
/// `dt·‖defect‖` must stay below [`DEFECT_TOLERANCE`]`·‖g‖`.
pub fn step_list(st: &ListState, dt: f64) -> Result<ListState> {
    if dt <= 0.0 {
        return Err(LabError::InvalidParameter("dt must be positive".into()));
    }
    let (tf, _) = st.defect_norms();
    let threshold = DEFECT_TOLERANCE * st.metric_norm();
    if dt * tf > threshold {
        return Err(LabError::DefectThreshold { defect: dt * tf, threshold });
    }
    advance(st, dt)
}

/// Time-indexed trajectory of the coupled flow with its defect diagnostics.
#[derive(Debug, Clone)]
pub struct ListHistory {
    times: Vec<f64>,
    states: Vec<ListState>,
    pub dt: f64,
    /// Instantaneous trace-free/trace defect ratio per snapshot.
    pub defect_ratios: Vec<f64>,
    /// Accumulated `∫‖trace-free ġ‖_{L²(dV)} dt` over the run.
    pub defect_budget: f64,
}

impl ListHistory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_first(&self) -> f64 {
        self.times[0]
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn snapshot(&self, i: usize) -> (f64, &ListState) {
        (self.times[i], &self.states[i])
    }

    /// Interpolated state at forward time `t` (nodewise Catmull-Rom on both
    /// the conformal factor and the scalar, as in the plain history).
    pub fn sample(&self, t: f64) -> Result<ListState> {
        let (lo, hi) = (self.t_first(), self.t_final());
        let eps = 1e-9 * (1.0 + hi.abs());
        if t < lo - eps || t > hi + eps {
            return Err(LabError::OutOfRange { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
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
        let pick = [&self.states[km1], &self.states[k], &self.states[k + 1], &self.states[kp2]];
        let blend = |get: &dyn Fn(&ListState) -> &Vec<f64>| -> Vec<f64> {
            let fields: Vec<&Vec<f64>> = pick.iter().map(|s| get(s)).collect();
            (0..fields[1].len())
                .map(|i| {
                    w[0] * fields[0][i]
                        + w[1] * fields[1][i]
                        + w[2] * fields[2][i]
                        + w[3] * fields[3][i]
                })
                .collect()
        };
        let u = blend(&|s: &ListState| &s.metric.u);
        let phi = blend(&|s: &ListState| &s.scalar);
        let shape = self.states[k].metric.shape();
        ListState::new(
            TorusBackend::new(
                shape.nx,
                shape.ny,
                self.states[k].metric.lx,
                self.states[k].metric.ly,
                u,
            )?,
            phi,
        )
    }
}

/// Run the coupled flow to time `T`, storing every step and enforcing the
/// accumulated defect budget.
pub fn run_list(st0: &ListState, t_total: f64, cfg: &ListConfig) -> Result<ListHistory> {
    if t_total <= 0.0 {
        return Err(LabError::InvalidParameter("run time must be positive".into()));
    }
    let dt_target = match cfg.dt {
        Some(dt) => dt,
        None => cfg.cfl_safety * cfl_limit(&st0.metric),
    };
    let steps = (t_total / dt_target).ceil() as usize;
    if steps > cfg.max_steps {
        return Err(LabError::InvalidParameter(format!(
            "{steps} steps exceed max_steps {}",
            cfg.max_steps
        )));
    }
    let dt = t_total / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut ratios = Vec::with_capacity(steps + 1);
    let mut budget = 0.0;
    let mut cur = st0.clone();
    times.push(0.0);
    ratios.push(cur.defect_ratio());
    states.push(cur.clone());
    for k in 0..steps {
        let (tf, _) = cur.defect_norms();
        budget += dt * tf;
        let threshold = cfg.defect_tolerance * cur.metric_norm();
        if budget > threshold {
            return Err(LabError::DefectThreshold { defect: budget, threshold });
        }
        cur = advance(&cur, dt)?;
        times.push((k + 1) as f64 * dt);
        ratios.push(cur.defect_ratio());
        states.push(cur.clone());
    }
    Ok(ListHistory { times, states, dt, defect_ratios: ratios, defect_budget: budget })
}

/// Entropy of a configuration:
/// `𝒲 = ∫ [τ(|∇f|² + S) + f − n] (4πτ)^{−n/2} e^{−f} dV`.
pub fn eval_W_list(st: &ListState, f: &[f64], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("entropy scale tau must be positive".into()));
    }
    check_grid(&st.metric, f, "potential")?;
    check_mass(&st.metric, f, tau)?;
    let n = 2.0;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let m = st.backend();
    let sv = st.extended_scalar();
    let gv = grad_norm_sq(&m, &ScalarField::TorusGrid(f.to_vec()))?.torus_values(&st.metric)?;
    let vals: Vec<f64> = (0..f.len())
        .map(|i| (tau * (gv[i] + sv[i]) + f[i] - n) * pref * (-f[i]).exp())
        .collect();
    integrate(&m, &ScalarField::TorusGrid(vals))
}

/// Time-derivative of the entropy along the coupled system:
/// `∫ [2τ|S_ij + ∇²f − g/2τ|² + 4τ(Δ^gφ − ⟨∇φ,∇f⟩)²] (4πτ)^{−n/2} e^{−f} dV`.
pub fn production_W_list(st: &ListState, f: &[f64], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("entropy scale tau must be positive".into()));
    }
    check_grid(&st.metric, f, "potential")?;
    let n = 2.0;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let m = st.backend();
    let ff = ScalarField::TorusGrid(f.to_vec());
    let (sxx, sxy, syy) = st.extended_tensor();
    let (hxx, hxy, hyy) = hessian(&m, &ff)?.torus_components(&st.metric)?;
    let e2u = st.metric.e2u();
    let em2u = st.metric.em2u();
    let shape = st.metric.shape();
    let lap_phi = laplace_beltrami(&m, &ScalarField::TorusGrid(st.scalar.clone()))?
        .torus_values(&st.metric)?;
    let (px, py) = (shape.dx(&st.scalar), shape.dy(&st.scalar));
    let (fx, fy) = (shape.dx(f), shape.dy(f));
    let vals: Vec<f64> = (0..f.len())
        .map(|i| {
            let shift = e2u[i] / (2.0 * tau);
            let axx = sxx[i] + hxx[i];
            let axy = sxy[i] + hxy[i];
            let ayy = syy[i] + hyy[i];
            let w = em2u[i] * em2u[i];
            let bxx = axx - shift;
            let byy = ayy - shift;
            let b_sq = w * (bxx * bxx + 2.0 * axy * axy + byy * byy);
            let cross = em2u[i] * (px[i] * fx[i] + py[i] * fy[i]);
            let d = lap_phi[i] - cross;
            (2.0 * tau * b_sq + 4.0 * tau * d * d) * pref * (-f[i]).exp()
        })
        .collect();
    integrate(&m, &ScalarField::TorusGrid(vals))
}

/// Entropy infimum over compatible potentials, with `S` as the zeroth-order
/// potential term of the descent.
pub fn mu_list(st: &ListState, tau: f64) -> Result<MuResult> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("tau must be positive".into()));
    }
    let sv = st.extended_scalar();
    let min = minimize_entropy(&st.metric, &sv, tau);
    let n = 2.0;
    let log_pref = n / 2.0 * (4.0 * std::f64::consts::PI * tau).ln();
    let f0: Vec<f64> =
        min.u.iter().map(|&v| -2.0 * v.max(1e-300).ln() - log_pref).collect();
    let value = eval_W_list(st, &f0, tau)?;
    Ok(MuResult {
        value,
        minimizer: ScalarField::TorusGrid(min.u),
        potential: ScalarField::TorusGrid(f0),
        iterations: min.iterations,
        grad_norm: min.grad_norm,
        converged: min.converged,
    })
}

/// One potential snapshot of the backward density evolution, aligned with a
/// forward history snapshot.
#[derive(Debug, Clone)]
pub struct ListPotentialSample {
    /// Forward time of the matching history snapshot.
    pub t: f64,
    /// Backward scale `τ = τ_end + (t_final − t)`.
    pub tau: f64,
    pub f: Vec<f64>,
}

/// Attach `f_end` at the final snapshot and integrate the conjugate density
/// `v = (4πτ)^{−n/2}e^{−f}` backward through the history by
/// `∂v/∂τ = Δ^g v − S v`; returns one recovered potential per snapshot in
/// forward order.
pub fn evolve_list_potential(
    hist: &ListHistory,
    f_end: &[f64],
    tau_end: f64,
) -> Result<Vec<ListPotentialSample>> {
    if hist.len() < 2 {
        return Err(LabError::InvalidParameter(
            "potential evolution needs at least two snapshots".into(),
        ));
    }
    if tau_end <= 0.0 {
        return Err(LabError::InvalidParameter("attachment scale tau_end must be positive".into()));
    }
    let n_snap = hist.len();
    let (t_end, last) = hist.snapshot(n_snap - 1);
    check_grid(&last.metric, f_end, "potential")?;
    let log_pref = |tau: f64| -> f64 { -(4.0 * std::f64::consts::PI * tau).ln() };
    let mut state: Vec<f64> =
        f_end.iter().map(|&f| (-f + log_pref(tau_end)).exp()).collect();
    let recover = |state: &[f64], tau: f64| -> Result<Vec<f64>> {
        state
            .iter()
            .map(|&v| {
                if v <= 0.0 {
                    Err(LabError::NonConvergence(
                        "potential density lost positivity".into(),
                    ))
                } else {
                    Ok(-v.ln() + log_pref(tau))
                }
            })
            .collect()
    };
    let rhs = |state: &[f64], at: &ListState| -> Vec<f64> {
        let lap = at.metric.shape().lap_flat(state);
        let em2u = at.metric.em2u();
        let sv = at.extended_scalar();
        (0..state.len()).map(|i| em2u[i] * lap[i] - sv[i] * state[i]).collect()
    };
    let dt = hist.dt;
    let mut out = vec![ListPotentialSample {
        t: t_end,
        tau: tau_end,
        f: recover(&state, tau_end)?,
    }];
    for k in 0..n_snap - 1 {
        let (_, st_a) = hist.snapshot(n_snap - 1 - k);
        let mid = hist.sample(t_end - (k as f64 + 0.5) * dt)?;
        let (t_b, st_b) = hist.snapshot(n_snap - 2 - k);
        let k1 = rhs(&state, st_a);
        let k2 = rhs(&add_scaled(&state, &k1, 0.5 * dt), &mid);
        let k3 = rhs(&add_scaled(&state, &k2, 0.5 * dt), &mid);
        let k4 = rhs(&add_scaled(&state, &k3, dt), st_b);
        for i in 0..state.len() {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let tau = tau_end + (k + 1) as f64 * dt;
        out.push(ListPotentialSample { t: t_b, tau, f: recover(&state, tau)? });
    }
    out.reverse();
    Ok(out)
}
