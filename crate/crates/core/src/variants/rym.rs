//! Ricci Yang-Mills system for an abelian connection on a trivial circle
//! bundle over the torus:
//!
//! ```text
//! ∂g/∂t = −2Rc + η,        η_ij = ½ F_i^k g^{kl} F_jl,
//! ∂A/∂t = −d*F,            F = F₀ + ∂₁A₂ − ∂₂A₁,
//! ```
//!
//! with the two-form norm `|F|² = e^{−4u}F²` entering the energy as `−¼|F|²`
//! and the entropy as `+¼|F|²`. In two dimensions `η` is a pure-trace
//! tensor, so the metric slot of the system stays exactly conformal — no
//! projection defect arises.
//!
//! The constant `flux` component models the harmonic part of the curvature
//! (the periodic grid curl of a global 1-form integrates to zero, so a
//! uniform curvature is only reachable through it); it is a flow invariant.
//!
//! Discrete adjoints: the codifferential is built from the same centered
//! first-derivative stencils as the curvature, which are exactly
//! anti-self-adjoint on the periodic grid. Consequently `curl ∘ grad = 0`
//! holds to machine precision (gauge invariance), the Yang-Mills energy is
//! exactly dissipated, and the connection slots of the first variations are
//! exact discrete adjoints rather than continuum formulas.

#![allow(non_snake_case)]

use crate::error::{LabError, Result};
use crate::flow::{cfl_limit, cr_weights_clamped, FlowConfig, Scheme};
use crate::functionals::spectral::lambda_torus_with_potential;
use crate::functionals::SpectralResult;
use crate::geometry::{
    grad_norm_sq, hessian, integrate, laplace_beltrami, GridShape, ManifoldBackend,
    ScalarField, SymTensorField, TorusBackend,
};

use super::{add_scaled, check_grid, check_mass, normalize_torus_potential};

/// A metric-connection pair on the torus.
#[derive(Debug, Clone)]
pub struct RymState {
    pub metric: TorusBackend,
    /// Connection components `A = a₁dx + a₂dy`.
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    /// Constant harmonic part of the curvature (bundle flux density); the
    /// total curvature is `F = flux + ∂₁a₂ − ∂₂a₁`.
    pub flux: f64,
}

impl RymState {
    pub fn new(metric: TorusBackend, a1: Vec<f64>, a2: Vec<f64>) -> Result<Self> {
        Self::with_flux(metric, a1, a2, 0.0)
    }

    pub fn with_flux(
        metric: TorusBackend,
        a1: Vec<f64>,
        a2: Vec<f64>,
        flux: f64,
    ) -> Result<Self> {
        check_grid(&metric, &a1, "connection component a1")?;
        check_grid(&metric, &a2, "connection component a2")?;
        Ok(Self { metric, a1, a2, flux })
    }

    pub fn backend(&self) -> ManifoldBackend {
        ManifoldBackend::ConformalTorus(self.metric.clone())
    }

    /// Curvature coordinate component `F₁₂ = flux + ∂₁a₂ − ∂₂a₁`.
    pub fn curvature(&self) -> Vec<f64> {
        let s = self.metric.shape();
        curvature_grid(&s, &self.a1, &self.a2, self.flux)
    }

    /// Two-form norm grid `|F|² = e^{−4u}F²`.
    pub fn curvature_norm_sq(&self) -> Vec<f64> {
        let f = self.curvature();
        let em2u = self.metric.em2u();
        (0..f.len()).map(|i| em2u[i] * em2u[i] * (f[i] * f[i])).collect()
    }

    /// Yang-Mills energy `∫ |F|² dV = ∫ e^{−2u}F² dx dy`.
    pub fn ym_energy(&self) -> f64 {
        let f = self.curvature();
        let em2u = self.metric.em2u();
        let vals: Vec<f64> = (0..f.len()).map(|i| em2u[i] * f[i] * f[i]).collect();
        self.metric.shape().cell_sum(&vals)
    }

    /// Codifferential `(d*F)_i` of the curvature 2-form (the 1-form driving
    /// the Yang-Mills heat flow `∂A/∂t = −d*F`).
    pub fn codifferential(&self) -> (Vec<f64>, Vec<f64>) {
        let s = self.metric.shape();
        let em2u = self.metric.em2u();
        let f = self.curvature();
        let k0: Vec<f64> = (0..f.len()).map(|i| em2u[i] * f[i]).collect();
        let c1 = s.dy(&k0);
        let c2: Vec<f64> = s.dx(&k0).iter().map(|v| -v).collect();
        (c1, c2)
    }

    /// Weighted codifferential `(d*F − ι_{∇f}F)_i = e^{f}(d*(e^{−f}F))_i`,
    /// the adjoint of `d` with respect to `e^{−f}dV`.
    pub fn weighted_codifferential(&self, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_grid(&self.metric, f, "potential")?;
        let s = self.metric.shape();
        let em2u = self.metric.em2u();
        let fg = self.curvature();
        let k: Vec<f64> =
            (0..fg.len()).map(|i| em2u[i] * (-f[i]).exp() * fg[i]).collect();
        let (dyk, dxk) = (s.dy(&k), s.dx(&k));
        let c1: Vec<f64> = (0..k.len()).map(|i| f[i].exp() * dyk[i]).collect();
        let c2: Vec<f64> = (0..k.len()).map(|i| -(f[i].exp() * dxk[i])).collect();
        Ok((c1, c2))
    }
}

fn curvature_grid(s: &GridShape, a1: &[f64], a2: &[f64], flux: f64) -> Vec<f64> {
    let dxa2 = s.dx(a2);
    let dya1 = s.dy(a1);
    (0..a1.len()).map(|i| flux + (dxa2[i] - dya1[i])).collect()
}

/// Coupled right-hand side in conformal variables:
/// `∂u/∂t = e^{−2u}Δ_flat u + ¼e^{−4u}F²`, `∂A/∂t = −d*F`.
fn rym_rhs(
    s: &GridShape,
    u: &[f64],
    a1: &[f64],
    a2: &[f64],
    flux: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lap_u = s.lap_flat(u);
    let f = curvature_grid(s, a1, a2, flux);
    let len = u.len();
    let mut k0 = Vec::with_capacity(len);
    let mut du = Vec::with_capacity(len);
    for i in 0..len {
        let em2u = (-2.0 * u[i]).exp();
        du.push(em2u * lap_u[i] + 0.25 * em2u * em2u * (f[i] * f[i]));
        k0.push(em2u * f[i]);
    }
    let da1: Vec<f64> = s.dy(&k0).iter().map(|v| -v).collect();
    let da2 = s.dx(&k0);
    (du, da1, da2)
}

fn advance(st: &RymState, dt: f64, scheme: Scheme) -> Result<RymState> {
    if dt <= 0.0 {
        return Err(LabError::InvalidParameter("dt must be positive".into()));
    }
    let limit = cfl_limit(&st.metric);
    if dt > limit {
        return Err(LabError::CflViolation { dt, limit });
    }
    let shape = st.metric.shape();
    let (u, a1, a2) = (&st.metric.u, &st.a1, &st.a2);
    let (un, a1n, a2n) = match scheme {
        Scheme::Euler => {
            let (k1u, k1a, k1b) = rym_rhs(&shape, u, a1, a2, st.flux);
            (
                add_scaled(u, &k1u, dt),
                add_scaled(a1, &k1a, dt),
                add_scaled(a2, &k1b, dt),
            )
        }
        Scheme::Rk4 => {
            let (k1u, k1a, k1b) = rym_rhs(&shape, u, a1, a2, st.flux);
            let (k2u, k2a, k2b) = rym_rhs(
                &shape,
                &add_scaled(u, &k1u, 0.5 * dt),
                &add_scaled(a1, &k1a, 0.5 * dt),
                &add_scaled(a2, &k1b, 0.5 * dt),
                st.flux,
            );
            let (k3u, k3a, k3b) = rym_rhs(
                &shape,
                &add_scaled(u, &k2u, 0.5 * dt),
                &add_scaled(a1, &k2a, 0.5 * dt),
                &add_scaled(a2, &k2b, 0.5 * dt),
                st.flux,
            );
            let (k4u, k4a, k4b) = rym_rhs(
                &shape,
                &add_scaled(u, &k3u, dt),
                &add_scaled(a1, &k3a, dt),
                &add_scaled(a2, &k3b, dt),
                st.flux,
            );
            let mut un = u.clone();
            let mut a1n = a1.clone();
            let mut a2n = a2.clone();
            for i in 0..un.len() {
                un[i] += dt / 6.0 * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
                a1n[i] += dt / 6.0 * (k1a[i] + 2.0 * k2a[i] + 2.0 * k3a[i] + k4a[i]);
                a2n[i] += dt / 6.0 * (k1b[i] + 2.0 * k2b[i] + 2.0 * k3b[i] + k4b[i]);
            }
            (un, a1n, a2n)
        }
    };
    RymState::with_flux(
        TorusBackend::new(shape.nx, shape.ny, st.metric.lx, st.metric.ly, un)?,
        a1n,
        a2n,
        st.flux,
    )
}

/// One classical 4-stage step of the coupled system.
pub fn step_rym(st: &RymState, dt: f64) -> Result<RymState> {
    advance(st, dt, Scheme::Rk4)
}

/// Time-indexed trajectory of the coupled system.
#[derive(Debug, Clone)]
pub struct RymHistory {
    times: Vec<f64>,
    states: Vec<RymState>,
    pub dt: f64,
}

impl RymHistory {
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

    pub fn snapshot(&self, i: usize) -> (f64, &RymState) {
        (self.times[i], &self.states[i])
    }

    /// Interpolated state at forward time `t` (nodewise Catmull-Rom on the
    /// conformal factor and both connection components; the flux is a flow
    /// invariant and is carried through unchanged).
    pub fn sample(&self, t: f64) -> Result<RymState> {
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
        let blend = |get: &dyn Fn(&RymState) -> &Vec<f64>| -> Vec<f64> {
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
        let u = blend(&|s: &RymState| &s.metric.u);
        let a1 = blend(&|s: &RymState| &s.a1);
        let a2 = blend(&|s: &RymState| &s.a2);
        let shape = self.states[k].metric.shape();
        RymState::with_flux(
            TorusBackend::new(
                shape.nx,
                shape.ny,
                self.states[k].metric.lx,
                self.states[k].metric.ly,
                u,
            )?,
            a1,
            a2,
            self.states[k].flux,
        )
    }
}

/// Run the coupled system to time `T`, storing every step.
pub fn run_rym(st0: &RymState, t_total: f64, cfg: &FlowConfig) -> Result<RymHistory> {
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
    let mut cur = st0.clone();
    times.push(0.0);
    states.push(cur.clone());
    for k in 0..steps {
        cur = advance(&cur, dt, cfg.scheme)?;
        times.push((k + 1) as f64 * dt);
        states.push(cur.clone());
    }
    Ok(RymHistory { times, states, dt })
}

/// Energy of a configuration: `𝓕 = ∫ (R − ¼|F|² + |∇f|²) e^{−f} dV`.
pub fn eval_F_rym(st: &RymState, f: &[f64]) -> Result<f64> {
    check_grid(&st.metric, f, "potential")?;
    let m = st.backend();
    let r = st.metric.scalar_curvature_grid();
    let fsq = st.curvature_norm_sq();
    let gv = grad_norm_sq(&m, &ScalarField::TorusGrid(f.to_vec()))?.torus_values(&st.metric)?;
    let vals: Vec<f64> = (0..f.len())
        .map(|i| ((r[i] - 0.25 * fsq[i]) + gv[i]) * (-f[i]).exp())
        .collect();
    integrate(&m, &ScalarField::TorusGrid(vals))
}

/// Entropy of a configuration:
/// `𝒲 = ∫ [τ(|∇f|² + R + ¼|F|²) + f − n] (4πτ)^{−n/2} e^{−f} dV`.
pub fn eval_W_rym(st: &RymState, f: &[f64], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("entropy scale tau must be positive".into()));
    }
    check_grid(&st.metric, f, "potential")?;
    check_mass(&st.metric, f, tau)?;
    let n = 2.0;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let m = st.backend();
    let r = st.metric.scalar_curvature_grid();
    let fsq = st.curvature_norm_sq();
    let gv = grad_norm_sq(&m, &ScalarField::TorusGrid(f.to_vec()))?.torus_values(&st.metric)?;
    let vals: Vec<f64> = (0..f.len())
        .map(|i| {
            (tau * (gv[i] + (r[i] + 0.25 * fsq[i])) + f[i] - n) * pref * (-f[i]).exp()
        })
        .collect();
    integrate(&m, &ScalarField::TorusGrid(vals))
}

/// Energy evaluated through the fully general 2-D metric path (the
/// finite-difference oracle route); `|F|² = F₁₂²/det g`.
pub fn eval_F_rym_metric2d(
    g: &crate::geometry::general2d::Metric2D,
    a1: &[f64],
    a2: &[f64],
    flux: f64,
    f: &[f64],
) -> f64 {
    let r = g.scalar_curvature();
    let gsq = g.grad_norm_sq(f);
    let det = g.det();
    let fc = curvature_grid(&g.shape, a1, a2, flux);
    let vals: Vec<f64> = (0..f.len())
        .map(|i| {
            let fsq = fc[i] * fc[i] / det[i];
            ((r[i] - 0.25 * fsq) + gsq[i]) * (-f[i]).exp()
        })
        .collect();
    g.integrate(&vals)
}

/// Entropy evaluated through the fully general 2-D metric path.
pub fn eval_W_rym_metric2d(
    g: &crate::geometry::general2d::Metric2D,
    a1: &[f64],
    a2: &[f64],
    flux: f64,
    f: &[f64],
    tau: f64,
) -> f64 {
    let n = 2.0;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let r = g.scalar_curvature();
    let gsq = g.grad_norm_sq(f);
    let det = g.det();
    let fc = curvature_grid(&g.shape, a1, a2, flux);
    let vals: Vec<f64> = (0..f.len())
        .map(|i| {
            let fsq = fc[i] * fc[i] / det[i];
            (tau * (gsq[i] + (r[i] + 0.25 * fsq)) + f[i] - n) * pref * (-f[i]).exp()
        })
        .collect();
    g.integrate(&vals)
}

/// A first-variation direction for the metric-connection-potential triple:
/// `v = δg`, `(α₁, α₂) = δA`, `h = δf`, `σ = δτ`.
#[derive(Debug, Clone)]
pub struct RymVariation {
    pub v: SymTensorField,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub h: ScalarField,
    pub sigma: f64,
}

impl RymVariation {
    pub fn zero(len: usize) -> Self {
        Self {
            v: SymTensorField::Zero,
            alpha1: vec![0.0; len],
            alpha2: vec![0.0; len],
            h: ScalarField::Const(0.0),
            sigma: 0.0,
        }
    }
}

/// Pointwise grids shared by both first-variation assemblies.
struct RymVariationParts {
    vxx: Vec<f64>,
    vxy: Vec<f64>,
    vyy: Vec<f64>,
    h: Vec<f64>,
    hxx: Vec<f64>,
    hxy: Vec<f64>,
    hyy: Vec<f64>,
    lap_f: Vec<f64>,
    gsq: Vec<f64>,
    r: Vec<f64>,
    fsq: Vec<f64>,
    eta: Vec<f64>, // coordinate component η_xx = η_yy = ½e^{−2u}F²
    e2u: Vec<f64>,
    em2u: Vec<f64>,
    f: Vec<f64>,
}

impl RymVariationParts {
    fn build(st: &RymState, f: &[f64], var: &RymVariation) -> Result<Self> {
        check_grid(&st.metric, f, "potential")?;
        check_grid(&st.metric, &var.alpha1, "variation alpha1")?;
        check_grid(&st.metric, &var.alpha2, "variation alpha2")?;
        let m = st.backend();
        let ff = ScalarField::TorusGrid(f.to_vec());
        let (vxx, vxy, vyy) = var.v.torus_components(&st.metric)?;
        let h = var.h.torus_values(&st.metric)?;
        let (hxx, hxy, hyy) = hessian(&m, &ff)?.torus_components(&st.metric)?;
        let lap_f = laplace_beltrami(&m, &ff)?.torus_values(&st.metric)?;
        let gsq = grad_norm_sq(&m, &ff)?.torus_values(&st.metric)?;
        let r = st.metric.scalar_curvature_grid();
        let em2u = st.metric.em2u();
        let fc = st.curvature();
        let fsq: Vec<f64> =
            (0..fc.len()).map(|i| em2u[i] * em2u[i] * (fc[i] * fc[i])).collect();
        let eta: Vec<f64> =
            (0..fc.len()).map(|i| 0.5 * em2u[i] * (fc[i] * fc[i])).collect();
        Ok(Self {
            vxx,
            vxy,
            vyy,
            h,
            hxx,
            hxy,
            hyy,
            lap_f,
            gsq,
            r,
            fsq,
            eta,
            e2u: st.metric.e2u(),
            em2u,
            f: f.to_vec(),
        })
    }
}

/// Connection-slot contribution `−∫⟨α, d*F − ι_{∇f}F⟩ e^{−f} dV` assembled
/// as an exact discrete adjoint: `½ Σ (α₂ D_x K − α₁ D_y K) h²`, with
/// `K = e^{−2u−f}F` carrying the conformal, measure, and curvature weights.
fn alpha_term(st: &RymState, weight: &[f64], alpha1: &[f64], alpha2: &[f64]) -> f64 {
    let s = st.metric.shape();
    let em2u = st.metric.em2u();
    let fc = st.curvature();
    let k: Vec<f64> = (0..fc.len()).map(|i| em2u[i] * weight[i] * fc[i]).collect();
    let (dxk, dyk) = (s.dx(&k), s.dy(&k));
    let sum: f64 =
        (0..k.len()).map(|i| alpha2[i] * dxk[i] - alpha1[i] * dyk[i]).sum();
    0.5 * sum * s.hx * s.hy
}

/// First variation of the energy:
/// `δ𝓕 = ∫ e^{−f}[−v^{ij}(Rc_ij − ½η_ij + ∇_i∇_jf)
///        + (v/2 − h)(2Δf − |∇f|² + R − ¼|F|²)] dV − ½∫⟨α, d*F − ι_{∇f}F⟩e^{−f}dV`.
pub fn delta_F_rym(st: &RymState, f: &[f64], var: &RymVariation) -> Result<f64> {
    let p = RymVariationParts::build(st, f, var)?;
    let m = st.backend();
    let integrand: Vec<f64> = (0..p.f.len())
        .map(|i| {
            let ric = 0.5 * p.r[i] * p.e2u[i];
            let bxx = (ric - 0.5 * p.eta[i]) + p.hxx[i];
            let bxy = p.hxy[i];
            let byy = (ric - 0.5 * p.eta[i]) + p.hyy[i];
            let w = p.em2u[i] * p.em2u[i];
            let v_dot_b =
                w * (p.vxx[i] * bxx + 2.0 * p.vxy[i] * bxy + p.vyy[i] * byy);
            let trace_v = p.em2u[i] * (p.vxx[i] + p.vyy[i]);
            (-v_dot_b
                + (trace_v / 2.0 - p.h[i])
                    * (2.0 * p.lap_f[i] - p.gsq[i] + (p.r[i] - 0.25 * p.fsq[i])))
                * (-p.f[i]).exp()
        })
        .collect();
    let main = integrate(&m, &ScalarField::TorusGrid(integrand))?;
    let weight: Vec<f64> = p.f.iter().map(|&x| (-x).exp()).collect();
    Ok(main + alpha_term(st, &weight, &var.alpha1, &var.alpha2))
}

/// First variation of the entropy (all four slots `v`, `α`, `h`, `σ`):
/// `δ𝒲 = ∫ [σ(R + ¼|F|² + |∇f|²) − τv^{ij}(Rc_ij + ½η_ij + ∇_i∇_jf) + h
///        + (τ(2Δf − |∇f|² + R + ¼|F|²) + f − n)(v/2 − h − nσ/2τ)]
///        (4πτ)^{−n/2} e^{−f} dV + ½τ∫⟨α, d*F − ι_{∇f}F⟩(4πτ)^{−n/2}e^{−f}dV`.
pub fn delta_W_rym(st: &RymState, f: &[f64], tau: f64, var: &RymVariation) -> Result<f64> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("entropy scale tau must be positive".into()));
    }
    let p = RymVariationParts::build(st, f, var)?;
    let m = st.backend();
    let n = 2.0;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let sigma = var.sigma;
    let integrand: Vec<f64> = (0..p.f.len())
        .map(|i| {
            let ric = 0.5 * p.r[i] * p.e2u[i];
            let axx = (ric + 0.5 * p.eta[i]) + p.hxx[i];
            let axy = p.hxy[i];
            let ayy = (ric + 0.5 * p.eta[i]) + p.hyy[i];
            let w = p.em2u[i] * p.em2u[i];
            let v_dot_a =
                w * (p.vxx[i] * axx + 2.0 * p.vxy[i] * axy + p.vyy[i] * ayy);
            let trace_v = p.em2u[i] * (p.vxx[i] + p.vyy[i]);
            let rw = p.r[i] + 0.25 * p.fsq[i];
            let measure_var = trace_v / 2.0 - p.h[i] - n * sigma / (2.0 * tau);
            (sigma * (rw + p.gsq[i]) - tau * v_dot_a
                + p.h[i]
                + (tau * (2.0 * p.lap_f[i] - p.gsq[i] + rw) + p.f[i] - n) * measure_var)
                * pref
                * (-p.f[i]).exp()
        })
        .collect();
    let main = integrate(&m, &ScalarField::TorusGrid(integrand))?;
    let weight: Vec<f64> = p.f.iter().map(|&x| pref * (-x).exp()).collect();
    Ok(main - tau * alpha_term(st, &weight, &var.alpha1, &var.alpha2))
}

/// Time-derivative of the energy along the coupled system:
/// `∫ (2|Rc − ½η + ∇²f|² + ½|d*F − ι_{∇f}F|²) e^{−f} dV`.
pub fn production_F_rym(st: &RymState, f: &[f64]) -> Result<f64> {
    check_grid(&st.metric, f, "potential")?;
    let m = st.backend();
    let ff = ScalarField::TorusGrid(f.to_vec());
    let (hxx, hxy, hyy) = hessian(&m, &ff)?.torus_components(&st.metric)?;
    let r = st.metric.scalar_curvature_grid();
    let e2u = st.metric.e2u();
    let em2u = st.metric.em2u();
    let fc = st.curvature();
    let (c1, c2) = st.weighted_codifferential(f)?;
    let vals: Vec<f64> = (0..f.len())
        .map(|i| {
            let ric = 0.5 * r[i] * e2u[i];
            let eta = 0.5 * em2u[i] * (fc[i] * fc[i]);
            let bxx = (ric - 0.5 * eta) + hxx[i];
            let byy = (ric - 0.5 * eta) + hyy[i];
            let w = em2u[i] * em2u[i];
            let b_sq = w * (bxx * bxx + 2.0 * hxy[i] * hxy[i] + byy * byy);
            let cd_sq = em2u[i] * (c1[i] * c1[i] + c2[i] * c2[i]);
            (2.0 * b_sq + 0.5 * cd_sq) * (-f[i]).exp()
        })
        .collect();
    integrate(&m, &ScalarField::TorusGrid(vals))
}

/// Entropy rate along the coupled system with the conjugate density law:
/// `d𝒲/dt = ∫ [2τ|Rc + ∇²f − g/2τ|² − ½τ|η|² − ½τ|d*F − ι_{∇f}F|² + ¼|F|²] dm`
/// (not sign-definite; the `¼|F|²` term can win at large curvature).
pub fn dW_dt_rym(st: &RymState, f: &[f64], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("entropy scale tau must be positive".into()));
    }
    check_grid(&st.metric, f, "potential")?;
    let n = 2.0;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let m = st.backend();
    let ff = ScalarField::TorusGrid(f.to_vec());
    let (hxx, hxy, hyy) = hessian(&m, &ff)?.torus_components(&st.metric)?;
    let r = st.metric.scalar_curvature_grid();
    let e2u = st.metric.e2u();
    let fsq = st.curvature_norm_sq();
    let em2u = st.metric.em2u();
    let (c1, c2) = st.weighted_codifferential(f)?;
    let vals: Vec<f64> = (0..f.len())
        .map(|i| {
            let ric = 0.5 * r[i] * e2u[i];
            let shift = e2u[i] / (2.0 * tau);
            let bxx = ric + hxx[i] - shift;
            let byy = ric + hyy[i] - shift;
            let w = em2u[i] * em2u[i];
            let b_sq = w * (bxx * bxx + 2.0 * hxy[i] * hxy[i] + byy * byy);
            let eta_sq = 0.5 * fsq[i] * fsq[i];
            let cd_sq = em2u[i] * (c1[i] * c1[i] + c2[i] * c2[i]);
            (2.0 * tau * b_sq - 0.5 * tau * eta_sq - 0.5 * tau * cd_sq
                + 0.25 * fsq[i])
                * pref
                * (-f[i]).exp()
        })
        .collect();
    integrate(&m, &ScalarField::TorusGrid(vals))
}

/// Ground state of `−4Δ^g + R − ¼|F|²` (the connection-coupled spectral
/// invariant, through the same symmetrized eigensolver as the plain one).
pub fn lambda_rym(st: &RymState) -> Result<SpectralResult> {
    let r = st.metric.scalar_curvature_grid();
    let fsq = st.curvature_norm_sq();
    let pot: Vec<f64> = (0..r.len()).map(|i| r[i] - 0.25 * fsq[i]).collect();
    lambda_torus_with_potential(&st.metric, &pot)
}

/// Which evolution law the potential follows in backward time `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RymPotentialMode {
    /// `∂f/∂τ = Δf − |∇f|² + R − ½|F|²`.
    Plain,
    /// `∂f/∂τ = Δf − |∇f|² + R − ½|F|² − n/(2τ)` (conjugate density).
    Normalized,
    /// `∂f/∂τ = Δf + R − ½|F|²` (gauge-transported).
    Gauge,
}

/// One potential snapshot aligned with a forward history snapshot.
#[derive(Debug, Clone)]
pub struct RymPotentialSample {
    pub t: f64,
    /// Backward scale `τ = τ_end + (t_final − t)`.
    pub tau: f64,
    pub f: Vec<f64>,
}

/// Attach `f_end` at the final snapshot and integrate backward through the
/// history (density substitution for the plain/normalized laws); returns
/// one potential per snapshot in forward order.
pub fn evolve_rym_potential(
    hist: &RymHistory,
    f_end: &[f64],
    mode: RymPotentialMode,
    tau_end: f64,
) -> Result<Vec<RymPotentialSample>> {
    if hist.len() < 2 {
        return Err(LabError::InvalidParameter(
            "potential evolution needs at least two snapshots".into(),
        ));
    }
    if tau_end < 0.0 || (mode == RymPotentialMode::Normalized && tau_end <= 0.0) {
        return Err(LabError::InvalidParameter(
            "attachment scale tau_end must be positive".into(),
        ));
    }
    let n_snap = hist.len();
    let (t_end, last) = hist.snapshot(n_snap - 1);
    check_grid(&last.metric, f_end, "potential")?;
    let n = 2.0;
    let log_factor = |tau: f64| -> f64 {
        match mode {
            RymPotentialMode::Normalized => {
                -(n / 2.0) * (4.0 * std::f64::consts::PI * tau).ln()
            }
            _ => 0.0,
        }
    };
    let mut state: Vec<f64> = match mode {
        RymPotentialMode::Gauge => f_end.to_vec(),
        _ => f_end.iter().map(|&f| (-f + log_factor(tau_end)).exp()).collect(),
    };
    let recover = |state: &[f64], tau: f64| -> Result<Vec<f64>> {
        match mode {
            RymPotentialMode::Gauge => Ok(state.to_vec()),
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
    // density modes: ∂w/∂τ = e^{−2u}(Δ_flat w + 2wΔ_flat u) + ½|F|²w
    // gauge mode:    ∂f/∂τ = e^{−2u}(Δ_flat f − 2Δ_flat u) − ½|F|²
    let rhs = |state: &[f64], at: &RymState| -> Vec<f64> {
        let shape = at.metric.shape();
        let lap_s = shape.lap_flat(state);
        let lap_u = shape.lap_flat(&at.metric.u);
        let em2u = at.metric.em2u();
        let fsq = at.curvature_norm_sq();
        (0..state.len())
            .map(|i| match mode {
                RymPotentialMode::Gauge => {
                    em2u[i] * (lap_s[i] - 2.0 * lap_u[i]) - 0.5 * fsq[i]
                }
                _ => {
                    em2u[i] * (lap_s[i] + 2.0 * state[i] * lap_u[i])
                        + 0.5 * fsq[i] * state[i]
                }
            })
            .collect()
    };
    let dt = hist.dt;
    let mut out = vec![RymPotentialSample {
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
        out.push(RymPotentialSample { t: t_b, tau, f: recover(&state, tau)? });
    }
    out.reverse();
    Ok(out)
}

/// One row of the low-energy diagnostic.
#[derive(Debug, Clone)]
pub struct LowEnergySample {
    pub t: f64,
    /// `τ = t_cap − t`.
    pub tau: f64,
    /// `sup_M |F|²` at this snapshot.
    pub sup_f_sq: f64,
    /// `(t_cap − t)·sup_M |F|²` — the quantity whose decay characterizes a
    /// low-energy solution.
    pub scaled: f64,
    /// Entropy at the evolved conjugate potential.
    pub w: f64,
    /// Centered time derivative of the entropy (interior snapshots only).
    pub dw_dt: Option<f64>,
}

/// Low-energy diagnostic for a trajectory approaching a singular cap time.
#[derive(Debug, Clone)]
pub struct LowEnergyReport {
    pub samples: Vec<LowEnergySample>,
    /// Earliest snapshot time from which the entropy derivative stays above
    /// `−tol` through the end of the stored interval.
    pub t0: Option<f64>,
}

/// Track `(t_cap − t)·sup|F|²` and the entropy trend along a stored
/// trajectory: `f_end` is normalized at the final snapshot and evolved
/// backward with the conjugate density law, and the report marks the time
/// past which `d𝒲/dt ≥ −tol` held numerically.
pub fn low_energy_check(
    hist: &RymHistory,
    t_cap: f64,
    f_end: &[f64],
    tol: f64,
) -> Result<LowEnergyReport> {
    if hist.len() < 3 {
        return Err(LabError::InvalidParameter(
            "low-energy check needs at least three snapshots".into(),
        ));
    }
    let t_final = hist.t_final();
    if t_cap <= t_final {
        return Err(LabError::InvalidParameter(
            "cap time must lie beyond the stored interval".into(),
        ));
    }
    let (_, last) = hist.snapshot(hist.len() - 1);
    let tau_end = t_cap - t_final;
    let f_norm = normalize_torus_potential(&last.metric, f_end, tau_end)?;
    let traj = evolve_rym_potential(hist, &f_norm, RymPotentialMode::Normalized, tau_end)?;
    let n = hist.len();
    let mut w = Vec::with_capacity(n);
    for (i, sample) in traj.iter().enumerate() {
        let (_, st) = hist.snapshot(i);
        w.push(eval_W_rym(st, &sample.f, sample.tau)?);
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (t, st) = hist.snapshot(i);
        let tau = t_cap - t;
        let sup = st.curvature_norm_sq().into_iter().fold(0.0f64, f64::max);
        let dw_dt = if i > 0 && i + 1 < n {
            Some((w[i + 1] - w[i - 1]) / (2.0 * hist.dt))
        } else {
            None
        };
        samples.push(LowEnergySample {
            t,
            tau,
            sup_f_sq: sup,
            scaled: tau * sup,
            w: w[i],
            dw_dt,
        });
    }
    let mut t0 = None;
    for i in (1..n - 1).rev() {
        match samples[i].dw_dt {
            Some(d) if d >= -tol => t0 = Some(samples[i].t),
            _ => break,
        }
    }
    Ok(LowEnergyReport { samples, t0 })
}
