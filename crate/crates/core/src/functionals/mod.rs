//! Energy and entropy functionals of a metric-potential pair, their exact
//! first variations, and the production (time-derivative) formulas, together
//! with the spectral invariants and the weighted-diffusion entropy.
//!
//! Names follow the standard blackboard notation (`F`, `W`) rather than
//! snake case so the code reads like the formulas it implements.
#![allow(non_snake_case)]

pub mod diffusion;
pub mod mu;
pub mod spectral;

pub use diffusion::{
    bakry_emery, bakry_emery_floor, diffusion_entropy, evolve_heat, WeightedOperator,
};
pub use mu::{mu, MuResult};
pub use spectral::{lambda_k, SpectralResult};

use crate::error::{LabError, Result};
use crate::geometry::general2d::Metric2D;
use crate::geometry::{
    grad_norm_sq, integrate, integrate_euclid, laplace_beltrami, AnalyticScalar,
    ManifoldBackend, ScalarField, SymTensorField, TorusBackend,
};

/// A potential `f` with its scale `τ`; `compatible` asserts the unit-mass
/// normalization `∫ (4πτ)^{−n/2} e^{−f} dV = 1`.
#[derive(Debug, Clone)]
pub struct PotentialConfig {
    pub f: ScalarField,
    pub tau: f64,
    pub compatible: bool,
}

/// A first-variation direction: metric perturbation `v = δg`, potential
/// perturbation `h = δf`, scale perturbation `σ = δτ`.
#[derive(Debug, Clone)]
pub struct VariationData {
    pub v: SymTensorField,
    pub h: ScalarField,
    pub sigma: f64,
}

impl VariationData {
    pub fn zero() -> Self {
        Self { v: SymTensorField::Zero, h: ScalarField::Const(0.0), sigma: 0.0 }
    }
}

/// Energy functional `∫ (kR + |∇f|²) e^{−f} dV` (`k = 1` is the plain one).
pub fn eval_F(m: &ManifoldBackend, f: &ScalarField, k: f64) -> Result<f64> {
    if k < 1.0 {
        return Err(LabError::InvalidParameter("curvature weight k must be >= 1".into()));
    }
    match m {
        ManifoldBackend::Euclidean(b) => {
            let fa = f.euclid_analytic(b.n)?;
            integrate_euclid(b, move |x| {
                let g = fa.gradient(x);
                let gsq: f64 = g.iter().take(b.n).map(|c| c * c).sum();
                gsq * (-fa.value(x)).exp()
            })
        }
        _ => {
            let r = crate::geometry::scalar_curvature(m);
            let gsq = grad_norm_sq(m, f)?;
            // integrand (kR + |∇f|²) e^{−f} assembled per backend family
            match m {
                ManifoldBackend::Sphere(s) => {
                    let rv = s.scalar_curvature();
                    let fv = f.sphere_values(s)?;
                    let ScalarField::SphereLat(gv) = upgrade_sphere(gsq, s)? else {
                        unreachable!()
                    };
                    let vals: Vec<f64> = fv
                        .iter()
                        .zip(&gv)
                        .map(|(&fi, &gi)| (k * rv + gi) * (-fi).exp())
                        .collect();
                    integrate(m, &ScalarField::SphereLat(vals))
                }
                ManifoldBackend::ConformalTorus(t) => {
                    let rv = grid_of(&r, t)?;
                    let fv = f.torus_values(t)?;
                    let gv = grid_of(&gsq, t)?;
                    let vals: Vec<f64> = (0..fv.len())
                        .map(|i| (k * rv[i] + gv[i]) * (-fv[i]).exp())
                        .collect();
                    integrate(m, &ScalarField::TorusGrid(vals))
                }
                ManifoldBackend::Euclidean(_) => unreachable!(),
            }
        }
    }
}

/// Energy functional evaluated through the fully general 2-D metric path
/// (curvature from the first fundamental form, not the conformal shortcut).
/// This is the independent route used by finite-difference variation oracles
/// and by diffeomorphism-transported pairs.
pub fn eval_F_metric2d(g: &Metric2D, f: &[f64], k: f64) -> f64 {
    let r = g.scalar_curvature();
    let gsq = g.grad_norm_sq(f);
    let vals: Vec<f64> =
        (0..f.len()).map(|i| (k * r[i] + gsq[i]) * (-f[i]).exp()).collect();
    g.integrate(&vals)
}

/// Entropy functional evaluated through the general 2-D metric path.
pub fn eval_W_metric2d(g: &Metric2D, f: &[f64], tau: f64) -> f64 {
    let n = 2.0;
    let r = g.scalar_curvature();
    let gsq = g.grad_norm_sq(f);
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let vals: Vec<f64> = (0..f.len())
        .map(|i| (tau * (gsq[i] + r[i]) + f[i] - n) * pref * (-f[i]).exp())
        .collect();
    g.integrate(&vals)
}

/// Entropy functional `∫ [τ(|∇f|² + R) + f − n] (4πτ)^{−n/2} e^{−f} dV`.
pub fn eval_W(m: &ManifoldBackend, cfg: &PotentialConfig) -> Result<f64> {
    if !cfg.compatible {
        return Err(LabError::Incompatible { mass: f64::NAN });
    }
    if cfg.tau <= 0.0 {
        return Err(LabError::InvalidParameter("entropy scale tau must be positive".into()));
    }
    let n = m.dimension() as f64;
    let pref = (4.0 * std::f64::consts::PI * cfg.tau).powf(-n / 2.0);
    match m {
        ManifoldBackend::Euclidean(b) => {
            let fa = cfg.f.euclid_analytic(b.n)?;
            let tau = cfg.tau;
            integrate_euclid(b, move |x| {
                let g = fa.gradient(x);
                let gsq: f64 = g.iter().take(b.n).map(|c| c * c).sum();
                let fv = fa.value(x);
                (tau * gsq + fv - n) * pref * (-fv).exp()
            })
        }
        ManifoldBackend::Sphere(s) => {
            let rv = s.scalar_curvature();
            let fv = cfg.f.sphere_values(s)?;
            let gv = match grad_norm_sq(m, &cfg.f)? {
                ScalarField::Const(c) => vec![c; fv.len()],
                ScalarField::SphereLat(v) => v,
                _ => unreachable!(),
            };
            let vals: Vec<f64> = (0..fv.len())
                .map(|i| (cfg.tau * (gv[i] + rv) + fv[i] - n) * pref * (-fv[i]).exp())
                .collect();
            integrate(m, &ScalarField::SphereLat(vals))
        }
        ManifoldBackend::ConformalTorus(t) => {
            let rv = t.scalar_curvature_grid();
            let fv = cfg.f.torus_values(t)?;
            let gv = grid_of(&grad_norm_sq(m, &cfg.f)?, t)?;
            let vals: Vec<f64> = (0..fv.len())
                .map(|i| (cfg.tau * (gv[i] + rv[i]) + fv[i] - n) * pref * (-fv[i]).exp())
                .collect();
            integrate(m, &ScalarField::TorusGrid(vals))
        }
    }
}

/// Shift `f` by a constant so that `∫ (4πτ)^{−n/2} e^{−f} dV = 1`.
pub fn normalize_potential(
    m: &ManifoldBackend,
    f: &ScalarField,
    tau: f64,
) -> Result<PotentialConfig> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("tau must be positive".into()));
    }
    let n = m.dimension() as f64;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let mass = match m {
        ManifoldBackend::Euclidean(b) => {
            let fa = f.euclid_analytic(b.n)?;
            integrate_euclid(b, move |x| pref * (-fa.value(x)).exp())?
        }
        ManifoldBackend::Sphere(s) => {
            let fv = f.sphere_values(s)?;
            let vals: Vec<f64> = fv.iter().map(|&x| pref * (-x).exp()).collect();
            integrate(m, &ScalarField::SphereLat(vals))?
        }
        ManifoldBackend::ConformalTorus(t) => {
            let fv = f.torus_values(t)?;
            let vals: Vec<f64> = fv.iter().map(|&x| pref * (-x).exp()).collect();
            integrate(m, &ScalarField::TorusGrid(vals))?
        }
    };
    if !mass.is_finite() || mass <= 0.0 {
        return Err(LabError::Incompatible { mass });
    }
    let c = mass.ln();
    let shifted = match f {
        ScalarField::Const(x) => ScalarField::Const(x + c),
        ScalarField::TorusGrid(v) => {
            ScalarField::TorusGrid(v.iter().map(|x| x + c).collect())
        }
        ScalarField::SphereLat(v) => {
            ScalarField::SphereLat(v.iter().map(|x| x + c).collect())
        }
        ScalarField::EuclidAnalytic(a) => ScalarField::EuclidAnalytic(a.shifted(c)),
    };
    Ok(PotentialConfig { f: shifted, tau, compatible: true })
}

/// First variation of the energy functional:
/// `δ𝓕 = ∫ e^{−f} [ −v^{ij}(R_ij + ∇_i∇_j f) + (v/2 − h)(2Δf − |∇f|² + R) ] dV`
/// for `k = 1`; for `k > 1` no closed integrand is provided and the value is
/// obtained by central differencing of the functional itself.
pub fn delta_F(
    m: &ManifoldBackend,
    f: &ScalarField,
    var: &VariationData,
    k: f64,
) -> Result<f64> {
    if k < 1.0 {
        return Err(LabError::InvalidParameter("curvature weight k must be >= 1".into()));
    }
    if k != 1.0 {
        return delta_F_fd(m, f, var, k);
    }
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let parts = TorusVariationParts::build(t, f, var)?;
            let integrand: Vec<f64> = (0..parts.len())
                .map(|i| {
                    let p = parts.at(i);
                    (-p.v_dot_a + (p.trace_v / 2.0 - p.h) * (2.0 * p.lap_f - p.gsq + p.r))
                        * (-p.f).exp()
                })
                .collect();
            integrate(m, &ScalarField::TorusGrid(integrand))
        }
        ManifoldBackend::Sphere(s) => {
            let (c, h) = sphere_variation(s, f, var)?;
            // constant f on the round sphere: Hess f = 0, ∇f = 0, so
            // v^{ij}R_ij = cR and the h-factor multiplies R alone.
            let r = s.scalar_curvature();
            let n = s.n as f64;
            let fv = constant_sphere_potential(s, f)?;
            let density = (-fv).exp() * s.volume();
            Ok((-c * r + (c * n / 2.0 - h) * r) * density)
        }
        ManifoldBackend::Euclidean(b) => {
            let h = euclid_scalar_variation(&var.v, &var.h, b.n)?;
            let fa = f.euclid_analytic(b.n)?;
            integrate_euclid(b, move |x| {
                let grad = fa.gradient(x);
                let hess = fa.hessian(x);
                let gsq: f64 = grad.iter().take(b.n).map(|c| c * c).sum();
                let lap: f64 = (0..b.n).map(|i| hess[i][i]).sum();
                -h.value(x) * (2.0 * lap - gsq) * (-fa.value(x)).exp()
            })
        }
    }
}

/// First variation of the entropy functional (all three slots `v`, `h`, `σ`):
/// `δ𝒲 = ∫ [σ(R+|∇f|²) − τ v^{ij}(R_ij+∇_i∇_j f) + h
///        + (τ(2Δf−|∇f|²+R)+f−n)(v/2 − h − nσ/2τ)] (4πτ)^{−n/2} e^{−f} dV`.
pub fn delta_W(m: &ManifoldBackend, cfg: &PotentialConfig, var: &VariationData) -> Result<f64> {
    if !cfg.compatible {
        return Err(LabError::Incompatible { mass: f64::NAN });
    }
    let tau = cfg.tau;
    let n = m.dimension() as f64;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    let sigma = var.sigma;
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let parts = TorusVariationParts::build(t, &cfg.f, var)?;
            let integrand: Vec<f64> = (0..parts.len())
                .map(|i| {
                    let p = parts.at(i);
                    let measure_var = p.trace_v / 2.0 - p.h - n * sigma / (2.0 * tau);
                    (sigma * (p.r + p.gsq) - tau * p.v_dot_a
                        + p.h
                        + (tau * (2.0 * p.lap_f - p.gsq + p.r) + p.f - n) * measure_var)
                        * pref
                        * (-p.f).exp()
                })
                .collect();
            integrate(m, &ScalarField::TorusGrid(integrand))
        }
        ManifoldBackend::Sphere(s) => {
            let (c, h) = sphere_variation(s, &cfg.f, var)?;
            let r = s.scalar_curvature();
            let fv = constant_sphere_potential(s, &cfg.f)?;
            let measure_var = c * n / 2.0 - h - n * sigma / (2.0 * tau);
            let integrand =
                (sigma * r - tau * c * r + h + (tau * r + fv - n) * measure_var)
                    * pref
                    * (-fv).exp();
            Ok(integrand * s.volume())
        }
        ManifoldBackend::Euclidean(b) => {
            let h = euclid_scalar_variation(&var.v, &var.h, b.n)?;
            let fa = cfg.f.euclid_analytic(b.n)?;
            integrate_euclid(b, move |x| {
                let grad = fa.gradient(x);
                let hess = fa.hessian(x);
                let gsq: f64 = grad.iter().take(b.n).map(|c| c * c).sum();
                let lap: f64 = (0..b.n).map(|i| hess[i][i]).sum();
                let fv = fa.value(x);
                let hv = h.value(x);
                let measure_var = -hv - n * sigma / (2.0 * tau);
                (sigma * gsq + hv + (tau * (2.0 * lap - gsq) + fv - n) * measure_var)
                    * pref
                    * (-fv).exp()
            })
        }
    }
}

/// Time-derivative of the energy functional along its coupled flow:
/// `2∫|Ric + Hess f|² e^{−f} dV`, plus `2(k−1)∫|Ric|² e^{−f} dV` for `k > 1`.
pub fn production_F(m: &ManifoldBackend, f: &ScalarField, k: f64) -> Result<f64> {
    if k < 1.0 {
        return Err(LabError::InvalidParameter("curvature weight k must be >= 1".into()));
    }
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let pieces = TorusPairPieces::build(t, f)?;
            let integrand: Vec<f64> = (0..pieces.len())
                .map(|i| {
                    let (a_sq, ric_sq, fv) = pieces.norms(i);
                    (2.0 * a_sq + 2.0 * (k - 1.0) * ric_sq) * (-fv).exp()
                })
                .collect();
            integrate(m, &ScalarField::TorusGrid(integrand))
        }
        ManifoldBackend::Sphere(s) => {
            let fv = constant_sphere_potential(s, f)?;
            let n = s.n as f64;
            let ric_scale = (n - 1.0) / (s.radius * s.radius);
            let ric_sq = n * ric_scale * ric_scale;
            Ok((2.0 * ric_sq + 2.0 * (k - 1.0) * ric_sq) * (-fv).exp() * s.volume())
        }
        ManifoldBackend::Euclidean(b) => {
            let fa = f.euclid_analytic(b.n)?;
            integrate_euclid(b, move |x| {
                let hess = fa.hessian(x);
                let mut a_sq = 0.0;
                for i in 0..b.n {
                    for j in 0..b.n {
                        a_sq += hess[i][j] * hess[i][j];
                    }
                }
                2.0 * a_sq * (-fa.value(x)).exp()
            })
        }
    }
}

/// Time-derivative of the entropy functional along its coupled flow:
/// `∫ 2τ |Ric + Hess f − g/(2τ)|² (4πτ)^{−n/2} e^{−f} dV`.
pub fn production_W(m: &ManifoldBackend, cfg: &PotentialConfig) -> Result<f64> {
    if !cfg.compatible {
        return Err(LabError::Incompatible { mass: f64::NAN });
    }
    let tau = cfg.tau;
    let n = m.dimension() as f64;
    let pref = (4.0 * std::f64::consts::PI * tau).powf(-n / 2.0);
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let pieces = TorusPairPieces::build(t, &cfg.f)?;
            let e2u = t.e2u();
            let integrand: Vec<f64> = (0..pieces.len())
                .map(|i| {
                    // soliton defect B = Ric + Hess f − g/(2τ)
                    let shift = e2u[i] / (2.0 * tau);
                    let b_sq = pieces.shifted_norm(i, shift);
                    2.0 * tau * b_sq * pref * (-pieces.f[i]).exp()
                })
                .collect();
            integrate(m, &ScalarField::TorusGrid(integrand))
        }
        ManifoldBackend::Sphere(s) => {
            let fv = constant_sphere_potential(s, &cfg.f)?;
            let defect = (s.n as f64 - 1.0) / (s.radius * s.radius) - 1.0 / (2.0 * tau);
            let b_sq = n * defect * defect;
            Ok(2.0 * tau * b_sq * pref * (-fv).exp() * s.volume())
        }
        ManifoldBackend::Euclidean(b) => {
            let fa = cfg.f.euclid_analytic(b.n)?;
            integrate_euclid(b, move |x| {
                let hess = fa.hessian(x);
                let mut b_sq = 0.0;
                for i in 0..b.n {
                    for j in 0..b.n {
                        let shift = if i == j { 1.0 / (2.0 * tau) } else { 0.0 };
                        let e = hess[i][j] - shift;
                        b_sq += e * e;
                    }
                }
                2.0 * tau * b_sq * pref * (-fa.value(x)).exp()
            })
        }
    }
}

// ---------------------------------------------------------------------------
// shared assembly helpers
// ---------------------------------------------------------------------------

/// Pointwise quantities entering both first-variation integrands on the
/// torus: `A = Ric + Hess f` contracted with the raised variation, the
/// metric trace of `v`, and the scalar pieces of the `(v/2 − h)` factor.
struct TorusVariationParts {
    v_dot_a: Vec<f64>,
    trace_v: Vec<f64>,
    h: Vec<f64>,
    lap_f: Vec<f64>,
    gsq: Vec<f64>,
    r: Vec<f64>,
    f: Vec<f64>,
}

struct TorusVariationPoint {
    v_dot_a: f64,
    trace_v: f64,
    h: f64,
    lap_f: f64,
    gsq: f64,
    r: f64,
    f: f64,
}

impl TorusVariationParts {
    fn build(t: &TorusBackend, f: &ScalarField, var: &VariationData) -> Result<Self> {
        let m = ManifoldBackend::ConformalTorus(t.clone());
        let fv = f.torus_values(t)?;
        let len = fv.len();
        let r = t.scalar_curvature_grid();
        let gsq = grid_of(&grad_norm_sq(&m, f)?, t)?;
        let lap_f = grid_of(&laplace_beltrami(&m, f)?, t)?;
        let h = var.h.torus_values(t)?;
        let (vxx, vxy, vyy) = match &var.v {
            SymTensorField::Zero => (vec![0.0; len], vec![0.0; len], vec![0.0; len]),
            SymTensorField::TorusGrid { xx, xy, yy } => (xx.clone(), xy.clone(), yy.clone()),
            SymTensorField::SphereConformal(_) | SymTensorField::EuclidAnalytic(_) => {
                return Err(LabError::BackendMismatch(
                    "metric variation does not live on the torus".into(),
                ))
            }
        };
        let hess = crate::geometry::hessian(&m, f)?;
        let (hxx, hxy, hyy) = match hess {
            SymTensorField::TorusGrid { xx, xy, yy } => (xx, xy, yy),
            SymTensorField::Zero => (vec![0.0; len], vec![0.0; len], vec![0.0; len]),
            _ => unreachable!(),
        };
        let e2u = t.e2u();
        let em2u = t.em2u();
        let mut v_dot_a = Vec::with_capacity(len);
        let mut trace_v = Vec::with_capacity(len);
        for i in 0..len {
            // Ric = (R/2)·g in two dimensions (coordinate components).
            let ric = 0.5 * r[i] * e2u[i];
            let axx = ric + hxx[i];
            let axy = hxy[i];
            let ayy = ric + hyy[i];
            let w = em2u[i] * em2u[i];
            v_dot_a.push(w * (vxx[i] * axx + 2.0 * vxy[i] * axy + vyy[i] * ayy));
            trace_v.push(em2u[i] * (vxx[i] + vyy[i]));
        }
        Ok(Self { v_dot_a, trace_v, h, lap_f, gsq, r, f: fv })
    }

    fn len(&self) -> usize {
        self.f.len()
    }

    fn at(&self, i: usize) -> TorusVariationPoint {
        TorusVariationPoint {
            v_dot_a: self.v_dot_a[i],
            trace_v: self.trace_v[i],
            h: self.h[i],
            lap_f: self.lap_f[i],
            gsq: self.gsq[i],
            r: self.r[i],
            f: self.f[i],
        }
    }
}

/// Coordinate components of `A = Ric + Hess f` on the torus, with the metric
/// weights needed for squared norms.
struct TorusPairPieces {
    axx: Vec<f64>,
    axy: Vec<f64>,
    ayy: Vec<f64>,
    em2u: Vec<f64>,
    ric: Vec<f64>,
    f: Vec<f64>,
}

impl TorusPairPieces {
    fn build(t: &TorusBackend, f: &ScalarField) -> Result<Self> {
        let m = ManifoldBackend::ConformalTorus(t.clone());
        let fv = f.torus_values(t)?;
        let len = fv.len();
        let r = t.scalar_curvature_grid();
        let e2u = t.e2u();
        let (hxx, hxy, hyy) = match crate::geometry::hessian(&m, f)? {
            SymTensorField::TorusGrid { xx, xy, yy } => (xx, xy, yy),
            SymTensorField::Zero => (vec![0.0; len], vec![0.0; len], vec![0.0; len]),
            _ => unreachable!(),
        };
        let ric: Vec<f64> = (0..len).map(|i| 0.5 * r[i] * e2u[i]).collect();
        let axx: Vec<f64> = (0..len).map(|i| ric[i] + hxx[i]).collect();
        let ayy: Vec<f64> = (0..len).map(|i| ric[i] + hyy[i]).collect();
        Ok(Self { axx, axy: hxy, ayy, em2u: t.em2u(), ric, f: fv })
    }

    fn len(&self) -> usize {
        self.f.len()
    }

    /// `(|A|², |Ric|², f)` at node `i`.
    fn norms(&self, i: usize) -> (f64, f64, f64) {
        let w = self.em2u[i] * self.em2u[i];
        let a_sq = w
            * (self.axx[i] * self.axx[i]
                + 2.0 * self.axy[i] * self.axy[i]
                + self.ayy[i] * self.ayy[i]);
        let ric_sq = 2.0 * w * self.ric[i] * self.ric[i];
        (a_sq, ric_sq, self.f[i])
    }

    /// `|A − shift·δ_coord|²` where `shift` is the coordinate component of a
    /// multiple of the metric (e.g. `e^{2u}/(2τ)`).
    fn shifted_norm(&self, i: usize, shift: f64) -> f64 {
        let w = self.em2u[i] * self.em2u[i];
        let bxx = self.axx[i] - shift;
        let byy = self.ayy[i] - shift;
        w * (bxx * bxx + 2.0 * self.axy[i] * self.axy[i] + byy * byy)
    }
}

fn grid_of(field: &ScalarField, t: &TorusBackend) -> Result<Vec<f64>> {
    field.torus_values(t)
}

fn upgrade_sphere(
    field: ScalarField,
    s: &crate::geometry::SphereBackend,
) -> Result<ScalarField> {
    Ok(match field {
        ScalarField::Const(c) => ScalarField::SphereLat(vec![c; s.lat_res + 1]),
        other => other,
    })
}

/// Sphere variations are restricted to conformal metric directions and
/// constant potentials (the backend is rotationally symmetric).
fn sphere_variation(
    s: &crate::geometry::SphereBackend,
    f: &ScalarField,
    var: &VariationData,
) -> Result<(f64, f64)> {
    let c = match &var.v {
        SymTensorField::Zero => 0.0,
        SymTensorField::SphereConformal(c) => *c,
        _ => {
            return Err(LabError::BackendMismatch(
                "sphere metric variations must be conformal multiples of g".into(),
            ))
        }
    };
    let h = match &var.h {
        ScalarField::Const(h) => *h,
        _ => {
            return Err(LabError::BackendMismatch(
                "sphere potential variations must be constant".into(),
            ))
        }
    };
    let _ = constant_sphere_potential(s, f)?;
    Ok((c, h))
}

fn constant_sphere_potential(
    _s: &crate::geometry::SphereBackend,
    f: &ScalarField,
) -> Result<f64> {
    match f {
        ScalarField::Const(c) => Ok(*c),
        ScalarField::SphereLat(v) => {
            let c = v[0];
            if v.iter().any(|&x| (x - c).abs() > 1e-12) {
                return Err(LabError::InvalidParameter(
                    "sphere functional calculus requires a constant potential".into(),
                ));
            }
            Ok(c)
        }
        _ => Err(LabError::BackendMismatch("potential does not live on the sphere".into())),
    }
}

fn euclid_scalar_variation(
    v: &SymTensorField,
    h: &ScalarField,
    n: usize,
) -> Result<AnalyticScalar> {
    match v {
        SymTensorField::Zero => {}
        _ => {
            return Err(LabError::BackendMismatch(
                "flat-space variations support only the potential slot".into(),
            ))
        }
    }
    h.euclid_analytic(n)
}

/// Central-difference fall-back for `δ𝓕_k`, `k ≠ 1`: differentiate the
/// functional through the general-metric path (torus) or the potential slot.
fn delta_F_fd(
    m: &ManifoldBackend,
    f: &ScalarField,
    var: &VariationData,
    k: f64,
) -> Result<f64> {
    let eps = 1e-5;
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let fv = f.torus_values(t)?;
            let hv = var.h.torus_values(t)?;
            let len = fv.len();
            let (vxx, vxy, vyy) = match &var.v {
                SymTensorField::Zero => (vec![0.0; len], vec![0.0; len], vec![0.0; len]),
                SymTensorField::TorusGrid { xx, xy, yy } => {
                    (xx.clone(), xy.clone(), yy.clone())
                }
                _ => {
                    return Err(LabError::BackendMismatch(
                        "metric variation does not live on the torus".into(),
                    ))
                }
            };
            let base = Metric2D::from_conformal(t.shape(), &t.u);
            let eval = |sign: f64| -> Result<f64> {
                let g = base.perturbed(&vxx, &vxy, &vyy, sign * eps)?;
                let fp: Vec<f64> =
                    fv.iter().zip(&hv).map(|(a, b)| a + sign * eps * b).collect();
                Ok(eval_F_metric2d(&g, &fp, k))
            };
            Ok((eval(1.0)? - eval(-1.0)?) / (2.0 * eps))
        }
        _ => {
            // analytic backends: only the potential and conformal slots move
            let bump = |sign: f64| -> Result<f64> {
                let fp = perturb_scalar(f, &var.h, sign * eps)?;
                let scaled = match &var.v {
                    SymTensorField::Zero => m.clone(),
                    SymTensorField::SphereConformal(c) => {
                        crate::geometry::rescale(m, 1.0 + sign * eps * c)?
                    }
                    _ => {
                        return Err(LabError::BackendMismatch(
                            "unsupported metric variation for this backend".into(),
                        ))
                    }
                };
                eval_F(&scaled, &fp, k)
            };
            Ok((bump(1.0)? - bump(-1.0)?) / (2.0 * eps))
        }
    }
}

/// `f + ε·h` within one field family.
pub fn perturb_scalar(f: &ScalarField, h: &ScalarField, eps: f64) -> Result<ScalarField> {
    Ok(match (f, h) {
        (ScalarField::Const(a), ScalarField::Const(b)) => ScalarField::Const(a + eps * b),
        (ScalarField::TorusGrid(a), ScalarField::TorusGrid(b)) if a.len() == b.len() => {
            ScalarField::TorusGrid(a.iter().zip(b).map(|(x, y)| x + eps * y).collect())
        }
        (ScalarField::TorusGrid(a), ScalarField::Const(b)) => {
            ScalarField::TorusGrid(a.iter().map(|x| x + eps * b).collect())
        }
        (ScalarField::SphereLat(a), ScalarField::Const(b)) => {
            ScalarField::SphereLat(a.iter().map(|x| x + eps * b).collect())
        }
        (ScalarField::SphereLat(a), ScalarField::SphereLat(b)) if a.len() == b.len() => {
            ScalarField::SphereLat(a.iter().zip(b).map(|(x, y)| x + eps * y).collect())
        }
        (ScalarField::Const(a), ScalarField::SphereLat(b)) => {
            ScalarField::SphereLat(b.iter().map(|y| a + eps * y).collect())
        }
        (ScalarField::EuclidAnalytic(a), h) => {
            let n = 3;
            let hb = h.euclid_analytic(n)?;
            ScalarField::EuclidAnalytic(AnalyticScalar::sum(vec![
                a.clone(),
                scale_analytic(&hb, eps),
            ]))
        }
        (ScalarField::Const(a), ScalarField::EuclidAnalytic(hb)) => {
            ScalarField::EuclidAnalytic(AnalyticScalar::sum(vec![
                AnalyticScalar::constant(*a),
                scale_analytic(hb, eps),
            ]))
        }
        _ => {
            return Err(LabError::BackendMismatch(
                "scalar perturbation families do not match".into(),
            ))
        }
    })
}

fn scale_analytic(a: &AnalyticScalar, c: f64) -> AnalyticScalar {
    let a0 = a.clone();
    let a1 = a.clone();
    let a2 = a.clone();
    AnalyticScalar::with_derivatives(
        move |x| c * a0.value(x),
        move |x| {
            let g = a1.gradient(x);
            [c * g[0], c * g[1], c * g[2]]
        },
        move |x| {
            let h = a2.hessian(x);
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = c * h[i][j];
                }
            }
            out
        },
    )
}
