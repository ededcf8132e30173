//! Entropy quantities of the weighted diffusion operator
//! `L = Δ − ∇φ·∇` with measure `dμ = e^{−φ} dV`, and its Bakry-Émery
//! curvature tensor.

use crate::error::{LabError, Result};
use crate::geometry::{
    hessian, integrate, ManifoldBackend, ScalarField, SymTensorField,
};

/// A manifold with a weight potential `φ` and dimension parameter `m > n`.
#[derive(Debug, Clone)]
pub struct WeightedOperator {
    pub backend: ManifoldBackend,
    pub phi: ScalarField,
    pub m: f64,
}

impl WeightedOperator {
    pub fn new(backend: ManifoldBackend, phi: ScalarField, m: f64) -> Result<Self> {
        if m <= backend.dimension() as f64 {
            return Err(LabError::InvalidParameter(format!(
                "dimension parameter m = {m} must exceed n = {}",
                backend.dimension()
            )));
        }
        Ok(Self { backend, phi, m })
    }

    /// `∫ ψ dμ = ∫ ψ e^{−φ} dV`.
    pub fn integrate_mu(&self, psi: &[f64]) -> Result<f64> {
        let t = self.backend.expect_torus()?;
        let phi = self.phi.torus_values(t)?;
        let weighted: Vec<f64> =
            psi.iter().zip(&phi).map(|(p, w)| p * (-w).exp()).collect();
        integrate(&self.backend, &ScalarField::TorusGrid(weighted))
    }
}

/// Nash-type and scale-corrected entropies of a density `u` with
/// `∫ u dμ = 1`:
/// `H_m = −∫ u ln u dμ − (m/2)(ln(4πt) + 1)` and
/// `𝒲 = ∫ (t|∇f|² + f − m) e^{−f} (4πt)^{−m/2} dμ` with
/// `u = (4πt)^{−m/2} e^{−f}`. The sign of the `u ln u` term is fixed by the
/// differential identity `𝒲 = d/dt (t·H_m)` along the heat flow, which both
/// quantities must satisfy (it fails for the opposite sign already on the
/// Gauss kernel, where `𝒲 ≡ 0`).
pub fn diffusion_entropy(
    w: &WeightedOperator,
    u: &ScalarField,
    t: f64,
) -> Result<(f64, f64)> {
    if t <= 0.0 {
        return Err(LabError::InvalidParameter("entropy time must be positive".into()));
    }
    let tor = w.backend.expect_torus()?;
    let uv = u.torus_values(tor)?;
    if uv.iter().any(|&x| x <= 0.0) {
        return Err(LabError::InvalidParameter("density must be positive".into()));
    }
    let mass = w.integrate_mu(&uv)?;
    if (mass - 1.0).abs() > 1e-8 {
        return Err(LabError::Incompatible { mass });
    }
    let log_pref = w.m / 2.0 * (4.0 * std::f64::consts::PI * t).ln();
    let ulogu: Vec<f64> = uv.iter().map(|&x| x * x.ln()).collect();
    let h_m = -w.integrate_mu(&ulogu)? - log_pref - w.m / 2.0;

    // f defined through u = (4πt)^{−m/2} e^{−f}
    let f: Vec<f64> = uv.iter().map(|&x| -x.ln() - log_pref).collect();
    let gsq = crate::geometry::grad_norm_sq(
        &w.backend,
        &ScalarField::TorusGrid(f.clone()),
    )?;
    let gv = gsq.torus_values(tor)?;
    let integrand: Vec<f64> = (0..uv.len())
        .map(|i| (t * gv[i] + f[i] - w.m) * uv[i])
        .collect();
    let entropy_w = w.integrate_mu(&integrand)?;
    Ok((h_m, entropy_w))
}

/// Heat evolution `∂u/∂t = Lu` on the fixed weighted torus, written in the
/// divergence form `Lu = e^{−2u_g} e^{φ} ∇·(e^{−φ}∇u)` so that the total
/// mass `∫ u dμ` is a discretely exact invariant (antisymmetric first
/// derivative stencils). Returns the states at each stored step.
pub fn evolve_heat(
    w: &WeightedOperator,
    u0: &ScalarField,
    t_total: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if steps == 0 || t_total <= 0.0 {
        return Err(LabError::InvalidParameter("need positive time and steps".into()));
    }
    let tor = w.backend.expect_torus()?;
    let shape = tor.shape();
    let phi = w.phi.torus_values(tor)?;
    let em_phi: Vec<f64> = phi.iter().map(|&p| (-p).exp()).collect();
    let e_phi: Vec<f64> = phi.iter().map(|&p| p.exp()).collect();
    let em2u = tor.em2u();
    let rhs = |u: &[f64]| -> Vec<f64> {
        let ux = shape.dx(u);
        let uy = shape.dy(u);
        let fx: Vec<f64> = ux.iter().zip(&em_phi).map(|(a, b)| a * b).collect();
        let fy: Vec<f64> = uy.iter().zip(&em_phi).map(|(a, b)| a * b).collect();
        let div_x = shape.dx(&fx);
        let div_y = shape.dy(&fy);
        (0..u.len())
            .map(|i| em2u[i] * e_phi[i] * (div_x[i] + div_y[i]))
            .collect()
    };
    let h = shape.hx.min(shape.hy);
    let weight_floor = (0..phi.len())
        .map(|i| 1.0 / (em2u[i] * e_phi[i] * em_phi[i]).max(1e-300))
        .fold(f64::INFINITY, f64::min);
    let dt_limit = 0.1 * h * h * weight_floor;
    let dt = t_total / steps as f64;
    if dt > dt_limit {
        return Err(LabError::CflViolation { dt, limit: dt_limit });
    }
    let mut u = u0.torus_values(tor)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(u.clone());
    for _ in 0..steps {
        let k1 = rhs(&u);
        let k2 = rhs(&axpy(&u, &k1, 0.5 * dt));
        let k3 = rhs(&axpy(&u, &k2, 0.5 * dt));
        let k4 = rhs(&axpy(&u, &k3, dt));
        for i in 0..u.len() {
            u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(u.clone());
    }
    Ok(out)
}

/// The Bakry-Émery curvature `Ric_{m,n} = Ric + ∇²φ − (∇φ⊗∇φ)/(m − n)`.
pub fn bakry_emery(w: &WeightedOperator) -> Result<SymTensorField> {
    let n = w.backend.dimension() as f64;
    let denom = w.m - n;
    match &w.backend {
        ManifoldBackend::Euclidean(b) => {
            match &w.phi {
                ScalarField::Const(_) => Ok(SymTensorField::Zero),
                _ => {
                    let phi = w.phi.euclid_analytic(b.n)?;
                    let nn = b.n;
                    Ok(SymTensorField::EuclidAnalytic(crate::geometry::AnalyticTensor(
                        std::sync::Arc::new(move |x| {
                            let h = phi.hessian(x);
                            let g = phi.gradient(x);
                            let mut out = [[0.0; 3]; 3];
                            for i in 0..nn {
                                for j in 0..nn {
                                    out[i][j] = h[i][j] - g[i] * g[j] / denom;
                                }
                            }
                            out
                        }),
                    )))
                }
            }
        }
        ManifoldBackend::Sphere(s) => match &w.phi {
            ScalarField::Const(_) => Ok(SymTensorField::SphereConformal(
                (s.n as f64 - 1.0) / (s.radius * s.radius),
            )),
            _ => Err(LabError::BackendMismatch(
                "sphere weight potentials must be constant".into(),
            )),
        },
        ManifoldBackend::ConformalTorus(t) => {
            let shape = t.shape();
            let phi = w.phi.torus_values(t)?;
            let (hxx, hxy, hyy) =
                match hessian(&w.backend, &ScalarField::TorusGrid(phi.clone()))? {
                    SymTensorField::TorusGrid { xx, xy, yy } => (xx, xy, yy),
                    SymTensorField::Zero => {
                        let z = vec![0.0; phi.len()];
                        (z.clone(), z.clone(), z)
                    }
                    _ => unreachable!(),
                };
            let px = shape.dx(&phi);
            let py = shape.dy(&phi);
            let r = t.scalar_curvature_grid();
            let e2u = t.e2u();
            let mut xx = Vec::with_capacity(phi.len());
            let mut xy = Vec::with_capacity(phi.len());
            let mut yy = Vec::with_capacity(phi.len());
            for i in 0..phi.len() {
                let ric = 0.5 * r[i] * e2u[i];
                xx.push(ric + hxx[i] - px[i] * px[i] / denom);
                xy.push(hxy[i] - px[i] * py[i] / denom);
                yy.push(ric + hyy[i] - py[i] * py[i] / denom);
            }
            Ok(SymTensorField::TorusGrid { xx, xy, yy })
        }
    }
}

/// Pointwise minimum eigenvalue of the Bakry-Émery tensor with respect to
/// the metric (smallest eigenvalue of `g^{−1}·Ric_{m,n}` over all nodes).
pub fn bakry_emery_floor(w: &WeightedOperator) -> Result<f64> {
    match bakry_emery(w)? {
        SymTensorField::Zero => Ok(0.0),
        SymTensorField::SphereConformal(c) => Ok(c),
        SymTensorField::TorusGrid { xx, xy, yy } => {
            let t = w.backend.expect_torus()?;
            let em2u = t.em2u();
            let mut floor = f64::INFINITY;
            for i in 0..xx.len() {
                let tr = 0.5 * (xx[i] + yy[i]);
                let dev = 0.5 * (xx[i] - yy[i]);
                let low = em2u[i] * (tr - (dev * dev + xy[i] * xy[i]).sqrt());
                floor = floor.min(low);
            }
            Ok(floor)
        }
        SymTensorField::EuclidAnalytic(_) => Err(LabError::BackendMismatch(
            "pointwise floor is reported on grid backends".into(),
        )),
    }
}

fn axpy(base: &[f64], delta: &[f64], c: f64) -> Vec<f64> {
    base.iter().zip(delta).map(|(b, d)| b + c * d).collect()
}
