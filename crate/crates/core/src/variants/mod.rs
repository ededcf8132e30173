//! Coupled extensions of the Ricci flow on the conformal torus:
//!
//! * [`list`] — the flow coupled to a scalar (dilaton-type) field, where the
//!   scalar curvature and Ricci tensor are replaced by `S = R − 2|∇φ|²` and
//!   `S_ij = R_ij − 2∂_iφ∂_jφ` throughout the energy/entropy machinery;
//! * [`rym`] — the Ricci Yang-Mills system for an abelian connection on a
//!   (trivial) circle bundle over the torus, where the curvature 2-form
//!   enters with `−¼|F|²` in the energy and `+¼|F|²` in the entropy.
//!
//! Both reuse the plain-flow building blocks (stencils, entropy descent,
//! eigensolver, history interpolation) so that the `φ ≡ const` / `A ≡ 0`
//! reductions reproduce the plain results bit for bit.

pub mod list;
pub mod rym;

pub use list::{
    evolve_list_potential, eval_W_list, mu_list, production_W_list, run_list,
    step_list, ListConfig, ListHistory, ListPotentialSample, ListState,
};
pub use rym::{
    delta_F_rym, delta_W_rym, dW_dt_rym, eval_F_rym, eval_F_rym_metric2d,
    eval_W_rym, eval_W_rym_metric2d, evolve_rym_potential, lambda_rym,
    low_energy_check, production_F_rym, run_rym, step_rym, LowEnergyReport,
    LowEnergySample, RymHistory, RymPotentialMode, RymPotentialSample, RymState,
    RymVariation,
};

use crate::error::{LabError, Result};
use crate::geometry::TorusBackend;

/// Tolerance on `|∫(4πτ)^{−n/2}e^{−f}dV − 1|` for potentials fed to the
/// entropy evaluations.
pub(crate) const MASS_TOL: f64 = 1e-6;

pub(crate) fn check_grid(t: &TorusBackend, v: &[f64], what: &str) -> Result<()> {
    if v.len() != t.shape().len() {
        return Err(LabError::BackendMismatch(format!(
            "{what} length {} != grid {}",
            v.len(),
            t.shape().len()
        )));
    }
    Ok(())
}

/// `∫ (4πτ)^{−n/2} e^{−f} dV` on the torus (n = 2).
pub(crate) fn weighted_mass(t: &TorusBackend, f: &[f64], tau: f64) -> f64 {
    let pref = 1.0 / (4.0 * std::f64::consts::PI * tau);
    let e2u = t.e2u();
    let vals: Vec<f64> =
        f.iter().zip(&e2u).map(|(&fi, &w)| pref * (-fi).exp() * w).collect();
    t.shape().cell_sum(&vals)
}

/// Shift `f` by a constant so the weighted mass is exactly one.
pub(crate) fn normalize_torus_potential(
    t: &TorusBackend,
    f: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("tau must be positive".into()));
    }
    check_grid(t, f, "potential")?;
    let mass = weighted_mass(t, f, tau);
    if !mass.is_finite() || mass <= 0.0 {
        return Err(LabError::Incompatible { mass });
    }
    let c = mass.ln();
    Ok(f.iter().map(|x| x + c).collect())
}

pub(crate) fn check_mass(t: &TorusBackend, f: &[f64], tau: f64) -> Result<()> {
    let mass = weighted_mass(t, f, tau);
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(LabError::Incompatible { mass });
    }
    Ok(())
}

pub(crate) fn add_scaled(base: &[f64], delta: &[f64], c: f64) -> Vec<f64> {
    base.iter().zip(delta).map(|(b, d)| b + c * d).collect()
}
