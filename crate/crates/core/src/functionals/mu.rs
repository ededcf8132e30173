//! The entropy infimum `μ(g, τ)` over compatible potentials, computed by
//! projected gradient descent in the substitution variable
//! `u = (4πτ)^{−n/4} e^{−f/2}` under the constraint `∫ u² dV = 1`.

use crate::error::{LabError, Result};
use crate::functionals::{eval_W, PotentialConfig};
use crate::geometry::{ManifoldBackend, ScalarField, TorusBackend};

use super::spectral::lambda_torus_with_potential;

/// Result of the entropy minimization.
#[derive(Debug, Clone)]
pub struct MuResult {
    pub value: f64,
    /// Minimizing `u`, normalized to `∫ u² dV = 1`.
    pub minimizer: ScalarField,
    /// Equivalent compatible potential `f = −2 ln u − (n/2) ln(4πτ)`.
    pub potential: ScalarField,
    pub iterations: usize,
    pub grad_norm: f64,
    /// False when the iteration cap was reached; the value is then only an
    /// upper bound for the infimum.
    pub converged: bool,
}

const GRAD_TOL: f64 = 1e-7;
const MAX_ITERS: usize = 100_000;

/// Entropy infimum over compatible potentials at scale `τ`.
pub fn mu(m: &ManifoldBackend, tau: f64) -> Result<MuResult> {
    if tau <= 0.0 {
        return Err(LabError::InvalidParameter("tau must be positive".into()));
    }
    match m {
        ManifoldBackend::Euclidean(_) => Err(LabError::BackendMismatch(
            "entropy infimum needs a compact backend".into(),
        )),
        ManifoldBackend::Sphere(s) => {
            // Within the rotationally symmetric class the constant is a
            // critical point: the unconstrained gradient is a multiple of u
            // itself, which the sphere projection removes.
            let v = s.volume();
            let u0 = 1.0 / v.sqrt();
            let n = s.n as f64;
            let f0 = -2.0 * u0.ln() - n / 2.0 * (4.0 * std::f64::consts::PI * tau).ln();
            let cfg = PotentialConfig { f: ScalarField::Const(f0), tau, compatible: true };
            Ok(MuResult {
                value: eval_W(m, &cfg)?,
                minimizer: ScalarField::Const(u0),
                potential: ScalarField::Const(f0),
                iterations: 0,
                grad_norm: 0.0,
                converged: true,
            })
        }
        ManifoldBackend::ConformalTorus(t) => {
            let r = t.scalar_curvature_grid();
            let min = minimize_entropy(t, &r, tau);
            let n = 2.0;
            let log_pref = n / 2.0 * (4.0 * std::f64::consts::PI * tau).ln();
            let f0: Vec<f64> =
                min.u.iter().map(|&v| -2.0 * v.max(1e-300).ln() - log_pref).collect();
            let cfg = PotentialConfig {
                f: ScalarField::TorusGrid(f0.clone()),
                tau,
                compatible: true,
            };
            // report the entropy through the standard evaluation path at the
            // equivalent compatible potential
            let value = eval_W(m, &cfg)?;
            Ok(MuResult {
                value,
                minimizer: ScalarField::TorusGrid(min.u),
                potential: ScalarField::TorusGrid(f0),
                iterations: min.iterations,
                grad_norm: min.grad_norm,
                converged: min.converged,
            })
        }
    }
}

/// Raw output of the torus entropy descent (before entropy re-evaluation).
pub(crate) struct EntropyMinimum {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Discrete objective/gradient pair for the torus minimization. Objective
/// and gradient come from the same discrete quadratic-plus-entropy form, so
/// the line search always sees a descent direction. The zeroth-order
/// potential term `V` is the scalar curvature for the plain entropy and the
/// coupled effective curvature for the extended systems.
struct TorusEntropy<'a> {
    t: &'a TorusBackend,
    tau: f64,
    d: Vec<f64>,    // volume weights e^{2u_g}
    pot: &'a [f64], // zeroth-order potential term V
    cell: f64,      // hx·hy
    offset: f64,    // −(n/2) ln(4πτ) − n
}

impl<'a> TorusEntropy<'a> {
    fn new(t: &'a TorusBackend, pot: &'a [f64], tau: f64) -> Self {
        let n = 2.0;
        let offset = -n / 2.0 * (4.0 * std::f64::consts::PI * tau).ln() - n;
        let shape = t.shape();
        Self { t, tau, d: t.e2u(), pot, cell: shape.hx * shape.hy, offset }
    }

    /// `∫ [−4τ u Δu + τVu² − u² ln u²] dV + offset` (Dirichlet term through
    /// the self-adjoint Laplacian stencil).
    fn objective(&self, u: &[f64]) -> f64 {
        let lap = self.t.shape().lap_flat(u);
        let mut acc = 0.0;
        for i in 0..u.len() {
            let usq = u[i] * u[i];
            let ent = if usq > 0.0 { usq * usq.ln() } else { 0.0 };
            acc += -4.0 * self.tau * u[i] * lap[i]
                + (self.tau * self.pot[i] * usq - ent) * self.d[i];
        }
        acc * self.cell + self.offset
    }

    /// Function-space gradient (w.r.t. the dV inner product).
    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let lap = self.t.shape().lap_flat(u);
        (0..u.len())
            .map(|i| {
                let usq = (u[i] * u[i]).max(1e-300);
                -8.0 * self.tau * lap[i] / self.d[i]
                    + 2.0 * self.tau * self.pot[i] * u[i]
                    - 2.0 * u[i] * usq.ln()
                    - 2.0 * u[i]
            })
            .collect()
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..a.len()).map(|i| a[i] * b[i] * self.d[i]).sum::<f64>() * self.cell
    }

    fn normalize(&self, u: &mut [f64]) {
        let s = self.inner(u, u).sqrt();
        for v in u.iter_mut() {
            *v /= s;
        }
    }
}

/// Projected gradient descent for the substituted entropy on the torus with
/// zeroth-order potential term `V`; multi-start (constant, spectral ground
/// state, heat bump, long wavelength) with the best value kept.
pub(crate) fn minimize_entropy(
    t: &TorusBackend,
    potential_term: &[f64],
    tau: f64,
) -> EntropyMinimum {
    let problem = TorusEntropy::new(t, potential_term, tau);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let shape = t.shape();
    let mut flat = vec![1.0; shape.len()];
    problem.normalize(&mut flat);
    starts.push(flat);
    if let Ok(spec) = lambda_torus_with_potential(t, potential_term) {
        if let ScalarField::TorusGrid(u) = spec.minimizer {
            starts.push(u);
        }
    }
    // The constant is always a critical point of the projected descent (its
    // unconstrained gradient is parallel to the constraint normal), so the
    // starts above can sit on a saddle when small scales favor
    // concentration. Break the symmetry with a heat-kernel-shaped start
    // localized at the domain center and a long-wavelength perturbation of
    // the constant.
    let (lx, ly) = (shape.nx as f64 * shape.hx, shape.ny as f64 * shape.hy);
    let mut bump = shape.from_fn(|x, y| {
        let dx = x - 0.5 * lx;
        let dy = y - 0.5 * ly;
        ((-(dx * dx + dy * dy) / (8.0 * tau)).exp()) + 1e-4
    });
    problem.normalize(&mut bump);
    starts.push(bump);
    let mut wavy = shape.from_fn(|x, y| {
        1.0 + 0.2 * (2.0 * std::f64::consts::PI * x / lx).cos()
            + 0.1 * (2.0 * std::f64::consts::PI * y / ly).sin()
    });
    problem.normalize(&mut wavy);
    starts.push(wavy);

    let mut best: Option<(f64, Vec<f64>, usize, f64, bool)> = None;
    for mut u in starts {
        problem.normalize(&mut u);
        let mut value = problem.objective(&u);
        let mut iterations = 0;
        let mut grad_norm = f64::INFINITY;
        let mut converged = false;
        while iterations < MAX_ITERS {
            iterations += 1;
            let g = problem.gradient(&u);
            let gu = problem.inner(&g, &u);
            let gt: Vec<f64> = (0..g.len()).map(|i| g[i] - gu * u[i]).collect();
            grad_norm = problem.inner(&gt, &gt).sqrt();
            if grad_norm <= GRAD_TOL {
                converged = true;
                break;
            }
            // backtracking line search along the projected direction
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-14 {
                let mut cand: Vec<f64> =
                    (0..u.len()).map(|i| u[i] - step * gt[i]).collect();
                problem.normalize(&mut cand);
                let cand_val = problem.objective(&cand);
                if cand_val < value - 1e-4 * step * grad_norm * grad_norm {
                    u = cand;
                    value = cand_val;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // the line search cannot improve below roundoff; treat the
                // point as converged at the achieved gradient norm
                converged = grad_norm <= 1e2 * GRAD_TOL;
                break;
            }
        }
        let replace = match &best {
            None => true,
            Some((bv, ..)) => value < *bv,
        };
        if replace {
            best = Some((value, u, iterations, grad_norm, converged));
        }
    }
    let (_, u, iterations, grad_norm, converged) = best.unwrap();
    EntropyMinimum { u, iterations, grad_norm, converged }
}
