//! L-geodesic calculus along backward Ricci-flow histories: the L-length
//! functional, geodesic shooting and two-point solves, reduced distance and
//! its differential identities, Harnack quantities, transport frames, Jacobi
//! fields, Hessian/Laplacian bounds and the reduced volume.
//!
//! Every path integral is parametrized by `s = √τ`, which turns the `1/(2τ)`
//! drift of the geodesic equation into a regular initial-value problem: the
//! limit `v = lim_{τ→0} √τ·dγ/dτ` becomes the plain initial condition
//! `X̂(0) = 2v` for the `s`-velocity `X̂ = dγ/ds`.

mod field;
mod frame;
mod harnack;
mod reduced;
mod shoot;

pub use frame::{ljacobi, transport_frame, FrameBundle, JacobiField};
pub use harnack::{
    harnack_data, hessian_bound_check, speed_bound_check, HarnackData, HessianDirection,
    HessianReport, SpeedReport,
};
pub use reduced::{
    identity_residuals, reduced_volume, reduced_volume_balance, scalar_floor_report,
    BalanceReport, IdentityConfig, IdentityReport, ReducedVolumeConfig, VTildeEntry,
};
pub use shoot::{
    reduced_field, shoot, shoot_with_steps, solve_bvp, solve_bvp_full, BvpSolution,
    ReducedField, ReducedPoint,
};

use crate::error::{LabError, Result};
use crate::flow::MetricHistory;
use crate::geometry::{ManifoldBackend, Pt};
use crate::util::simpson;

pub(crate) use field::{build_field, GeoField};

/// Default number of RK4 steps for geodesic integration (samples = steps+1,
/// odd, as the composite Simpson rule requires).
pub const DEFAULT_STEPS: usize = 256;

/// Small fixed-size vector helpers shared by the module (points and tangent
/// vectors are `[f64; 3]` with trailing zeros in lower dimensions).
pub(crate) mod vec3 {
    use crate::geometry::Pt;

    #[inline]
    pub fn dotn(a: &Pt, b: &Pt, n: usize) -> f64 {
        a[..n].iter().zip(&b[..n]).map(|(x, y)| x * y).sum()
    }

    #[inline]
    pub fn scale(a: &Pt, c: f64) -> Pt {
        [c * a[0], c * a[1], c * a[2]]
    }

    #[inline]
    pub fn add(a: &Pt, b: &Pt) -> Pt {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    #[inline]
    pub fn sub(a: &Pt, b: &Pt) -> Pt {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    /// `c·x + y`.
    #[inline]
    pub fn axpy(c: f64, x: &Pt, y: &Pt) -> Pt {
        [c * x[0] + y[0], c * x[1] + y[1], c * x[2] + y[2]]
    }

    #[inline]
    pub fn norm_flat(a: &Pt) -> f64 {
        dotn(a, a, 3).sqrt()
    }
}

/// A path sampled uniformly in `s = √τ ∈ [0, √τ̄]`.
///
/// `points[0]` is the base point (the `τ = 0` end); `velocities[j]` stores
/// `X̂(s_j) = dγ/ds`, which is finite at `s = 0` (it equals `2v` there).
/// On the sphere, paths run along a meridian through the base point:
/// `points[j][0]` is the polar angle, and vectors along the path carry
/// components in the parallel orthonormal frame of the unit sphere.
/// Torus coordinates are kept continuous (not reduced mod the periods) so
/// that finite differences along the path stay meaningful; all evaluations
/// wrap internally and endpoint comparisons use wrapped displacements.
#[derive(Debug, Clone)]
pub struct LPath {
    /// Backward horizon `τ̄` of the path.
    pub tau_bar: f64,
    /// Samples `γ(s_j)`, `s_j = j·√τ̄/steps`.
    pub points: Vec<Pt>,
    /// Velocities `X̂(s_j) = dγ/ds`.
    pub velocities: Vec<Pt>,
    /// Manifold dimension.
    pub dim: usize,
}

impl LPath {
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn s_bar(&self) -> f64 {
        self.tau_bar.sqrt()
    }

    pub fn ds(&self) -> f64 {
        self.s_bar() / self.steps() as f64
    }

    pub fn s_at(&self, j: usize) -> f64 {
        j as f64 * self.ds()
    }

    /// Endpoint `γ(τ̄)` (unwrapped coordinates).
    pub fn endpoint(&self) -> Pt {
        *self.points.last().unwrap()
    }

    /// Initial velocity `v = lim √τ·dγ/dτ = X̂(0)/2`.
    pub fn initial_velocity(&self) -> Pt {
        vec3::scale(&self.velocities[0], 0.5)
    }

    fn check_quadrature(&self) -> Result<()> {
        if self.points.len() < 3 || self.points.len() % 2 == 0 {
            return Err(LabError::InvalidParameter(
                "path needs an odd sample count >= 3 (even number of s-steps)".into(),
            ));
        }
        if self.points.len() != self.velocities.len() {
            return Err(LabError::InvalidParameter(
                "path points and velocities differ in length".into(),
            ));
        }
        Ok(())
    }
}

/// L-length in the `s`-form: `𝓛(γ) = ∫₀^{√τ̄} (½|X̂|² + 2s²R) ds`,
/// by composite Simpson quadrature on the path's own sample grid.
pub fn l_length(bh: &MetricHistory, path: &LPath) -> Result<f64> {
    let f = build_field(bh)?;
    check_horizon(bh, path.tau_bar)?;
    l_length_in(&f, path)
}

pub(crate) fn l_length_in(f: &GeoField, path: &LPath) -> Result<f64> {
    path.check_quadrature()?;
    if f.dim() != path.dim {
        return Err(LabError::BackendMismatch(format!(
            "path dimension {} vs backend dimension {}",
            path.dim,
            f.dim()
        )));
    }
    let vals: Vec<f64> = (0..path.points.len())
        .map(|j| {
            let s = path.s_at(j);
            let p = &path.points[j];
            let x = &path.velocities[j];
            0.5 * f.dot(s, p, x, x) + 2.0 * s * s * f.scalar_r(s, p)
        })
        .collect();
    Ok(simpson(&vals, 0.0, path.s_bar()))
}

pub(crate) fn check_horizon(bh: &MetricHistory, tau_bar: f64) -> Result<()> {
    let hi = bh.duration();
    if tau_bar <= 0.0 || tau_bar > hi * (1.0 + 1e-12) + 1e-15 {
        return Err(LabError::OutOfRange { t: tau_bar, lo: 0.0, hi });
    }
    Ok(())
}

/// Classical Dirichlet energy `E(γ) = ½∫₀¹ |dγ/dt|² dt` of the path read as
/// a map from the unit interval into a *fixed* metric (no history); its
/// infimum over paths between two points is half the squared distance.
pub fn dirichlet_energy(m: &ManifoldBackend, path: &LPath) -> Result<f64> {
    path.check_quadrature()?;
    let s_bar = path.s_bar();
    // With t = s/√τ̄: E = (√τ̄/2)·∫ |X̂|² ds.
    let vals: Vec<f64> = (0..path.points.len())
        .map(|j| static_dot(m, &path.points[j], &path.velocities[j], &path.velocities[j]))
        .collect::<Result<_>>()?;
    Ok(0.5 * s_bar * simpson(&vals, 0.0, s_bar))
}

/// Inner product of tangent components in a fixed (time-independent) metric.
fn static_dot(m: &ManifoldBackend, pos: &Pt, a: &Pt, b: &Pt) -> Result<f64> {
    Ok(match m {
        ManifoldBackend::Euclidean(e) => vec3::dotn(a, b, e.n),
        ManifoldBackend::Sphere(s) => s.radius * s.radius * vec3::dotn(a, b, s.n),
        ManifoldBackend::ConformalTorus(t) => {
            let u = crate::geometry::interp::sample_periodic(
                &t.shape(),
                &t.u,
                pos[0],
                pos[1],
            );
            (2.0 * u).exp() * (a[0] * b[0] + a[1] * b[1])
        }
    })
}

/// Sup-norm residual of the `s`-form Euler-Lagrange equation
/// `E(s) = dX̂/ds + Γ(X̂,X̂) − 2s²(∇R)♯ + 4s·Ric(X̂,·)♯` along the path,
/// with `dX̂/ds` from fourth-order finite differences of the stored
/// velocities. Zero (to integration error) exactly on geodesics.
pub fn geodesic_residual(bh: &MetricHistory, path: &LPath) -> Result<f64> {
    let f = build_field(bh)?;
    check_horizon(bh, path.tau_bar)?;
    Ok(geodesic_residual_in(&f, path))
}

pub(crate) fn geodesic_residual_in(f: &GeoField, path: &LPath) -> f64 {
    let n = path.points.len();
    let h = path.ds();
    let mut worst: f64 = 0.0;
    for j in 2..n.saturating_sub(2) {
        let s = path.s_at(j);
        let v = &path.velocities;
        let mut dv = [0.0; 3];
        for c in 0..3 {
            dv[c] = (-v[j + 2][c] + 8.0 * v[j + 1][c] - 8.0 * v[j - 1][c] + v[j - 2][c])
                / (12.0 * h);
        }
        let e = vec3::sub(&dv, &f.accel(s, &path.points[j], &path.velocities[j]));
        worst = worst.max(f.norm(s, &path.points[j], &e));
    }
    worst
}

/// Cubic Hermite interpolation of a stored path: positions use the stored
/// velocities as derivatives, velocities use the field acceleration. Used by
/// the frame/Jacobi integrators to evaluate the geodesic at RK4 half-steps.
pub(crate) struct PathInterp<'a> {
    path: &'a LPath,
    accels: Vec<Pt>,
}

impl<'a> PathInterp<'a> {
    pub fn new(f: &GeoField, path: &'a LPath) -> Self {
        let accels = (0..path.points.len())
            .map(|j| f.accel(path.s_at(j), &path.points[j], &path.velocities[j]))
            .collect();
        Self { path, accels }
    }

    /// `(γ(s), X̂(s))` anywhere on `[0, √τ̄]`.
    pub fn eval(&self, s: f64) -> (Pt, Pt) {
        let h = self.path.ds();
        let n = self.path.points.len();
        let pos = (s / h).clamp(0.0, (n - 1) as f64);
        let j = (pos.floor() as usize).min(n - 2);
        let t = pos - j as f64;
        if t == 0.0 {
            return (self.path.points[j], self.path.velocities[j]);
        }
        let (h00, h10, h01, h11) = hermite_weights(t);
        let mut p = [0.0; 3];
        let mut x = [0.0; 3];
        for c in 0..3 {
            let (p0, p1) = (self.path.points[j][c], self.path.points[j + 1][c]);
            let (v0, v1) = (self.path.velocities[j][c], self.path.velocities[j + 1][c]);
            let (a0, a1) = (self.accels[j][c], self.accels[j + 1][c]);
            p[c] = h00 * p0 + h10 * h * v0 + h01 * p1 + h11 * h * v1;
            // Hermite on the velocity with the field acceleration as slope
            // keeps position and velocity each fourth-order accurate.
            x[c] = h00 * v0 + h10 * h * a0 + h01 * v1 + h11 * h * a1;
        }
        (p, x)
    }
}

#[inline]
fn hermite_weights(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

#[cfg(test)]
mod tests;
