//! Trace Harnack quantity along L-geodesics, a-priori speed/distance
//! estimates, and the Hessian and Laplacian comparison bounds for the
//! L-distance.

use crate::error::{LabError, Result};
use crate::flow::MetricHistory;
use crate::geometry::Pt;
use crate::util::simpson;

use super::field::{build_field, GeoField};
use super::frame::{transport_frame_in, GEODESIC_TOL};
use super::shoot::{solve_bvp_in, speed_bound};
use super::{check_horizon, geodesic_residual_in, l_length_in, vec3, LPath, DEFAULT_STEPS};

/// Trace Harnack expression sampled along a geodesic, and its τ^{3/2}-weighted
/// integral `K`.
#[derive(Debug, Clone)]
pub struct HarnackData {
    pub tau_bar: f64,
    /// `H(X) = −∂R/∂τ − R/τ − 2⟨∇R, X⟩ + 2Ric(X, X)` at each path sample
    /// (the `τ = 0` value is a cubic extrapolation from the first interior
    /// samples — `H` itself carries a `1/τ` pole that the weighted integral
    /// does not see).
    pub h: Vec<f64>,
    /// `K = ∫₀^{τ̄} τ^{3/2} H dτ`.
    pub k: f64,
}

/// Evaluate the Harnack samples and `K` along a geodesic path.
pub fn harnack_data(bh: &MetricHistory, path: &LPath) -> Result<HarnackData> {
    let f = build_field(bh)?;
    check_horizon(bh, path.tau_bar)?;
    let res = geodesic_residual_in(&f, path);
    if res > GEODESIC_TOL {
        return Err(LabError::NotAGeodesic(res));
    }
    let (h, k) = harnack_k_in(&f, path);
    Ok(HarnackData { tau_bar: path.tau_bar, h, k })
}

/// Harnack samples and `K` without re-validating the path. In `s = √τ` the
/// weighted integrand is entirely regular:
/// `τ^{3/2} H dτ = I(s) ds` with
/// `I(s) = −2s⁴·R_τ − 2s²·R − 2s³⟨∇R, X̂⟩ + s²·Ric(X̂, X̂)`.
pub(crate) fn harnack_k_in(f: &GeoField, path: &LPath) -> (Vec<f64>, f64) {
    let n = path.points.len();
    let mut h = vec![0.0; n];
    let mut integrand = vec![0.0; n];
    for j in 0..n {
        let s = path.s_at(j);
        let pos = &path.points[j];
        let xhat = &path.velocities[j];
        let r_tau = f.r_tau(s, pos);
        let r = f.scalar_r(s, pos);
        let gr = f.grad_r_lower(s, pos);
        let gx = vec3::dotn(&gr, xhat, 3);
        let ric_xx = f.ric(s, pos, xhat, xhat);
        integrand[j] =
            -2.0 * s.powi(4) * r_tau - 2.0 * s * s * r - 2.0 * s.powi(3) * gx
                + s * s * ric_xx;
        if j > 0 {
            let tau = s * s;
            // H in terms of X = X̂/(2s).
            h[j] = -r_tau - r / tau - gx / s + ric_xx / (2.0 * tau);
        }
    }
    if n >= 4 {
        h[0] = 3.0 * h[1] - 3.0 * h[2] + h[3];
    }
    let k = simpson(&integrand, 0.0, path.s_bar());
    (h, k)
}

/// A-priori estimate checks along one geodesic.
#[derive(Debug, Clone)]
pub struct SpeedReport {
    /// Curvature bound used in the estimates.
    pub c0: f64,
    /// The dimensional constant `C(n) = 20n`.
    pub c_n: f64,
    /// `max_j τ_j|X_j|² / bound(τ_j)` over interior samples.
    pub max_ratio: f64,
    pub bound_ok: bool,
    /// Endpoint distance bound: `d²_{g(0)}(p, γ(τ̄))` against
    /// `2√τ̄·e^{2C₀τ̄}(𝓛 + (2n/3)C₀τ̄^{3/2})`.
    pub dist_lhs: f64,
    pub dist_rhs: f64,
    pub dist_bound_ok: bool,
    /// Existence of a moment of controlled speed: `min_j τ_j|X_j|²` against
    /// `𝓛/(2√τ̄) + nC₀τ̄/3`.
    pub some_time_lhs: f64,
    pub some_time_rhs: f64,
    pub some_time_ok: bool,
}

/// Check the a-priori speed and distance estimates along a geodesic with
/// initial velocity `v`.
pub fn speed_bound_check(bh: &MetricHistory, path: &LPath, v: Pt) -> Result<SpeedReport> {
    let f = build_field(bh)?;
    check_horizon(bh, path.tau_bar)?;
    let res = geodesic_residual_in(&f, path);
    if res > GEODESIC_TOL {
        return Err(LabError::NotAGeodesic(res));
    }
    let c0 = f.c0();
    let n = f.dim();
    let tau_bar = path.tau_bar;
    let s_bar = path.s_bar();
    let v_norm_sq = f.dot(0.0, &path.points[0], &v, &v);

    let mut max_ratio: f64 = 0.0;
    let mut min_speed = f64::INFINITY;
    for j in 1..path.points.len() {
        let s = path.s_at(j);
        let tau = s * s;
        let speed = 0.25 * f.dot(s, &path.points[j], &path.velocities[j], &path.velocities[j]);
        min_speed = min_speed.min(speed);
        let bound = speed_bound(c0, n, tau_bar, v_norm_sq, tau);
        if bound.is_finite() && bound > 0.0 {
            max_ratio = max_ratio.max(speed / bound);
        }
    }

    let big_l = l_length_in(&f, path)?;
    let dist = distance_at_zero(&f, &path.points[0], &path.endpoint());
    let dist_lhs = dist * dist;
    let dist_rhs = 2.0 * s_bar
        * (2.0 * c0 * tau_bar).exp()
        * (big_l + 2.0 * n as f64 * c0 / 3.0 * tau_bar * s_bar);
    let some_time_lhs = min_speed;
    let some_time_rhs = big_l / (2.0 * s_bar) + n as f64 * c0 * tau_bar / 3.0;
    let tol = 1e-9;
    Ok(SpeedReport {
        c0,
        c_n: 20.0 * n as f64,
        max_ratio,
        bound_ok: max_ratio <= 1.0 + tol,
        dist_lhs,
        dist_rhs,
        dist_bound_ok: dist_lhs <= dist_rhs * (1.0 + tol) + tol,
        some_time_lhs,
        some_time_rhs,
        some_time_ok: some_time_lhs <= some_time_rhs * (1.0 + tol) + tol,
    })
}

/// Geodesic distance in the `τ = 0` metric (flat norm; arc length on the
/// sphere; on the torus the straight-segment length, an upper estimate that
/// only makes the distance check stricter).
fn distance_at_zero(f: &GeoField, p: &Pt, q: &Pt) -> f64 {
    let disp = f.displacement(p, q);
    match f {
        GeoField::Euclid { .. } => vec3::norm_flat(&disp),
        GeoField::Sphere { .. } => f.dot(0.0, p, &disp, &disp).sqrt(),
        GeoField::Torus(_) => {
            let m = 24;
            (0..m)
                .map(|k| {
                    let t = (k as f64 + 0.5) / m as f64;
                    let mid = vec3::axpy(t, &disp, p);
                    f.dot(0.0, &mid, &disp, &disp).sqrt() / m as f64
                })
                .sum()
        }
    }
}

/// One direction of the Hessian comparison bound.
#[derive(Debug, Clone)]
pub struct HessianDirection {
    /// Numeric `Hess L(Y, Y)` for the unit transport-frame direction `Y`.
    pub hess: f64,
    /// `1/√τ̄ − 2√τ̄·Ric(Y, Y) − ∫ 2s²Q(Z) ds`.
    pub rhs: f64,
    /// `rhs − hess` (nonnegative up to discretization when the bound holds).
    pub slack: f64,
}

/// Hessian and Laplacian comparison bounds for `L(·, τ̄)` at one target.
#[derive(Debug, Clone)]
pub struct HessianReport {
    pub tau_bar: f64,
    pub directions: Vec<HessianDirection>,
    /// Numeric `ΔL` (trace of the directional Hessians over the orthonormal
    /// transport frame).
    pub lap: f64,
    /// `n/√τ̄ − 2√τ̄R − K/τ̄`.
    pub lap_rhs: f64,
    pub lap_slack: f64,
    /// Weighted Harnack integral of the minimizer.
    pub k: f64,
    /// False when the target ties two distinct minimizers (`L` then need not
    /// be twice differentiable and the pointwise bounds are meaningless).
    pub smooth: bool,
}

/// Finite-difference step for the second derivatives of `L` in the target.
const FD_H: f64 = 0.05;

/// Check `Hess L ≤ RHS` direction-by-direction over the transported
/// orthonormal frame, and the traced Laplacian bound, at target `q`.
pub fn hessian_bound_check(
    bh: &MetricHistory,
    p: Pt,
    q: Pt,
    tau_bar: f64,
) -> Result<HessianReport> {
    let f = build_field(bh)?;
    check_horizon(bh, tau_bar)?;
    let steps = DEFAULT_STEPS;
    let sol = solve_bvp_in(&f, &p, &q, tau_bar, steps)?;
    let path = &sol.path;
    let s_bar = tau_bar.sqrt();
    let end = path.endpoint();
    let (_, k) = harnack_k_in(&f, path);
    let fb = transport_frame_in(&f, path)?;

    // Second differences of L along each coordinate axis the solve moves in.
    let l0 = sol.l_value;
    let sd = f.shoot_dim();
    let mut d1 = [0.0; 3];
    let mut d2 = [0.0; 3];
    for a in 0..sd {
        let mut qp = end;
        let mut qm = end;
        qp[a] += FD_H;
        qm[a] -= FD_H;
        let lp = solve_bvp_in(&f, &p, &qp, tau_bar, steps)?.l_value;
        let lm = solve_bvp_in(&f, &p, &qm, tau_bar, steps)?.l_value;
        d1[a] = (lp - lm) / (2.0 * FD_H);
        d2[a] = (lp - 2.0 * l0 + lm) / (FD_H * FD_H);
    }

    let n_samples = path.points.len();
    let mut directions = Vec::with_capacity(f.dim());
    for i in 0..f.dim() {
        let y_end = fb.frames[i][n_samples - 1];
        let hess = match &f {
            GeoField::Euclid { .. } => d2[i],
            GeoField::Sphere { n, .. } => {
                let r2_bar = f.dot(s_bar, &end, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
                let _ = n;
                if i == 0 {
                    d2[0] / r2_bar
                } else {
                    // L depends on the polar angle only; the transverse
                    // Hessian is the rotational term cotθ·L′(θ)/r².
                    let theta = end[0];
                    theta.cos() / theta.sin() * d1[0] / r2_bar
                }
            }
            GeoField::Torus(_) => {
                // Covariant correction: Hess(Y,Y) = Y^aY^b(∂_a∂_bL − Γ^k_ab∂_kL)
                // with Y = c·e_i along a coordinate axis.
                let mut e = [0.0; 3];
                e[i] = 1.0;
                let gamma = f.christoffel(s_bar, &end, &e, &e);
                let c2 = vec3::dotn(&y_end, &y_end, 2);
                c2 * (d2[i] - gamma[0] * d1[0] - gamma[1] * d1[1])
            }
        };
        let vals: Vec<f64> = (0..n_samples)
            .map(|j| {
                f.q_weighted(path.s_at(j), &path.points[j], &path.velocities[j], &fb.zs[i][j])
            })
            .collect();
        let q_int = simpson(&vals, 0.0, s_bar);
        let rhs = 1.0 / s_bar - 2.0 * s_bar * f.ric(s_bar, &end, &y_end, &y_end) - q_int;
        directions.push(HessianDirection { hess, rhs, slack: rhs - hess });
    }

    let lap: f64 = directions.iter().map(|d| d.hess).sum();
    let lap_rhs =
        f.dim() as f64 / s_bar - 2.0 * s_bar * f.scalar_r(s_bar, &end) - k / tau_bar;
    Ok(HessianReport {
        tau_bar,
        directions,
        lap,
        lap_rhs,
        lap_slack: lap_rhs - lap,
        k,
        smooth: sol.smooth,
    })
}
