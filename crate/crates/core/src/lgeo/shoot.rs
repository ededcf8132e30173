//! Geodesic shooting, two-point boundary-value solves and the reduced
//! distance field.

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::flow::MetricHistory;
use crate::geometry::Pt;
use crate::util::fmt17;

use super::field::{build_field, GeoField};
use super::{check_horizon, l_length_in, vec3, LPath, DEFAULT_STEPS};

/// Integrate the `s`-form geodesic equation from `(p, X̂(0) = 2v)` with the
/// default step count.
pub fn shoot(bh: &MetricHistory, p: Pt, v: Pt, tau_bar: f64) -> Result<LPath> {
    shoot_with_steps(bh, p, v, tau_bar, DEFAULT_STEPS)
}

/// As [`shoot`] with an explicit (even) number of RK4 steps.
pub fn shoot_with_steps(
    bh: &MetricHistory,
    p: Pt,
    v: Pt,
    tau_bar: f64,
    steps: usize,
) -> Result<LPath> {
    let f = build_field(bh)?;
    check_horizon(bh, tau_bar)?;
    shoot_in(&f, &p, &v, tau_bar, steps)
}

/// A-priori speed bound along L-geodesics (existence-theorem form with the
/// explicit constant choice `C(n) = 20n`): for `τ < T`,
/// `τ|X|² ≤ e^{6C₀T}|v|² + C(n)·T/min{T−τ, C₀⁻¹}·(e^{6C₀T} − 1)`.
pub(crate) fn speed_bound(
    c0: f64,
    n: usize,
    horizon: f64,
    v_norm_sq: f64,
    tau: f64,
) -> f64 {
    let grow = (6.0 * c0 * horizon).exp();
    let first = grow * v_norm_sq;
    if c0 == 0.0 {
        return first;
    }
    let window = (horizon - tau).min(1.0 / c0);
    if window <= 0.0 {
        return f64::INFINITY;
    }
    first + 20.0 * n as f64 * horizon / window * (grow - 1.0)
}

pub(crate) fn shoot_in(
    f: &GeoField,
    p: &Pt,
    v: &Pt,
    tau_bar: f64,
    steps: usize,
) -> Result<LPath> {
    if steps < 2 || steps % 2 != 0 {
        return Err(LabError::InvalidParameter(
            "step count must be even and >= 2".into(),
        ));
    }
    let s_bar = tau_bar.sqrt();
    let h = s_bar / steps as f64;
    let c0 = f.c0();
    let n = f.dim();
    let v_norm_sq = f.dot(0.0, p, v, v);
    let mut pos = *p;
    let mut xhat = vec3::scale(v, 2.0);
    let mut points = Vec::with_capacity(steps + 1);
    let mut velocities = Vec::with_capacity(steps + 1);
    points.push(pos);
    velocities.push(xhat);
    for j in 0..steps {
        let s = j as f64 * h;
        // Classical RK4 on the first-order system (γ, X̂).
        let a1 = f.accel(s, &pos, &xhat);
        let k1 = (xhat, a1);
        let p2 = vec3::axpy(0.5 * h, &k1.0, &pos);
        let x2 = vec3::axpy(0.5 * h, &k1.1, &xhat);
        let k2 = (x2, f.accel(s + 0.5 * h, &p2, &x2));
        let p3 = vec3::axpy(0.5 * h, &k2.0, &pos);
        let x3 = vec3::axpy(0.5 * h, &k2.1, &xhat);
        let k3 = (x3, f.accel(s + 0.5 * h, &p3, &x3));
        let p4 = vec3::axpy(h, &k3.0, &pos);
        let x4 = vec3::axpy(h, &k3.1, &xhat);
        let k4 = (x4, f.accel(s + h, &p4, &x4));
        for c in 0..3 {
            pos[c] += h / 6.0 * (k1.0[c] + 2.0 * k2.0[c] + 2.0 * k3.0[c] + k4.0[c]);
            xhat[c] += h / 6.0 * (k1.1[c] + 2.0 * k2.1[c] + 2.0 * k3.1[c] + k4.1[c]);
        }
        let s_next = (j + 1) as f64 * h;
        // Abort on clear blow-up: 10× the a-priori bound on τ|X|² = |X̂|²/4.
        let tau = s_next * s_next;
        let speed = 0.25 * f.dot(s_next, &pos, &xhat, &xhat);
        let bound = speed_bound(c0, n, tau_bar, v_norm_sq, tau);
        if speed > 10.0 * bound + 1e3 {
            return Err(LabError::SpeedBlowUp(format!(
                "tau|X|^2 = {speed:.3e} at tau = {tau:.4e} exceeds 10x bound {bound:.3e}"
            )));
        }
        points.push(pos);
        velocities.push(xhat);
    }
    Ok(LPath { tau_bar, points, velocities, dim: f.dim() })
}

/// Result of a two-point solve, with multi-minimum diagnostics.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    /// Minimizing geodesic from `p` (τ = 0) to `q` (τ = τ̄).
    pub path: LPath,
    /// Its initial velocity `v`.
    pub v: Pt,
    /// Its L-length.
    pub l_value: f64,
    /// Number of distinct geodesics the multi-start found.
    pub n_minima: usize,
    /// `false` when a second distinct geodesic ties the minimum within 1e−6
    /// (the point is then treated as non-smooth for the identity checks).
    pub smooth: bool,
}

/// Minimizing L-geodesic between two points; hit tolerance 1e−8.
pub fn solve_bvp(bh: &MetricHistory, p: Pt, q: Pt, tau_bar: f64) -> Result<LPath> {
    solve_bvp_full(bh, p, q, tau_bar).map(|b| b.path)
}

/// As [`solve_bvp`], returning the initial velocity and multi-minimum
/// diagnostics as well.
pub fn solve_bvp_full(
    bh: &MetricHistory,
    p: Pt,
    q: Pt,
    tau_bar: f64,
) -> Result<BvpSolution> {
    let f = build_field(bh)?;
    check_horizon(bh, tau_bar)?;
    solve_bvp_in(&f, &p, &q, tau_bar, DEFAULT_STEPS)
}

/// Hit tolerance of the endpoint map (coordinate distance).
const HIT_TOL: f64 = 1e-10;
/// Two converged initial velocities closer than this are the same geodesic.
const SAME_V_TOL: f64 = 1e-5;
/// L-length tie threshold for the cut-locus flag.
const TIE_TOL: f64 = 1e-6;

pub(crate) fn solve_bvp_in(
    f: &GeoField,
    p: &Pt,
    q: &Pt,
    tau_bar: f64,
    steps: usize,
) -> Result<BvpSolution> {
    let d = f.shoot_dim();
    let s_bar = tau_bar.sqrt();
    let disp = f.displacement(p, q);
    let v0 = vec3::scale(&disp, 1.0 / (2.0 * s_bar));

    // Start ball: the L upper bound L ≤ e^{2C₀τ̄}d²/(2√τ̄) + (2nC₀/3)τ̄^{3/2}
    // turned into a |v| bound through the speed estimates.
    let c0 = f.c0();
    let n = f.dim();
    let d_est = metric_distance_estimate(f, p, q, s_bar);
    let l_bound = (2.0 * c0 * tau_bar).exp() * d_est * d_est / (2.0 * s_bar)
        + 2.0 * n as f64 * c0 / 3.0 * tau_bar * s_bar;
    let some_time = l_bound / (2.0 * s_bar) + n as f64 * c0 * tau_bar / 3.0;
    let v_sq_bound = speed_bound(c0, n, tau_bar, some_time, 0.5 * tau_bar);
    // Coordinate radius: metric |v|² translated through the smallest metric
    // weight a conservative factor covers.
    let r_v = 1.05 * v_sq_bound.sqrt() / metric_floor(f, p).sqrt() + 1e-9;

    // 5^d lattice over the ball plus the straight-line guess.
    let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut starts: Vec<Pt> = vec![v0];
    let mut push = |v: Pt| starts.push(v);
    match d {
        1 => {
            for &a in &offsets {
                push([a * r_v, 0.0, 0.0]);
            }
        }
        2 => {
            for &a in &offsets {
                for &b in &offsets {
                    push([a * r_v, b * r_v, 0.0]);
                }
            }
        }
        _ => {
            for &a in &offsets {
                for &b in &offsets {
                    for &c in &offsets {
                        push([a * r_v, b * r_v, c * r_v]);
                    }
                }
            }
        }
    }

    // Cheap triage at a coarse resolution, then Newton from the best starts.
    let coarse = 64.min(steps);
    let mut ranked: Vec<(f64, Pt)> = starts
        .iter()
        .filter_map(|v| {
            let path = shoot_in(f, p, v, tau_bar, coarse).ok()?;
            let err = vec3::norm_flat(&f.displacement(q, &path.endpoint()));
            Some((err, *v))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    if ranked.is_empty() {
        return Err(LabError::BvpFailure(
            "every shooting start blew up the speed bound".into(),
        ));
    }

    let scale = 1.0 + vec3::norm_flat(&disp);
    let mut solutions: Vec<(Pt, LPath, f64)> = Vec::new();
    for (_, start) in ranked.iter().take(6) {
        if let Some((v, path)) = newton(f, p, q, tau_bar, steps, d, start, scale) {
            let known = solutions
                .iter()
                .any(|(w, _, _)| vec3::norm_flat(&vec3::sub(&v, w)) < SAME_V_TOL * scale);
            if !known {
                let l = l_length_in(f, &path)?;
                solutions.push((v, path, l));
            }
        }
    }
    if solutions.is_empty() {
        return Err(LabError::BvpFailure(format!(
            "no start converged to {} (best endpoint miss {})",
            fmt17(tau_bar),
            fmt17(ranked[0].0)
        )));
    }
    solutions.sort_by(|a, b| a.2.total_cmp(&b.2));
    let n_minima = solutions.len();
    let smooth = n_minima == 1 || solutions[1].2 - solutions[0].2 > TIE_TOL;
    let (v, path, l_value) = solutions.swap_remove(0);
    Ok(BvpSolution { path, v, l_value, n_minima, smooth })
}

/// Cheap two-point solve for bulk field evaluation: a single Newton run from
/// the straight-line guess, falling back to the full multi-start only when
/// that fails. The fast path reports `n_minima = 1` without searching for
/// competing geodesics.
pub(crate) fn solve_bvp_fast(
    f: &GeoField,
    p: &Pt,
    q: &Pt,
    tau_bar: f64,
    steps: usize,
) -> Result<BvpSolution> {
    let s_bar = tau_bar.sqrt();
    let disp = f.displacement(p, q);
    let v0 = vec3::scale(&disp, 1.0 / (2.0 * s_bar));
    let scale = 1.0 + vec3::norm_flat(&disp);
    if let Some((v, path)) = newton(f, p, q, tau_bar, steps, f.shoot_dim(), &v0, scale) {
        let l_value = l_length_in(f, &path)?;
        return Ok(BvpSolution { path, v, l_value, n_minima: 1, smooth: true });
    }
    solve_bvp_in(f, p, q, tau_bar, steps)
}

/// Damped Newton iteration on the endpoint map with forward-difference
/// Jacobian columns.
#[allow(clippy::too_many_arguments)]
fn newton(
    f: &GeoField,
    p: &Pt,
    q: &Pt,
    tau_bar: f64,
    steps: usize,
    d: usize,
    start: &Pt,
    scale: f64,
) -> Option<(Pt, LPath)> {
    let residual = |v: &Pt| -> Option<(Pt, LPath)> {
        let path = shoot_in(f, p, v, tau_bar, steps).ok()?;
        let r = f.displacement(q, &path.endpoint());
        Some((r, path))
    };
    let mut v = *start;
    let (mut r, mut path) = residual(&v)?;
    let mut err = vec3::norm_flat(&r);
    for _ in 0..40 {
        if err <= HIT_TOL * scale {
            return Some((v, path));
        }
        let fd = 1e-7 * (1.0 + vec3::norm_flat(&v));
        let mut jac = [[0.0f64; 3]; 3];
        for c in 0..d {
            let mut vp = v;
            vp[c] += fd;
            let (rp, _) = residual(&vp)?;
            for rw in 0..d {
                jac[rw][c] = (rp[rw] - r[rw]) / fd;
            }
        }
        let delta = solve_small(&jac, &vec3::scale(&r, -1.0), d)?;
        // Backtracking line search on the endpoint miss.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = vec3::axpy(lambda, &delta, &v);
            if let Some((rc, pc)) = residual(&cand) {
                let ec = vec3::norm_flat(&rc);
                if ec < err * (1.0 - 0.25 * lambda) || ec <= HIT_TOL * scale {
                    v = cand;
                    r = rc;
                    path = pc;
                    err = ec;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    (err <= HIT_TOL * scale).then_some((v, path))
}

/// Gaussian elimination with partial pivoting for the d×d Newton system.
fn solve_small(a: &[[f64; 3]; 3], b: &Pt, d: usize) -> Option<Pt> {
    let mut m = [[0.0f64; 4]; 3];
    for i in 0..d {
        m[i][..d].copy_from_slice(&a[i][..d]);
        m[i][3] = b[i];
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        m.swap(col, piv);
        if m[col][col].abs() < 1e-300 {
            return None;
        }
        for row in 0..d {
            if row == col {
                continue;
            }
            let fac = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= fac * m[col][k];
            }
        }
    }
    let mut out = [0.0; 3];
    for i in 0..d {
        out[i] = m[i][3] / m[i][i];
    }
    Some(out)
}

/// Upper estimate of the metric distance at `τ = τ̄` (straight coordinate
/// segment; exact on flat space and the sphere, an upper bound on the torus).
fn metric_distance_estimate(f: &GeoField, p: &Pt, q: &Pt, s_bar: f64) -> f64 {
    let disp = f.displacement(p, q);
    match f {
        GeoField::Euclid { .. } => vec3::norm_flat(&disp),
        GeoField::Sphere { .. } => f.dot(s_bar, p, &disp, &disp).sqrt(),
        GeoField::Torus(_) => {
            let m = 24;
            let mut acc = 0.0;
            for k in 0..m {
                let t = (k as f64 + 0.5) / m as f64;
                let mid = vec3::axpy(t, &disp, p);
                acc += f.dot(s_bar, &mid, &disp, &disp).sqrt() / m as f64;
            }
            acc
        }
    }
}

/// Smallest metric weight near the base point (for converting metric speed
/// bounds into coordinate ball radii).
fn metric_floor(f: &GeoField, p: &Pt) -> f64 {
    match f {
        GeoField::Euclid { .. } => 1.0,
        GeoField::Sphere { n, r2_final } => {
            let _ = n;
            *r2_final
        }
        GeoField::Torus(t) => {
            // Scan the coarse neighborhood of the whole grid: paths may leave
            // the vicinity of p.
            let _ = p;
            let mut lo = f64::INFINITY;
            for k in 0..64 {
                let x = (k % 8) as f64 / 8.0 * t.lx;
                let y = (k / 8) as f64 / 8.0 * t.ly;
                lo = lo.min(f.dot(0.0, &[x, y, 0.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]));
            }
            lo
        }
    }
}

/// Reduced distance data at one target point.
#[derive(Debug, Clone)]
pub struct ReducedPoint {
    /// L-length of the minimizer.
    pub big_l: f64,
    /// Reduced distance `l = L/(2√τ̄)`.
    pub l: f64,
    /// Minimizing initial velocity.
    pub v: Pt,
    /// Distinct geodesics found by the multi-start.
    pub n_minima: usize,
    /// Cut-locus flag (false when two distinct geodesics tie the minimum).
    pub smooth: bool,
}

/// `L(·, τ̄)` and `l(·, τ̄)` over a list of target points.
#[derive(Debug, Clone)]
pub struct ReducedField {
    pub tau_bar: f64,
    pub targets: Vec<Pt>,
    /// One entry per target; `None` marks a failed two-point solve.
    pub entries: Vec<Option<ReducedPoint>>,
}

impl ReducedField {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.is_none()).count()
    }

    /// Smallest reduced distance over the solved targets.
    pub fn min_l(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(|e| e.l)
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest L-length over the solved targets.
    pub fn min_big_l(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(|e| e.big_l)
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV export: `qx, qy, L, l, v_x, v_y, n_minima` per solved target.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("qx,qy,L,l,v_x,v_y,n_minima\n");
        for (q, e) in self.targets.iter().zip(&self.entries) {
            if let Some(e) = e {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    fmt17(q[0]),
                    fmt17(q[1]),
                    fmt17(e.big_l),
                    fmt17(e.l),
                    fmt17(e.v[0]),
                    fmt17(e.v[1]),
                    e.n_minima
                ));
            } else {
                out.push_str(&format!("{},{},,,,,0\n", fmt17(q[0]), fmt17(q[1])));
            }
        }
        out
    }
}

/// Solve the two-point problem at every target (parallel map; entry order is
/// the target order, so results are bit-stable regardless of worker count).
pub fn reduced_field(
    bh: &MetricHistory,
    p: Pt,
    tau_bar: f64,
    targets: &[Pt],
) -> Result<ReducedField> {
    let f = build_field(bh)?;
    check_horizon(bh, tau_bar)?;
    Ok(reduced_field_in(&f, &p, tau_bar, targets, DEFAULT_STEPS))
}

pub(crate) fn reduced_field_in(
    f: &GeoField,
    p: &Pt,
    tau_bar: f64,
    targets: &[Pt],
    steps: usize,
) -> ReducedField {
    let entries: Vec<Option<ReducedPoint>> = targets
        .par_iter()
        .map(|q| {
            solve_bvp_fast(f, p, q, tau_bar, steps).ok().map(|sol| ReducedPoint {
                big_l: sol.l_value,
                l: sol.l_value / (2.0 * tau_bar.sqrt()),
                v: sol.v,
                n_minima: sol.n_minima,
                smooth: sol.smooth,
            })
        })
        .collect();
    ReducedField { tau_bar, targets: targets.to_vec(), entries }
}
