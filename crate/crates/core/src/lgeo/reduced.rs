//! Reduced distance: differential identities at a smooth point, the reduced
//! volume, its monotonicity balance, and the scalar-curvature floor.

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::flow::MetricHistory;
use crate::geometry::{unit_sphere_area, EuclideanBackend, Pt};
use crate::util::simpson;

use super::field::{build_field, GeoField};
use super::harnack::harnack_k_in;
use super::shoot::{solve_bvp_fast, solve_bvp_in};
use super::{check_horizon, vec3, DEFAULT_STEPS};

/// Step sizes for the finite-difference probes of `L(q, τ̄)`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityConfig {
    /// Spatial step for gradient/Laplacian differences in the target.
    pub h_q: f64,
    /// Relative step for the horizon derivative (`δ = dtau_frac·τ̄`).
    pub dtau_frac: f64,
    /// RK4 steps per two-point solve.
    pub steps: usize,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self { h_q: 0.05, dtau_frac: 0.05, steps: DEFAULT_STEPS }
    }
}

/// Residuals of the first-order identities and slacks of the Laplacian
/// bounds for the L-distance / reduced distance at one target.
///
/// Residuals are `|lhs − rhs| / max(1, |lhs|, |rhs|)`. The primary identities
/// weight the Harnack integral `K` by `τ̄^{−1/2}` (respectively `τ̄^{−3/2}`
/// in reduced form); the `_alt` residuals evaluate the variant that weights
/// `K` by one extra power of `τ̄^{1/2}`, which agrees only at `τ̄ = 1` — both
/// are reported so the scaling can be inspected.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub tau_bar: f64,
    /// L-length of the minimizer and reduced distance `l = L/(2√τ̄)`.
    pub big_l: f64,
    pub l: f64,
    /// Weighted Harnack integral along the minimizer.
    pub k: f64,
    /// Scalar curvature at the target.
    pub r: f64,
    /// `|∇L|² = −4τ̄R + 2L/√τ̄ − 4K/√τ̄`.
    pub res_grad_big_l: f64,
    /// `∂L/∂τ̄ = 2√τ̄R − L/(2τ̄) + K/τ̄`.
    pub res_dtau_big_l: f64,
    /// `|∇l|² = −R + l/τ̄ − K/τ̄^{3/2}`.
    pub res_grad_l: f64,
    /// `∂l/∂τ̄ = R − l/τ̄ + K/(2τ̄^{3/2})`.
    pub res_dtau_l: f64,
    /// Variant with `K/τ̄²` weighting.
    pub res_grad_l_alt: f64,
    /// Variant with `K/(2τ̄²)` weighting.
    pub res_dtau_l_alt: f64,
    /// `n/√τ̄ − 2√τ̄R − K/τ̄ − ΔL` (nonnegative when the bound holds).
    pub slack_lap_big_l: f64,
    /// `−R + n/(2τ̄) − K/(2τ̄^{3/2}) − Δl`.
    pub slack_lap_l: f64,
    /// False when the target ties two distinct minimizers; the pointwise
    /// identities are then meaningless.
    pub smooth: bool,
}

/// Evaluate the gradient/time identities and Laplacian bounds of the reduced
/// distance at target `q` by finite differences of independent two-point
/// solves.
pub fn identity_residuals(
    bh: &MetricHistory,
    p: Pt,
    q: Pt,
    tau_bar: f64,
    cfg: IdentityConfig,
) -> Result<IdentityReport> {
    let f = build_field(bh)?;
    check_horizon(bh, tau_bar)?;
    let steps = cfg.steps;
    let sol = solve_bvp_in(&f, &p, &q, tau_bar, steps)?;
    let big_l = sol.l_value;
    let s_bar = tau_bar.sqrt();
    let l = big_l / (2.0 * s_bar);
    let end = sol.path.endpoint();
    let (_, k) = harnack_k_in(&f, &sol.path);
    let r = f.scalar_r(s_bar, &end);
    let n = f.dim() as f64;

    // Spatial first/second differences of L along the coordinate axes.
    let h = cfg.h_q;
    let sd = f.shoot_dim();
    let mut d1 = [0.0; 3];
    let mut d2 = [0.0; 3];
    for a in 0..sd {
        let mut qp = end;
        let mut qm = end;
        qp[a] += h;
        qm[a] -= h;
        let lp = solve_bvp_in(&f, &p, &qp, tau_bar, steps)?.l_value;
        let lm = solve_bvp_in(&f, &p, &qm, tau_bar, steps)?.l_value;
        d1[a] = (lp - lm) / (2.0 * h);
        d2[a] = (lp - 2.0 * big_l + lm) / (h * h);
    }
    let (grad_sq, lap) = match &f {
        GeoField::Euclid { n } => {
            let g = (0..*n).map(|a| d1[a] * d1[a]).sum();
            let lp = (0..*n).map(|a| d2[a]).sum();
            (g, lp)
        }
        GeoField::Sphere { n, .. } => {
            let r2 = f.dot(s_bar, &end, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
            let theta = end[0];
            (
                d1[0] * d1[0] / r2,
                (d2[0] + (*n as f64 - 1.0) * theta.cos() / theta.sin() * d1[0]) / r2,
            )
        }
        GeoField::Torus(_) => {
            // Conformal surface: |∇L|² = e^{−2u}|∂L|², ΔL = e^{−2u}Δ_flat L.
            let e2u = f.dot(s_bar, &end, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
            ((d1[0] * d1[0] + d1[1] * d1[1]) / e2u, (d2[0] + d2[1]) / e2u)
        }
    };

    // Horizon derivative ∂L/∂τ̄: fourth-order five-point stencil where the
    // history allows it, backward second-order at its far end.
    let delta = cfg.dtau_frac * tau_bar;
    let l_at = |tb: f64| -> Result<f64> {
        Ok(solve_bvp_in(&f, &p, &end, tb, steps)?.l_value)
    };
    let dl_dtau = if tau_bar + 2.0 * delta <= bh.duration() * (1.0 + 1e-12) {
        (-l_at(tau_bar + 2.0 * delta)? + 8.0 * l_at(tau_bar + delta)?
            - 8.0 * l_at(tau_bar - delta)?
            + l_at(tau_bar - 2.0 * delta)?)
            / (12.0 * delta)
    } else {
        (3.0 * big_l - 4.0 * l_at(tau_bar - delta)? + l_at(tau_bar - 2.0 * delta)?)
            / (2.0 * delta)
    };

    let resid = |lhs: f64, rhs: f64| (lhs - rhs).abs() / 1.0_f64.max(lhs.abs()).max(rhs.abs());

    let grad_l_sq = grad_sq / (4.0 * tau_bar);
    let dl_small_dtau = dl_dtau / (2.0 * s_bar) - big_l / (4.0 * tau_bar * s_bar);
    let lap_l = lap / (2.0 * s_bar);

    Ok(IdentityReport {
        tau_bar,
        big_l,
        l,
        k,
        r,
        res_grad_big_l: resid(grad_sq, -4.0 * tau_bar * r + 2.0 * big_l / s_bar - 4.0 * k / s_bar),
        res_dtau_big_l: resid(dl_dtau, 2.0 * s_bar * r - big_l / (2.0 * tau_bar) + k / tau_bar),
        res_grad_l: resid(grad_l_sq, -r + l / tau_bar - k / (tau_bar * s_bar)),
        res_dtau_l: resid(dl_small_dtau, r - l / tau_bar + k / (2.0 * tau_bar * s_bar)),
        res_grad_l_alt: resid(grad_l_sq, -r + l / tau_bar - k / (tau_bar * tau_bar)),
        res_dtau_l_alt: resid(dl_small_dtau, r - l / tau_bar + k / (2.0 * tau_bar * tau_bar)),
        slack_lap_big_l: n / s_bar - 2.0 * s_bar * r - k / tau_bar - lap,
        slack_lap_l: -r + n / (2.0 * tau_bar) - k / (2.0 * tau_bar * s_bar) - lap_l,
        smooth: sol.smooth,
    })
}

/// Target-grid resolution for the reduced-volume quadrature.
#[derive(Debug, Clone, Copy)]
pub struct ReducedVolumeConfig {
    /// Torus targets per axis (uniform grid over the fundamental domain).
    pub torus_targets: usize,
    /// Simpson intervals in the polar angle on the sphere (even).
    pub sphere_intervals: usize,
    /// RK4 steps per two-point solve.
    pub steps: usize,
}

impl Default for ReducedVolumeConfig {
    fn default() -> Self {
        Self { torus_targets: 24, sphere_intervals: 32, steps: 128 }
    }
}

/// One reduced-volume sample.
#[derive(Debug, Clone)]
pub struct VTildeEntry {
    pub tau: f64,
    /// `Ṽ(τ) = ∫ τ^{−n/2} e^{−l(q, τ)} dvol_{g(τ)}(q)`.
    pub v_tilde: f64,
    /// Smallest reduced distance seen on the target grid.
    pub min_l: f64,
    /// Failed two-point solves (at most 1% of the grid, else an error).
    pub failures: usize,
}

/// Targets and `dvol_{g(τ)}` quadrature weights for the spatial integral.
fn volume_grid(
    f: &GeoField,
    p: &Pt,
    tau: f64,
    cfg: &ReducedVolumeConfig,
) -> Result<(Vec<Pt>, Vec<f64>)> {
    let s = tau.sqrt();
    match f {
        GeoField::Euclid { n } => {
            let b = EuclideanBackend::gaussian_box(*n, tau)?;
            let (targets, weights) = b
                .quadrature()
                .into_iter()
                .map(|(x, w)| (vec3::add(p, &x), w))
                .unzip();
            Ok((targets, weights))
        }
        GeoField::Sphere { n, .. } => {
            // Polar coordinates around the base point: dvol = area(S^{n−1})·
            // r^n·sin^{n−1}ψ dψ, Simpson in ψ over [0, π].
            let m = cfg.sphere_intervals & !1;
            let m = m.max(2);
            let h = std::f64::consts::PI / m as f64;
            let rn = f.dot(s, p, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).powf(*n as f64 / 2.0);
            let shell = unit_sphere_area(*n - 1);
            let mut targets = Vec::with_capacity(m + 1);
            let mut weights = Vec::with_capacity(m + 1);
            for k in 0..=m {
                let psi = k as f64 * h;
                targets.push([p[0] + psi, 0.0, 0.0]);
                let simpson_w = if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                weights.push(
                    shell * rn * psi.sin().powi(*n as i32 - 1) * simpson_w * h / 3.0,
                );
            }
            Ok((targets, weights))
        }
        GeoField::Torus(t) => {
            let ng = cfg.torus_targets.max(2);
            let cell = t.lx / ng as f64 * t.ly / ng as f64;
            let mut targets = Vec::with_capacity(ng * ng);
            let mut weights = Vec::with_capacity(ng * ng);
            for j in 0..ng {
                for i in 0..ng {
                    let q = [i as f64 * t.lx / ng as f64, j as f64 * t.ly / ng as f64, 0.0];
                    let e2u = f.dot(s, &q, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
                    targets.push(q);
                    weights.push(e2u * cell);
                }
            }
            Ok((targets, weights))
        }
    }
}

/// `e^{−l}` and `l` at every target (parallel, order-stable); errors out when
/// more than 1% of the two-point solves fail.
fn l_over_targets(
    f: &GeoField,
    p: &Pt,
    tau: f64,
    targets: &[Pt],
    steps: usize,
) -> Result<Vec<f64>> {
    let ls: Vec<Option<f64>> = targets
        .par_iter()
        .map(|q| {
            solve_bvp_fast(f, p, q, tau, steps)
                .ok()
                .map(|sol| sol.l_value / (2.0 * tau.sqrt()))
        })
        .collect();
    let failures = ls.iter().filter(|e| e.is_none()).count();
    if failures * 100 > targets.len() {
        return Err(LabError::BvpFailure(format!(
            "{failures} of {} two-point solves failed at tau = {tau:.4e}",
            targets.len()
        )));
    }
    Ok(ls.into_iter().map(|e| e.unwrap_or(f64::INFINITY)).collect())
}

/// Reduced volume `Ṽ(τ)` at each requested backward time.
pub fn reduced_volume(
    bh: &MetricHistory,
    p: Pt,
    tau_list: &[f64],
    cfg: ReducedVolumeConfig,
) -> Result<Vec<VTildeEntry>> {
    let f = build_field(bh)?;
    let n = f.dim() as f64;
    let mut out = Vec::with_capacity(tau_list.len());
    for &tau in tau_list {
        check_horizon(bh, tau)?;
        let (targets, weights) = volume_grid(&f, &p, tau, &cfg)?;
        let ls = l_over_targets(&f, &p, tau, &targets, cfg.steps)?;
        let failures = ls.iter().filter(|l| !l.is_finite()).count();
        let v_tilde = tau.powf(-n / 2.0)
            * weights
                .iter()
                .zip(&ls)
                .filter(|(_, l)| l.is_finite())
                .map(|(w, l)| w * (-l).exp())
                .sum::<f64>();
        let min_l = ls.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(VTildeEntry { tau, v_tilde, min_l, failures });
    }
    Ok(out)
}

/// Monotonicity balance between two backward times.
#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub tau1: f64,
    pub tau2: f64,
    pub v1: f64,
    pub v2: f64,
    /// `∫_{τ₁}^{τ₂} ∫ (∂l/∂τ − R + n/(2τ)) e^{−l} τ^{−n/2} dvol dτ`.
    pub integral: f64,
    /// `Ṽ(τ₂) − Ṽ(τ₁) + integral` (zero when the volume derivative formula
    /// balances exactly).
    pub residual: f64,
}

/// Check that the drop of the reduced volume equals the integrated density
/// production between `tau1 < tau2`; five Simpson nodes in τ, centered
/// differences for `∂l/∂τ`.
pub fn reduced_volume_balance(
    bh: &MetricHistory,
    p: Pt,
    tau1: f64,
    tau2: f64,
    cfg: ReducedVolumeConfig,
) -> Result<BalanceReport> {
    if !(tau1 > 0.0 && tau2 > tau1) {
        return Err(LabError::InvalidParameter(
            "balance check needs 0 < tau1 < tau2".into(),
        ));
    }
    let f = build_field(bh)?;
    check_horizon(bh, tau2 * 1.02)?;
    let n = f.dim() as f64;
    let ends = reduced_volume(bh, p, &[tau1, tau2], cfg)?;
    let (v1, v2) = (ends[0].v_tilde, ends[1].v_tilde);

    let nodes = 5;
    let mut g = Vec::with_capacity(nodes);
    for m in 0..nodes {
        let tau = tau1 + (tau2 - tau1) * m as f64 / (nodes - 1) as f64;
        let (targets, weights) = volume_grid(&f, &p, tau, &cfg)?;
        let delta = 0.02 * tau;
        let l0 = l_over_targets(&f, &p, tau, &targets, cfg.steps)?;
        let lp = l_over_targets(&f, &p, tau + delta, &targets, cfg.steps)?;
        let lm = l_over_targets(&f, &p, tau - delta, &targets, cfg.steps)?;
        let s = tau.sqrt();
        let mut acc = 0.0;
        for (i, q) in targets.iter().enumerate() {
            if !(l0[i].is_finite() && lp[i].is_finite() && lm[i].is_finite()) {
                continue;
            }
            let dl_dtau = (lp[i] - lm[i]) / (2.0 * delta);
            let r = f.scalar_r(s, q);
            acc += weights[i] * (dl_dtau - r + n / (2.0 * tau)) * (-l0[i]).exp();
        }
        g.push(tau.powf(-n / 2.0) * acc);
    }
    let integral = simpson(&g, tau1, tau2);
    Ok(BalanceReport { tau1, tau2, v1, v2, integral, residual: v2 - v1 + integral })
}

/// Smallest slack of the scalar-curvature floor `R(·, τ) ≥ −n/(2(τ̄ − τ))`
/// over τ ∈ [0, τ̄) and the spatial samples of each backend; nonnegative when
/// the floor holds.
pub fn scalar_floor_report(bh: &MetricHistory, tau_bar: f64) -> Result<f64> {
    let f = build_field(bh)?;
    check_horizon(bh, tau_bar)?;
    let n = f.dim() as f64;
    let mut worst = f64::INFINITY;
    let samples = 32;
    for k in 0..samples {
        let tau = tau_bar * k as f64 / samples as f64;
        let s = tau.sqrt();
        let floor = -n / (2.0 * (tau_bar - tau));
        match &f {
            GeoField::Torus(t) => {
                let m = 16;
                for j in 0..m {
                    for i in 0..m {
                        let q =
                            [i as f64 * t.lx / m as f64, j as f64 * t.ly / m as f64, 0.0];
                        worst = worst.min(f.scalar_r(s, &q) - floor);
                    }
                }
            }
            _ => worst = worst.min(f.scalar_r(s, &[0.5, 0.0, 0.0]) - floor),
        }
    }
    Ok(worst)
}
