//! Transport frames and Jacobi fields along L-geodesics.

use crate::error::{LabError, Result};
use crate::flow::MetricHistory;
use crate::geometry::Pt;

use super::field::{build_field, GeoField};
use super::{check_horizon, geodesic_residual_in, vec3, LPath, PathInterp};

/// Residual threshold above which a path is rejected as a non-geodesic.
/// Loose enough to absorb the finite-difference noise of the C¹ torus field
/// interpolation (the residual probe differentiates stored velocities across
/// interpolation-cell boundaries), tight enough to reject genuinely bent
/// paths.
pub(crate) const GEODESIC_TOL: f64 = 1e-3;

/// Orthogonal frame transported along a geodesic by
/// `∇_X Y = −Ric(Y,·) + Y/(2τ)`, integrated in `s = √τ` through the
/// substitution `Y = sZ` (which removes the `1/(2τ)` singularity: `Z` obeys
/// the regular equation `DZ/ds = −2s·Ric(Z,·)♯`).
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub tau_bar: f64,
    /// `frames[i][j] = Y_i(s_j)`; the seed `Y_i(τ̄)` is `g(τ̄)`-orthonormal.
    pub frames: Vec<Vec<Pt>>,
    /// Per-sample Gram matrix `⟨Y_i, Y_k⟩_{g(τ)}`, row-major `dim × dim`.
    pub gram: Vec<Vec<f64>>,
    /// The rescaled fields `Z_i = Y_i/s` (regular down to `s = 0`).
    pub(crate) zs: Vec<Vec<Pt>>,
}

impl FrameBundle {
    pub fn dim(&self) -> usize {
        self.frames.len()
    }

    /// Largest deviation of the Gram matrix from the transport law
    /// `⟨Y_i(τ), Y_j(τ)⟩ = (τ/τ̄)·δ_ij`, over all samples and pairs.
    pub fn max_gram_deviation(&self) -> f64 {
        let d = self.dim();
        let n = self.gram.len();
        let mut worst: f64 = 0.0;
        for (j, g) in self.gram.iter().enumerate() {
            let frac = (j as f64 / (n - 1) as f64).powi(2);
            for i in 0..d {
                for k in 0..d {
                    let want = if i == k { frac } else { 0.0 };
                    worst = worst.max((g[i * d + k] - want).abs());
                }
            }
        }
        worst
    }
}

/// Integrate the orthonormal frame seeded at `τ = τ̄` backward to the base
/// point; requires a geodesic path.
pub fn transport_frame(bh: &MetricHistory, path: &LPath) -> Result<FrameBundle> {
    let f = build_field(bh)?;
    check_horizon(bh, path.tau_bar)?;
    transport_frame_in(&f, path)
}

pub(crate) fn transport_frame_in(f: &GeoField, path: &LPath) -> Result<FrameBundle> {
    let res = geodesic_residual_in(f, path);
    if res > GEODESIC_TOL {
        return Err(LabError::NotAGeodesic(res));
    }
    let d = f.dim();
    let n = path.points.len();
    let s_bar = path.s_bar();
    let h = path.ds();
    let interp = PathInterp::new(f, path);
    let q = path.endpoint();

    let mut frames = Vec::with_capacity(d);
    let mut zs_all = Vec::with_capacity(d);
    for i in 0..d {
        // g(τ̄)-orthonormal seed along the coordinate/parallel-frame axes
        // (orthogonal because all three backends are conformally flat in
        // these components).
        let mut axis = [0.0; 3];
        axis[i] = 1.0;
        let seed = vec3::scale(&axis, 1.0 / f.norm(s_bar, &q, &axis));

        let mut z = vec3::scale(&seed, 1.0 / s_bar);
        let mut zs = vec![[0.0; 3]; n];
        zs[n - 1] = z;
        for j in (1..n).rev() {
            let s1 = path.s_at(j);
            let step = -h;
            let (p1, x1) = (path.points[j], path.velocities[j]);
            let k1 = f.frame_z_rhs(s1, &p1, &x1, &z);
            let (pm, xm) = interp.eval(s1 - 0.5 * h);
            let z2 = vec3::axpy(0.5 * step, &k1, &z);
            let k2 = f.frame_z_rhs(s1 - 0.5 * h, &pm, &xm, &z2);
            let z3 = vec3::axpy(0.5 * step, &k2, &z);
            let k3 = f.frame_z_rhs(s1 - 0.5 * h, &pm, &xm, &z3);
            let (p0, x0) = (path.points[j - 1], path.velocities[j - 1]);
            let z4 = vec3::axpy(step, &k3, &z);
            let k4 = f.frame_z_rhs(s1 - h, &p0, &x0, &z4);
            for c in 0..3 {
                z[c] += step / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
            zs[j - 1] = z;
        }
        let ys: Vec<Pt> = (0..n).map(|j| vec3::scale(&zs[j], path.s_at(j))).collect();
        frames.push(ys);
        zs_all.push(zs);
    }

    let gram: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let s = path.s_at(j);
            let pos = &path.points[j];
            let mut g = vec![0.0; d * d];
            for i in 0..d {
                for k in 0..d {
                    g[i * d + k] = f.dot(s, pos, &frames[i][j], &frames[k][j]);
                }
            }
            g
        })
        .collect();

    Ok(FrameBundle { tau_bar: path.tau_bar, frames, gram, zs: zs_all })
}

/// A Jacobi field along a geodesic, sampled on the path's `s`-grid.
#[derive(Debug, Clone)]
pub struct JacobiField {
    pub tau_bar: f64,
    /// `Y(s_j)`; `Y(0) = 0`.
    pub y: Vec<Pt>,
    /// Covariant `s`-derivative `D_sY(s_j)`.
    pub dcov: Vec<Pt>,
}

/// Solve the linearized geodesic equation along a geodesic with `Y(0) = 0`
/// and `D_sY(0) = 2·seed` (the analogue of `X̂(0) = 2v`; on flat space the
/// solution is `Y(s) = 2s·seed`, i.e. `Y(τ) = 2√τ·seed`).
pub fn ljacobi(bh: &MetricHistory, path: &LPath, seed: Pt) -> Result<JacobiField> {
    let f = build_field(bh)?;
    check_horizon(bh, path.tau_bar)?;
    ljacobi_in(&f, path, &seed)
}

pub(crate) fn ljacobi_in(f: &GeoField, path: &LPath, seed: &Pt) -> Result<JacobiField> {
    let res = geodesic_residual_in(f, path);
    if res > GEODESIC_TOL {
        return Err(LabError::NotAGeodesic(res));
    }
    let n = path.points.len();
    let h = path.ds();
    let interp = PathInterp::new(f, path);
    let mut y = [0.0; 3];
    let mut p = vec3::scale(seed, 2.0);
    let mut ys = vec![[0.0; 3]; n];
    let mut ps = vec![[0.0; 3]; n];
    ys[0] = y;
    ps[0] = p;
    for j in 0..n - 1 {
        let s = path.s_at(j);
        let (p0, x0) = (path.points[j], path.velocities[j]);
        let (pm, xm) = interp.eval(s + 0.5 * h);
        let (p1, x1) = (path.points[j + 1], path.velocities[j + 1]);
        let k1 = f.jacobi_rhs(s, &p0, &x0, &y, &p);
        let y2 = vec3::axpy(0.5 * h, &k1.0, &y);
        let q2 = vec3::axpy(0.5 * h, &k1.1, &p);
        let k2 = f.jacobi_rhs(s + 0.5 * h, &pm, &xm, &y2, &q2);
        let y3 = vec3::axpy(0.5 * h, &k2.0, &y);
        let q3 = vec3::axpy(0.5 * h, &k2.1, &p);
        let k3 = f.jacobi_rhs(s + 0.5 * h, &pm, &xm, &y3, &q3);
        let y4 = vec3::axpy(h, &k3.0, &y);
        let q4 = vec3::axpy(h, &k3.1, &p);
        let k4 = f.jacobi_rhs(s + h, &p1, &x1, &y4, &q4);
        for c in 0..3 {
            y[c] += h / 6.0 * (k1.0[c] + 2.0 * k2.0[c] + 2.0 * k3.0[c] + k4.0[c]);
            p[c] += h / 6.0 * (k1.1[c] + 2.0 * k2.1[c] + 2.0 * k3.1[c] + k4.1[c]);
        }
        ys[j + 1] = y;
        ps[j + 1] = p;
    }
    Ok(JacobiField { tau_bar: path.tau_bar, y: ys, dcov: ps })
}
