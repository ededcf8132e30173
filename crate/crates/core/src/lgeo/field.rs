//! Backend-specific evaluation of metric data along backward histories.
//!
//! Everything in this module answers one question: given a point of the
//! manifold and a value of the square-root time `s = √τ`, what are the
//! metric, curvature, and their first derivatives there? The three backends
//! answer very differently:
//!
//! * flat space — everything curvature-related is zero;
//! * round sphere — geodesics from the base point run along meridians, so
//!   paths are one-dimensional in the polar angle while frame vectors carry
//!   components in a parallel orthonormal frame `{ê_θ, ê_φ, …}` of the unit
//!   sphere. In that frame all connection coefficients along radial paths
//!   vanish and the metric is `r²(τ)` times the flat component dot;
//! * conformal torus — the history is resampled onto a bounded number of
//!   uniform backward-time nodes; per node the conformal factor, scalar
//!   curvature, its gradient, its covariant Hessian and its time derivative
//!   are precomputed as grids, and point queries blend four time nodes with
//!   a cubic rule and interpolate each grid spatially.
//!
//! One consistency rule matters for the conservation laws downstream: the
//! conformal factor and the Christoffel symbols are taken from the *same*
//! spatial interpolant (value and exact interpolant gradient), so metric
//! compatibility holds to rounding along any path.

use crate::error::{LabError, Result};
use crate::flow::MetricHistory;
use crate::geometry::interp::PatchStencil;
use crate::geometry::{
    hessian, GridShape, ManifoldBackend, Pt, ScalarField, SymTensorField,
};

use super::vec3;

/// Number of time nodes the torus resampling is capped at.
const MAX_TIME_NODES: usize = 128;

/// Per-node precomputed grids of the torus evaluator.
struct TorusNode {
    /// Conformal factor `u`.
    u: Vec<f64>,
    /// Scalar curvature `R = −2e^{−2u}Δu`.
    r: Vec<f64>,
    /// Fourth-order grid gradient of `R`.
    rx: Vec<f64>,
    ry: Vec<f64>,
    /// Covariant Hessian of `R` (lower indices).
    hxx: Vec<f64>,
    hxy: Vec<f64>,
    hyy: Vec<f64>,
    /// Backward-time derivative `∂R/∂τ` (filled after all nodes exist).
    r_tau: Vec<f64>,
}

/// Torus metric data resampled at uniform backward times.
pub(crate) struct TorusGeo {
    shape: GridShape,
    pub lx: f64,
    pub ly: f64,
    dtau: f64,
    nodes: Vec<TorusNode>,
    /// `sup |R|/2` over all nodes — a bound for sectional and Ricci
    /// curvature magnitudes of the conformal surface.
    c0: f64,
}

/// Everything the torus knows at one `(x, y, τ)` query.
pub(crate) struct TorusPoint {
    pub u: f64,
    pub ux: f64,
    pub uy: f64,
    pub r: f64,
    pub rx: f64,
    pub ry: f64,
    pub r_tau: f64,
    pub hxx: f64,
    pub hxy: f64,
    pub hyy: f64,
}

impl TorusGeo {
    fn build(bh: &MetricHistory) -> Result<Self> {
        let m = (bh.len() - 1).clamp(2, MAX_TIME_NODES);
        let dtau = bh.duration() / m as f64;
        if dtau <= 0.0 {
            return Err(LabError::InvalidParameter(
                "history must span a positive time interval".into(),
            ));
        }
        let mut shape = None;
        let (mut lx, mut ly) = (0.0, 0.0);
        let mut nodes = Vec::with_capacity(m + 1);
        let mut c0: f64 = 0.0;
        for j in 0..=m {
            let state = bh.sample(j as f64 * dtau)?;
            let t = state.expect_torus()?.clone();
            let s = t.shape();
            shape.get_or_insert(s);
            lx = t.lx;
            ly = t.ly;
            let r = t.scalar_curvature_grid();
            let mb = ManifoldBackend::ConformalTorus(t.clone());
            let SymTensorField::TorusGrid { xx, xy, yy } =
                hessian(&mb, &ScalarField::TorusGrid(r.clone()))?
            else {
                unreachable!("torus hessian returns torus components")
            };
            c0 = r.iter().fold(c0, |a, &v| a.max(v.abs() / 2.0));
            nodes.push(TorusNode {
                u: t.u,
                rx: s.dx(&r),
                ry: s.dy(&r),
                hxx: xx,
                hxy: xy,
                hyy: yy,
                r_tau: Vec::new(),
                r,
            });
        }
        // Backward-time derivative of R: centered in the interior, one-sided
        // second order at the ends.
        for j in 0..=m {
            let len = nodes[j].r.len();
            let mut d = Vec::with_capacity(len);
            for i in 0..len {
                let v = if j == 0 {
                    -3.0 * nodes[0].r[i] + 4.0 * nodes[1].r[i] - nodes[2].r[i]
                } else if j == m {
                    3.0 * nodes[m].r[i] - 4.0 * nodes[m - 1].r[i] + nodes[m - 2].r[i]
                } else {
                    nodes[j + 1].r[i] - nodes[j - 1].r[i]
                };
                d.push(v / (2.0 * dtau));
            }
            nodes[j].r_tau = d;
        }
        Ok(Self { shape: shape.unwrap(), lx, ly, dtau, nodes, c0 })
    }

    /// Cubic time blend of the four bracketing nodes, spatial interpolation
    /// per grid through one shared stencil.
    pub fn point(&self, tau: f64, x: f64, y: f64) -> TorusPoint {
        let m = self.nodes.len() - 1;
        let pos = (tau / self.dtau).clamp(0.0, m as f64);
        let k = (pos.floor() as usize).min(m - 1);
        let frac = pos - k as f64;
        let w = crate::flow::cr_weights_clamped(frac, k == 0, k + 2 > m);
        let idx = [k.saturating_sub(1), k, k + 1, (k + 2).min(m)];
        let st = PatchStencil::new(&self.shape, x, y);
        let mut p = TorusPoint {
            u: 0.0,
            ux: 0.0,
            uy: 0.0,
            r: 0.0,
            rx: 0.0,
            ry: 0.0,
            r_tau: 0.0,
            hxx: 0.0,
            hxy: 0.0,
            hyy: 0.0,
        };
        for (wk, &jk) in w.iter().zip(&idx) {
            if *wk == 0.0 {
                continue;
            }
            let n = &self.nodes[jk];
            let (u, ux, uy) = st.value_grad(&self.shape, &n.u);
            p.u += wk * u;
            p.ux += wk * ux;
            p.uy += wk * uy;
            p.r += wk * st.value(&self.shape, &n.r);
            p.rx += wk * st.value(&self.shape, &n.rx);
            p.ry += wk * st.value(&self.shape, &n.ry);
            p.r_tau += wk * st.value(&self.shape, &n.r_tau);
            p.hxx += wk * st.value(&self.shape, &n.hxx);
            p.hxy += wk * st.value(&self.shape, &n.hxy);
            p.hyy += wk * st.value(&self.shape, &n.hyy);
        }
        p
    }
}

/// Christoffel contraction `Γ(a, b)` of the conformal metric `e^{2u}δ`.
#[inline]
fn conformal_gamma(ux: f64, uy: f64, a: &Pt, b: &Pt) -> Pt {
    [
        ux * (a[0] * b[0] - a[1] * b[1]) + uy * (a[0] * b[1] + a[1] * b[0]),
        uy * (a[1] * b[1] - a[0] * b[0]) + ux * (a[0] * b[1] + a[1] * b[0]),
        0.0,
    ]
}

/// Metric data along one backward history, queried by `(s, position)`.
pub(crate) enum GeoField {
    Euclid { n: usize },
    Sphere { n: usize, r2_final: f64 },
    Torus(TorusGeo),
}

/// Build the evaluator for a backward history.
pub(crate) fn build_field(bh: &MetricHistory) -> Result<GeoField> {
    if !bh.is_backward() {
        return Err(LabError::InvalidParameter(
            "L-geometry requires a backward history view (call backward_view())".into(),
        ));
    }
    let (_, state) = bh.snapshot(0);
    Ok(match state {
        ManifoldBackend::Euclidean(b) => GeoField::Euclid { n: b.n },
        ManifoldBackend::Sphere(s) => {
            GeoField::Sphere { n: s.n, r2_final: s.radius * s.radius }
        }
        ManifoldBackend::ConformalTorus(_) => GeoField::Torus(TorusGeo::build(bh)?),
    })
}

impl GeoField {
    /// Manifold dimension (frame vectors carry this many components).
    pub fn dim(&self) -> usize {
        match self {
            GeoField::Euclid { n } => *n,
            GeoField::Sphere { n, .. } => *n,
            GeoField::Torus(_) => 2,
        }
    }

    /// Number of position coordinates a path actually moves in: sphere
    /// geodesics from the base point are meridians, hence one-dimensional in
    /// the polar angle.
    pub fn shoot_dim(&self) -> usize {
        match self {
            GeoField::Sphere { .. } => 1,
            _ => self.dim(),
        }
    }

    /// Backward-time sphere radius squared `r²(τ) = r²(0) + 2(n−1)τ`.
    fn r2(&self, tau: f64) -> f64 {
        match self {
            GeoField::Sphere { n, r2_final } => r2_final + 2.0 * (*n as f64 - 1.0) * tau,
            _ => 1.0,
        }
    }

    /// A uniform bound for `|Rm|` and `|Ric|` over the whole history.
    pub fn c0(&self) -> f64 {
        match self {
            GeoField::Euclid { .. } => 0.0,
            GeoField::Sphere { n, r2_final } => {
                if *n < 2 {
                    0.0
                } else {
                    (*n as f64 - 1.0).max(1.0) / r2_final
                }
            }
            GeoField::Torus(t) => t.c0,
        }
    }

    /// Metric inner product `⟨a, b⟩_{g(τ)}` at `τ = s²`.
    pub fn dot(&self, s: f64, pos: &Pt, a: &Pt, b: &Pt) -> f64 {
        match self {
            GeoField::Euclid { n } => vec3::dotn(a, b, *n),
            GeoField::Sphere { n, .. } => self.r2(s * s) * vec3::dotn(a, b, *n),
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                (2.0 * p.u).exp() * (a[0] * b[0] + a[1] * b[1])
            }
        }
    }

    pub fn norm(&self, s: f64, pos: &Pt, a: &Pt) -> f64 {
        self.dot(s, pos, a, a).max(0.0).sqrt()
    }

    /// Scalar curvature at `(pos, τ = s²)`.
    pub fn scalar_r(&self, s: f64, pos: &Pt) -> f64 {
        match self {
            GeoField::Euclid { .. } => 0.0,
            GeoField::Sphere { n, .. } => (*n * (*n - 1)) as f64 / self.r2(s * s),
            GeoField::Torus(t) => t.point(s * s, pos[0], pos[1]).r,
        }
    }

    /// Backward-time derivative `∂R/∂τ`.
    pub fn r_tau(&self, s: f64, pos: &Pt) -> f64 {
        match self {
            GeoField::Euclid { .. } => 0.0,
            GeoField::Sphere { n, .. } => {
                let nf = *n as f64;
                let r2 = self.r2(s * s);
                -nf * (nf - 1.0) * 2.0 * (nf - 1.0) / (r2 * r2)
            }
            GeoField::Torus(t) => t.point(s * s, pos[0], pos[1]).r_tau,
        }
    }

    /// Coordinate gradient `∂_i R` (lower index; pairs with vector components
    /// without any metric factor).
    pub fn grad_r_lower(&self, s: f64, pos: &Pt) -> Pt {
        match self {
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                [p.rx, p.ry, 0.0]
            }
            _ => [0.0; 3],
        }
    }

    /// Ricci endomorphism `Ric(w, ·)♯`.
    pub fn ric_sharp(&self, s: f64, pos: &Pt, w: &Pt) -> Pt {
        match self {
            GeoField::Euclid { .. } => [0.0; 3],
            GeoField::Sphere { n, .. } => {
                vec3::scale(w, (*n as f64 - 1.0) / self.r2(s * s))
            }
            GeoField::Torus(t) => {
                let r = t.point(s * s, pos[0], pos[1]).r;
                vec3::scale(w, 0.5 * r)
            }
        }
    }

    /// Ricci form `Ric(a, b)`.
    pub fn ric(&self, s: f64, pos: &Pt, a: &Pt, b: &Pt) -> f64 {
        let ra = self.ric_sharp(s, pos, a);
        self.dot(s, pos, &ra, b)
    }

    /// Christoffel contraction `Γ(a, b)` (symmetric bilinear, vector valued).
    pub fn christoffel(&self, s: f64, pos: &Pt, a: &Pt, b: &Pt) -> Pt {
        match self {
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                conformal_gamma(p.ux, p.uy, a, b)
            }
            // Flat coordinates / parallel frame along meridians.
            _ => [0.0; 3],
        }
    }

    /// Sectional curvature of the (pointwise constant-curvature) backends:
    /// Gauss curvature `R/2` on the torus, `1/r²` on the sphere.
    fn sec_k(&self, s: f64, pos: &Pt) -> f64 {
        match self {
            GeoField::Euclid { .. } => 0.0,
            GeoField::Sphere { .. } => 1.0 / self.r2(s * s),
            GeoField::Torus(t) => 0.5 * t.point(s * s, pos[0], pos[1]).r,
        }
    }

    /// Curvature operator `R(y, x)x = K(⟨x,x⟩y − ⟨y,x⟩x)`.
    pub fn curv_yxx(&self, s: f64, pos: &Pt, y: &Pt, x: &Pt) -> Pt {
        let k = self.sec_k(s, pos);
        if k == 0.0 {
            return [0.0; 3];
        }
        let xx = self.dot(s, pos, x, x);
        let yx = self.dot(s, pos, y, x);
        vec3::axpy(-k * yx, x, &vec3::scale(y, k * xx))
    }

    /// Sectional pairing `⟨R(z, x)z, x⟩ = K(⟨z,x⟩² − |z|²|x|²)`.
    pub fn curv_pair(&self, s: f64, pos: &Pt, z: &Pt, x: &Pt) -> f64 {
        let k = self.sec_k(s, pos);
        if k == 0.0 {
            return 0.0;
        }
        let zx = self.dot(s, pos, z, x);
        k * (zx * zx - self.dot(s, pos, z, z) * self.dot(s, pos, x, x))
    }

    /// Covariant Hessian `∇²R(y, y)`.
    pub fn hess_r(&self, s: f64, pos: &Pt, y: &Pt) -> f64 {
        match self {
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                p.hxx * y[0] * y[0] + 2.0 * p.hxy * y[0] * y[1] + p.hyy * y[1] * y[1]
            }
            _ => 0.0,
        }
    }

    /// Raised Hessian contraction `(∇_y ∇R)♯`.
    pub fn hess_r_sharp(&self, s: f64, pos: &Pt, y: &Pt) -> Pt {
        match self {
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                let w = (-2.0 * p.u).exp();
                [
                    w * (p.hxx * y[0] + p.hxy * y[1]),
                    w * (p.hxy * y[0] + p.hyy * y[1]),
                    0.0,
                ]
            }
            _ => [0.0; 3],
        }
    }

    /// Backward-time derivative of the Ricci form at frozen components,
    /// `∂_τ[Ric(y, y)]`. On the surface `Ric = ½Rg` and backward `u_τ = R/2`,
    /// so `∂_τ Ric = ½(R_τ + R²)e^{2u}δ`. On the round sphere `Ric` equals
    /// `(n−1)` times the unit metric and is τ-independent.
    pub fn ric_tau(&self, s: f64, pos: &Pt, y: &Pt) -> f64 {
        match self {
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                0.5 * (p.r_tau + p.r * p.r)
                    * (2.0 * p.u).exp()
                    * (y[0] * y[0] + y[1] * y[1])
            }
            _ => 0.0,
        }
    }

    /// Directional Ricci derivative `(∇_z Ric)(a, b)`; on the surface
    /// `∇Ric = ½ ∇R ⊗ g`, on the sphere and flat space it vanishes.
    pub fn dric(&self, s: f64, pos: &Pt, z: &Pt, a: &Pt, b: &Pt) -> f64 {
        match self {
            GeoField::Torus(_) => {
                let gr = self.grad_r_lower(s, pos);
                0.5 * vec3::dotn(&gr, z, 2) * self.dot(s, pos, a, b)
            }
            _ => 0.0,
        }
    }

    /// Raised directional Ricci derivative `((∇_z Ric)(a, ·))♯`.
    pub fn dric_sharp(&self, s: f64, pos: &Pt, z: &Pt, a: &Pt) -> Pt {
        match self {
            GeoField::Torus(_) => {
                let gr = self.grad_r_lower(s, pos);
                vec3::scale(a, 0.5 * vec3::dotn(&gr, z, 2))
            }
            _ => [0.0; 3],
        }
    }

    /// Right-hand side of the geodesic equation in the `s`-parametrization:
    /// `dX̂/ds = −Γ(X̂, X̂) + 2s²(∇R)♯ − 4s·Ric(X̂, ·)♯`.
    pub fn accel(&self, s: f64, pos: &Pt, xhat: &Pt) -> Pt {
        match self {
            GeoField::Euclid { .. } => [0.0; 3],
            GeoField::Sphere { n, .. } => {
                vec3::scale(xhat, -4.0 * s * (*n as f64 - 1.0) / self.r2(s * s))
            }
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                let gamma = conformal_gamma(p.ux, p.uy, xhat, xhat);
                let w = (-2.0 * p.u).exp();
                let c = 2.0 * s * s * w;
                [
                    -gamma[0] + c * p.rx - 2.0 * s * p.r * xhat[0],
                    -gamma[1] + c * p.ry - 2.0 * s * p.r * xhat[1],
                    0.0,
                ]
            }
        }
    }

    /// Right-hand side of the rescaled frame-transport unknown `Z = Y/s`:
    /// `dZ/ds = −Γ(X̂, Z) − 2s·Ric(Z, ·)♯`.
    pub fn frame_z_rhs(&self, s: f64, pos: &Pt, xhat: &Pt, z: &Pt) -> Pt {
        match self {
            GeoField::Euclid { .. } => [0.0; 3],
            GeoField::Sphere { n, .. } => {
                vec3::scale(z, -2.0 * s * (*n as f64 - 1.0) / self.r2(s * s))
            }
            GeoField::Torus(t) => {
                let p = t.point(s * s, pos[0], pos[1]);
                let gamma = conformal_gamma(p.ux, p.uy, xhat, z);
                [
                    -gamma[0] - s * p.r * z[0],
                    -gamma[1] - s * p.r * z[1],
                    0.0,
                ]
            }
        }
    }

    /// Time derivative of the Christoffel symbols contracted with two
    /// vectors, `((∂_τΓ)(a, b))^k`. Since `∂_τ g = 2·Ric`, this is
    /// `(∇_a Ric)(b,·)♯ + (∇_b Ric)(a,·)♯ − (∇♯Ric)(a,b)`; it vanishes on
    /// the backends whose connection is static in the working coordinates.
    pub fn gamma_tau(&self, s: f64, pos: &Pt, a: &Pt, b: &Pt) -> Pt {
        match self {
            GeoField::Torus(t) => {
                // Conformal metric e^{2u}δ with ∂_τu = R/2, so ∂_τΓ is the
                // conformal Christoffel built from the gradient of R/2.
                let p = t.point(s * s, pos[0], pos[1]);
                conformal_gamma(0.5 * p.rx, 0.5 * p.ry, a, b)
            }
            _ => [0.0; 3],
        }
    }

    /// First-order form of the Jacobi equation in `s`: with `P` the covariant
    /// `s`-derivative of `Y`,
    /// `dY/ds = P − Γ(X̂, Y)`,
    /// `dP/ds = −Γ(X̂, P) − R(Y, X̂)X̂ + 2s²(∇_Y∇R)♯ − 4s((∇_YRic)(X̂,·))♯
    ///          − 4s·Ric(P, ·)♯ + 2s(∂_τΓ)(Y, X̂)`.
    /// The last term comes from the time dependence of the connection: for a
    /// metric moving by the flow, commuting the variation derivative with
    /// `D_s` picks up `−2s(∂_τΓ)` in addition to the curvature term.
    pub fn jacobi_rhs(&self, s: f64, pos: &Pt, xhat: &Pt, y: &Pt, p: &Pt) -> (Pt, Pt) {
        let dy = vec3::sub(p, &self.christoffel(s, pos, xhat, y));
        let mut dp = vec3::scale(&self.christoffel(s, pos, xhat, p), -1.0);
        dp = vec3::sub(&dp, &self.curv_yxx(s, pos, y, xhat));
        dp = vec3::axpy(2.0 * s * s, &self.hess_r_sharp(s, pos, y), &dp);
        dp = vec3::axpy(-4.0 * s, &self.dric_sharp(s, pos, y, xhat), &dp);
        dp = vec3::axpy(-4.0 * s, &self.ric_sharp(s, pos, p), &dp);
        dp = vec3::axpy(2.0 * s, &self.gamma_tau(s, pos, y, xhat), &dp);
        (dy, dp)
    }

    /// Weighted Li-Yau-Hamilton quadratic `2s²·Q(X, Y)` with `Y = sZ` and
    /// `X = X̂/(2s)`, written so that every term is regular at `s = 0`:
    /// `2s²Q = 2s²[ −s²∇²R(Z,Z) − ½⟨R(Z,X̂)Z,X̂⟩ − 2s(∇_X̂Ric)(Z,Z)
    ///   + 2s(∇_ZRic)(Z,X̂) − 2s²Ric_τ(Z,Z) + 2s²|Ric(Z,·)|² − Ric(Z,Z) ]`.
    pub fn q_weighted(&self, s: f64, pos: &Pt, xhat: &Pt, z: &Pt) -> f64 {
        let ric_z = self.ric_sharp(s, pos, z);
        let inner = -s * s * self.hess_r(s, pos, z)
            - 0.5 * self.curv_pair(s, pos, z, xhat)
            - 2.0 * s * self.dric(s, pos, xhat, z, z)
            + 2.0 * s * self.dric(s, pos, z, z, xhat)
            - 2.0 * s * s * self.ric_tau(s, pos, z)
            + 2.0 * s * s * self.dot(s, pos, &ric_z, &ric_z)
            - self.dot(s, pos, &ric_z, z);
        2.0 * s * s * inner
    }

    /// Shortest coordinate displacement from `a` to `b` (wrapped per axis on
    /// the torus, plain difference elsewhere).
    pub fn displacement(&self, a: &Pt, b: &Pt) -> Pt {
        match self {
            GeoField::Torus(t) => [
                crate::util::wrap_diff(a[0], b[0], t.lx),
                crate::util::wrap_diff(a[1], b[1], t.ly),
                0.0,
            ],
            _ => vec3::sub(b, a),
        }
    }
}
