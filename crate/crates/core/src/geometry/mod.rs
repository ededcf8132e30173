//! Manifold backends, curvature, differential operators and metric-weighted
//! integration.
//!
//! Three backends are supported:
//!
//! * flat `R^n` with closed-form fields and box-truncated Gauss quadrature,
//! * the round sphere `S^n` with a single time-dependent radius,
//! * a flat 2-torus carrying a conformal metric `g = e^{2u}·(dx² + dy²)`
//!   discretized on a uniform periodic grid.
//!
//! Every operation is a pure function of immutable inputs.

pub mod analytic;
pub mod general2d;
pub mod grid;
pub mod interp;

use crate::error::{LabError, Result};

pub use analytic::{AnalyticScalar, Pt};
pub use grid::GridShape;

/// Flat `R^n` with a truncation box for quadrature.
#[derive(Debug, Clone)]
pub struct EuclideanBackend {
    pub n: usize,
    /// Half-width of the integration box; integrands must be negligible
    /// outside `[-half_width, half_width]^n`.
    pub half_width: f64,
    /// Gauss-Legendre points per axis.
    pub quad_order: usize,
}

impl EuclideanBackend {
    pub fn new(n: usize, half_width: f64, quad_order: usize) -> Result<Self> {
        if n == 0 || n > 3 {
            return Err(LabError::InvalidParameter(format!("euclidean dimension {n} not in 1..=3")));
        }
        if half_width <= 0.0 || quad_order < 2 {
            return Err(LabError::InvalidParameter("need half_width > 0, quad_order >= 2".into()));
        }
        Ok(Self { n, half_width, quad_order })
    }

    /// Backend sized for Gaussian-weighted integrands of scale `tau`:
    /// half-width `10·sqrt(tau)` keeps the box-truncation error of the unit
    /// Gaussian mass near `1e-12`.
    pub fn gaussian_box(n: usize, tau: f64) -> Result<Self> {
        let order = if n == 3 { 56 } else { 72 };
        Self::new(n, 10.0 * tau.sqrt(), order)
    }

    /// Tensor-product Gauss-Legendre nodes and weights over the box.
    pub fn quadrature(&self) -> Vec<(Pt, f64)> {
        let (x1, w1) = crate::util::gauss_legendre(self.quad_order);
        let scale = self.half_width;
        let axis: Vec<(f64, f64)> =
            x1.iter().zip(&w1).map(|(&x, &w)| (scale * x, scale * w)).collect();
        let mut out = Vec::new();
        match self.n {
            1 => {
                for &(x, w) in &axis {
                    out.push(([x, 0.0, 0.0], w));
                }
            }
            2 => {
                for &(x, wx) in &axis {
                    for &(y, wy) in &axis {
                        out.push(([x, y, 0.0], wx * wy));
                    }
                }
            }
            _ => {
                for &(x, wx) in &axis {
                    for &(y, wy) in &axis {
                        for &(z, wz) in &axis {
                            out.push(([x, y, z], wx * wy * wz));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Round sphere of dimension `n` and radius `radius`.
///
/// Fields on this backend depend on the polar angle only (the uses in this
/// laboratory are rotationally symmetric about a base point); `lat_res` is
/// the number of latitude intervals of the `[0, π]` grid.
#[derive(Debug, Clone)]
pub struct SphereBackend {
    pub n: usize,
    pub radius: f64,
    pub lat_res: usize,
}

impl SphereBackend {
    pub fn new(n: usize, radius: f64) -> Result<Self> {
        Self::with_lat_res(n, radius, 512)
    }

    pub fn with_lat_res(n: usize, radius: f64, lat_res: usize) -> Result<Self> {
        if n == 0 || n > 3 {
            return Err(LabError::InvalidParameter(format!("sphere dimension {n} not in 1..=3")));
        }
        if radius <= 0.0 {
            return Err(LabError::InvalidParameter("sphere radius must be positive".into()));
        }
        if lat_res < 8 || lat_res % 2 != 0 {
            return Err(LabError::InvalidParameter("lat_res must be even and >= 8".into()));
        }
        Ok(Self { n, radius, lat_res })
    }

    /// Constant scalar curvature `n(n−1)/r²`.
    pub fn scalar_curvature(&self) -> f64 {
        (self.n * (self.n - 1)) as f64 / (self.radius * self.radius)
    }

    /// Total volume `vol(S^n)·r^n` in closed form.
    pub fn volume(&self) -> f64 {
        unit_sphere_volume(self.n) * self.radius.powi(self.n as i32)
    }

    /// Latitude nodes `θ_k = kπ/lat_res`.
    pub fn thetas(&self) -> Vec<f64> {
        (0..=self.lat_res)
            .map(|k| k as f64 * std::f64::consts::PI / self.lat_res as f64)
            .collect()
    }
}

/// Surface measure of the unit sphere `S^k` (k = 0..3).
pub fn unit_sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * std::f64::consts::PI,
        2 => 4.0 * std::f64::consts::PI,
        3 => 2.0 * std::f64::consts::PI * std::f64::consts::PI,
        _ => unreachable!("dimension > 3 rejected at construction"),
    }
}

/// Volume of the unit sphere `S^n` as a hypersurface: `area(S^{n}) = vol`.
fn unit_sphere_volume(n: usize) -> f64 {
    unit_sphere_area(n)
}

/// Flat 2-torus `[0,Lx) × [0,Ly)` with conformal metric `e^{2u}·flat`.
#[derive(Debug, Clone)]
pub struct TorusBackend {
    shape: GridShape,
    pub lx: f64,
    pub ly: f64,
    pub u: Vec<f64>,
}

impl TorusBackend {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, u: Vec<f64>) -> Result<Self> {
        if nx < 8 || ny < 8 {
            return Err(LabError::InvalidParameter("torus grid sizes must be >= 8".into()));
        }
        if lx <= 0.0 || ly <= 0.0 {
            return Err(LabError::InvalidParameter("torus periods must be positive".into()));
        }
        if u.len() != nx * ny {
            return Err(LabError::BackendMismatch(format!(
                "conformal factor length {} != {}x{}",
                u.len(),
                nx,
                ny
            )));
        }
        let shape = GridShape { nx, ny, hx: lx / nx as f64, hy: ly / ny as f64 };
        Ok(Self { shape, lx, ly, u })
    }

    pub fn flat(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(nx, ny, lx, ly, vec![0.0; nx * ny])
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    /// Conformal weight `e^{2u}` per node (the area element density).
    pub fn e2u(&self) -> Vec<f64> {
        self.u.iter().map(|&v| (2.0 * v).exp()).collect()
    }

    /// Inverse conformal weight `e^{−2u}` per node.
    pub fn em2u(&self) -> Vec<f64> {
        self.u.iter().map(|&v| (-2.0 * v).exp()).collect()
    }

    /// Metric volume `∫ e^{2u} dx dy`.
    pub fn volume(&self) -> f64 {
        self.shape.cell_sum(&self.e2u())
    }

    /// Scalar curvature grid `R = −2 e^{−2u} Δ_flat u`.
    pub fn scalar_curvature_grid(&self) -> Vec<f64> {
        let lap = self.shape.lap_flat(&self.u);
        lap.iter().zip(self.em2u()).map(|(l, w)| -2.0 * l * w).collect()
    }
}

/// Discriminates which backend a field belongs to.
#[derive(Debug, Clone)]
pub enum ManifoldBackend {
    Euclidean(EuclideanBackend),
    Sphere(SphereBackend),
    ConformalTorus(TorusBackend),
}

impl ManifoldBackend {
    pub fn dimension(&self) -> usize {
        match self {
            ManifoldBackend::Euclidean(b) => b.n,
            ManifoldBackend::Sphere(b) => b.n,
            ManifoldBackend::ConformalTorus(_) => 2,
        }
    }

    pub fn expect_torus(&self) -> Result<&TorusBackend> {
        match self {
            ManifoldBackend::ConformalTorus(t) => Ok(t),
            _ => Err(LabError::BackendMismatch("expected conformal torus backend".into())),
        }
    }
}

/// A scalar field tied to one backend family.
#[derive(Debug, Clone)]
pub enum ScalarField {
    /// Constant on any backend.
    Const(f64),
    /// Nodal values on the torus grid.
    TorusGrid(Vec<f64>),
    /// Latitude profile on the sphere (values at `θ_k`, length lat_res + 1).
    SphereLat(Vec<f64>),
    /// Closed-form field on flat space.
    EuclidAnalytic(AnalyticScalar),
}

impl ScalarField {
    /// Materialize as torus nodal values.
    pub fn torus_values(&self, m: &TorusBackend) -> Result<Vec<f64>> {
        match self {
            ScalarField::Const(c) => Ok(vec![*c; m.shape().len()]),
            ScalarField::TorusGrid(v) => {
                if v.len() != m.shape().len() {
                    return Err(LabError::BackendMismatch(format!(
                        "field length {} != grid {}",
                        v.len(),
                        m.shape().len()
                    )));
                }
                Ok(v.clone())
            }
            _ => Err(LabError::BackendMismatch("field does not live on the torus".into())),
        }
    }

    /// View as a euclidean analytic field.
    pub fn euclid_analytic(&self, n: usize) -> Result<AnalyticScalar> {
        match self {
            ScalarField::Const(c) => Ok(AnalyticScalar::constant(*c)),
            ScalarField::EuclidAnalytic(a) => {
                let _ = n;
                Ok(a.clone())
            }
            _ => Err(LabError::BackendMismatch("field does not live on flat space".into())),
        }
    }

    /// Materialize as a sphere latitude profile.
    pub fn sphere_values(&self, m: &SphereBackend) -> Result<Vec<f64>> {
        match self {
            ScalarField::Const(c) => Ok(vec![*c; m.lat_res + 1]),
            ScalarField::SphereLat(v) => {
                if v.len() != m.lat_res + 1 {
                    return Err(LabError::BackendMismatch("latitude profile length mismatch".into()));
                }
                Ok(v.clone())
            }
            _ => Err(LabError::BackendMismatch("field does not live on the sphere".into())),
        }
    }
}

/// A symmetric 2-tensor field.
#[derive(Debug, Clone)]
pub enum SymTensorField {
    /// Identically zero on any backend.
    Zero,
    /// Component grids on the torus (coordinate components, lower indices).
    TorusGrid { xx: Vec<f64>, xy: Vec<f64>, yy: Vec<f64> },
    /// Multiple of the metric on the sphere: `c·g`.
    SphereConformal(f64),
    /// Closed-form components on flat space.
    EuclidAnalytic(AnalyticTensor),
}

/// Closed-form symmetric 2-tensor on flat space.
#[derive(Clone)]
pub struct AnalyticTensor(pub std::sync::Arc<dyn Fn(&Pt) -> [[f64; 3]; 3] + Send + Sync>);

impl AnalyticTensor {
    pub fn components(&self, x: &Pt) -> [[f64; 3]; 3] {
        (self.0)(x)
    }
}

impl std::fmt::Debug for AnalyticTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AnalyticTensor(..)")
    }
}

impl SymTensorField {
    pub fn torus_components(&self, m: &TorusBackend) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let len = m.shape().len();
        match self {
            SymTensorField::Zero => Ok((vec![0.0; len], vec![0.0; len], vec![0.0; len])),
            SymTensorField::TorusGrid { xx, xy, yy } => {
                if xx.len() != len || xy.len() != len || yy.len() != len {
                    return Err(LabError::BackendMismatch("tensor component length mismatch".into()));
                }
                Ok((xx.clone(), xy.clone(), yy.clone()))
            }
            _ => Err(LabError::BackendMismatch("tensor does not live on the torus".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Scalar curvature of the backend metric.
///
/// Torus: `R = −2 e^{−2u} Δ_flat u`; sphere: `n(n−1)/r²`; flat space: 0.
pub fn scalar_curvature(m: &ManifoldBackend) -> ScalarField {
    match m {
        ManifoldBackend::Euclidean(_) => ScalarField::Const(0.0),
        ManifoldBackend::Sphere(s) => ScalarField::Const(s.scalar_curvature()),
        ManifoldBackend::ConformalTorus(t) => ScalarField::TorusGrid(t.scalar_curvature_grid()),
    }
}

/// Laplace-Beltrami operator `Δ^g φ = g^{ij}(∂_i∂_j φ − Γ^k_ij ∂_k φ)`.
///
/// On the torus the 2-D conformal identity `Δ^g = e^{−2u} Δ_flat` applies;
/// the discrete operator is exactly self-adjoint with respect to `dV`.
pub fn laplace_beltrami(m: &ManifoldBackend, phi: &ScalarField) -> Result<ScalarField> {
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let v = phi.torus_values(t)?;
            let lap = t.shape().lap_flat(&v);
            let w = t.em2u();
            Ok(ScalarField::TorusGrid(lap.iter().zip(&w).map(|(l, w)| l * w).collect()))
        }
        ManifoldBackend::Sphere(s) => {
            let v = phi.sphere_values(s)?;
            Ok(ScalarField::SphereLat(sphere_laplacian(s, &v)))
        }
        ManifoldBackend::Euclidean(b) => {
            let n = b.n;
            let a = phi.euclid_analytic(n)?;
            Ok(ScalarField::EuclidAnalytic(AnalyticScalar::from_fn(n, move |x| {
                let h = a.hessian(x);
                (0..n).map(|i| h[i][i]).sum()
            })))
        }
    }
}

/// Latitude-profile Laplacian `(φ'' + (n−1)cotθ·φ')/r²` with the symmetric
/// pole limit `n·φ''(0)/r²`.
fn sphere_laplacian(s: &SphereBackend, v: &[f64]) -> Vec<f64> {
    let m = s.lat_res;
    let h = std::f64::consts::PI / m as f64;
    let r2 = s.radius * s.radius;
    let nf = s.n as f64;
    // Symmetric extension across both poles.
    let get = |k: isize| -> f64 {
        let k = if k < 0 { -k } else if k as usize > m { 2 * m as isize - k } else { k };
        v[k as usize]
    };
    (0..=m as isize)
        .map(|k| {
            let d2 = (get(k + 1) - 2.0 * get(k) + get(k - 1)) / (h * h);
            if k == 0 || k == m as isize {
                nf * d2 / r2
            } else {
                let d1 = (get(k + 1) - get(k - 1)) / (2.0 * h);
                let theta = k as f64 * h;
                (d2 + (nf - 1.0) * d1 / theta.tan()) / r2
            }
        })
        .collect()
}

/// Squared metric gradient `|∇φ|² = g^{ij} ∂_iφ ∂_jφ ≥ 0`.
pub fn grad_norm_sq(m: &ManifoldBackend, phi: &ScalarField) -> Result<ScalarField> {
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let v = phi.torus_values(t)?;
            let s = t.shape();
            let (dx, dy) = (s.dx(&v), s.dy(&v));
            let w = t.em2u();
            Ok(ScalarField::TorusGrid(
                dx.iter()
                    .zip(&dy)
                    .zip(&w)
                    .map(|((a, b), w)| (a * a + b * b) * w)
                    .collect(),
            ))
        }
        ManifoldBackend::Sphere(s) => {
            let v = phi.sphere_values(s)?;
            let m_ = s.lat_res;
            let h = std::f64::consts::PI / m_ as f64;
            let r2 = s.radius * s.radius;
            let get = |k: isize| -> f64 {
                let k = if k < 0 { -k } else if k as usize > m_ { 2 * m_ as isize - k } else { k };
                v[k as usize]
            };
            Ok(ScalarField::SphereLat(
                (0..=m_ as isize)
                    .map(|k| {
                        let d1 = (get(k + 1) - get(k - 1)) / (2.0 * h);
                        d1 * d1 / r2
                    })
                    .collect(),
            ))
        }
        ManifoldBackend::Euclidean(b) => {
            let n = b.n;
            let a = phi.euclid_analytic(n)?;
            Ok(ScalarField::EuclidAnalytic(AnalyticScalar::from_fn(n, move |x| {
                let g = a.gradient(x);
                (0..n).map(|i| g[i] * g[i]).sum()
            })))
        }
    }
}

/// Covariant Hessian `∇_i∇_j φ = ∂_i∂_j φ − Γ^k_ij ∂_k φ`.
///
/// Torus Christoffels of `g = e^{2u}δ`:
/// `Γ^x = (u_x, u_y; u_y, −u_x)`, `Γ^y = (−u_y, u_x; u_x, u_y)`.
pub fn hessian(m: &ManifoldBackend, phi: &ScalarField) -> Result<SymTensorField> {
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let v = phi.torus_values(t)?;
            let s = t.shape();
            let (px, py) = (s.dx(&v), s.dy(&v));
            let (pxx, pyy, pxy) = (s.dxx(&v), s.dyy(&v), s.dxy(&v));
            let (ux, uy) = (s.dx(&t.u), s.dy(&t.u));
            let len = s.len();
            let mut xx = Vec::with_capacity(len);
            let mut xy = Vec::with_capacity(len);
            let mut yy = Vec::with_capacity(len);
            for i in 0..len {
                xx.push(pxx[i] - (ux[i] * px[i] - uy[i] * py[i]));
                xy.push(pxy[i] - (uy[i] * px[i] + ux[i] * py[i]));
                yy.push(pyy[i] - (-ux[i] * px[i] + uy[i] * py[i]));
            }
            Ok(SymTensorField::TorusGrid { xx, xy, yy })
        }
        ManifoldBackend::Euclidean(b) => {
            let a = phi.euclid_analytic(b.n)?;
            Ok(SymTensorField::EuclidAnalytic(AnalyticTensor(std::sync::Arc::new(move |x| {
                a.hessian(x)
            }))))
        }
        ManifoldBackend::Sphere(_) => match phi {
            ScalarField::Const(_) => Ok(SymTensorField::Zero),
            _ => Err(LabError::BackendMismatch(
                "sphere Hessian supported for constant fields only".into(),
            )),
        },
    }
}

/// Metric-weighted integral `∫_M φ dV`.
pub fn integrate(m: &ManifoldBackend, phi: &ScalarField) -> Result<f64> {
    match m {
        ManifoldBackend::ConformalTorus(t) => {
            let v = phi.torus_values(t)?;
            let w = t.e2u();
            Ok(t.shape().cell_sum(&v.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<_>>()))
        }
        ManifoldBackend::Sphere(s) => match phi {
            ScalarField::Const(c) => Ok(c * s.volume()),
            _ => {
                let v = phi.sphere_values(s)?;
                let thetas = s.thetas();
                let vals: Vec<f64> = v
                    .iter()
                    .zip(&thetas)
                    .map(|(&f, &th)| f * th.sin().powi(s.n as i32 - 1))
                    .collect();
                let shell = unit_sphere_area(s.n - 1) * s.radius.powi(s.n as i32);
                Ok(shell * crate::util::simpson(&vals, 0.0, std::f64::consts::PI))
            }
        },
        ManifoldBackend::Euclidean(b) => {
            let a = phi.euclid_analytic(b.n)?;
            integrate_euclid(b, |x| a.value(x))
        }
    }
}

/// Integrate an arbitrary closure over the euclidean box, with a decay check
/// on the box boundary.
pub fn integrate_euclid<F: Fn(&Pt) -> f64>(b: &EuclideanBackend, f: F) -> Result<f64> {
    // Decay check: sample the integrand on the boundary of the box.
    let w = b.half_width;
    let interior = f(&[0.0; 3]).abs().max(f(&[0.3 * w, 0.0, 0.0]).abs());
    let mut boundary: f64 = 0.0;
    for sx in [-1.0, 1.0] {
        let mut p = [0.0; 3];
        p[0] = sx * w;
        boundary = boundary.max(f(&p).abs());
        if b.n >= 2 {
            p[1] = 0.5 * w;
            boundary = boundary.max(f(&p).abs());
        }
    }
    if boundary > 1e-6 * (interior + 1e-300) {
        return Err(LabError::NonDecaying(format!(
            "boundary magnitude {boundary:.3e} vs interior {interior:.3e}"
        )));
    }
    Ok(b.quadrature().iter().map(|(p, w)| w * f(p)).sum())
}

/// Metric rescaling `g → αg` (exact, no discretization).
///
/// Torus: `u → u + ln(α)/2`; sphere: `r → sqrt(α)·r`; flat space is a fixed
/// point of scaling (coordinates absorb the factor).
pub fn rescale(m: &ManifoldBackend, alpha: f64) -> Result<ManifoldBackend> {
    if alpha <= 0.0 {
        return Err(LabError::InvalidParameter("rescale factor must be positive".into()));
    }
    Ok(match m {
        ManifoldBackend::Euclidean(b) => ManifoldBackend::Euclidean(b.clone()),
        ManifoldBackend::Sphere(s) => {
            let mut s = s.clone();
            s.radius *= alpha.sqrt();
            ManifoldBackend::Sphere(s)
        }
        ManifoldBackend::ConformalTorus(t) => {
            let shift = 0.5 * alpha.ln();
            let u = t.u.iter().map(|&v| v + shift).collect();
            ManifoldBackend::ConformalTorus(TorusBackend::new(
                t.shape().nx,
                t.shape().ny,
                t.lx,
                t.ly,
                u,
            )?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus_with(n: usize, f: impl Fn(f64, f64) -> f64) -> TorusBackend {
        let shape = GridShape { nx: n, ny: n, hx: 2.0 * PI / n as f64, hy: 2.0 * PI / n as f64 };
        let u = shape.from_fn(f);
        TorusBackend::new(n, n, 2.0 * PI, 2.0 * PI, u).unwrap()
    }

    #[test]
    fn curvature_trivial_backends() {
        let e = ManifoldBackend::Euclidean(EuclideanBackend::new(3, 8.0, 16).unwrap());
        match scalar_curvature(&e) {
            ScalarField::Const(c) => assert_eq!(c, 0.0),
            _ => panic!("expected constant"),
        }
        let s = ManifoldBackend::Sphere(SphereBackend::new(2, 1.0).unwrap());
        match scalar_curvature(&s) {
            ScalarField::Const(c) => assert!((c - 2.0).abs() < 1e-15),
            _ => panic!("expected constant"),
        }
    }

    #[test]
    fn torus_curvature_matches_double_resolution_oracle() {
        // Oracle: evaluate −2 e^{−2u} Δu with the same closed form at double
        // resolution and compare on the shared nodes.
        let f = |x: f64, y: f64| 0.1 * x.sin() + 0.05 * (x + 2.0 * y).cos();
        let coarse = torus_with(32, f);
        let fine = torus_with(64, f);
        let rc = coarse.scalar_curvature_grid();
        let rf = fine.scalar_curvature_grid();
        let mut err: f64 = 0.0;
        for j in 0..32 {
            for i in 0..32 {
                err = err.max((rc[j * 32 + i] - rf[(2 * j) * 64 + 2 * i]).abs());
            }
        }
        assert!(err < 5e-4, "coarse-vs-fine curvature error {err}");
    }

    #[test]
    fn torus_laplacian_fourier_eigenfunction() {
        let t = torus_with(64, |_, _| 0.0);
        let phi = ScalarField::TorusGrid(t.shape().from_fn(|x, _| x.sin()));
        let m = ManifoldBackend::ConformalTorus(t);
        let lap = laplace_beltrami(&m, &phi).unwrap();
        let (ScalarField::TorusGrid(l), ScalarField::TorusGrid(p)) = (&lap, &phi) else {
            panic!()
        };
        for (a, b) in l.iter().zip(p) {
            assert!((a + b).abs() < 1e-3 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn gradient_norm_conformal_weight() {
        let t = torus_with(48, |x, _| 0.1 * x.sin());
        let phi = ScalarField::TorusGrid(t.shape().from_fn(|_, y| y.cos()));
        let em2u = t.em2u();
        let m = ManifoldBackend::ConformalTorus(t.clone());
        let ScalarField::TorusGrid(g) = grad_norm_sq(&m, &phi).unwrap() else { panic!() };
        // oracle: e^{-2u} sin^2(y) with the same stencil error budget
        let s = t.shape();
        for j in 0..s.ny {
            for i in 0..s.nx {
                let y = j as f64 * s.hy;
                let exact = em2u[s.idx(i, j)] * y.sin() * y.sin();
                assert!((g[s.idx(i, j)] - exact).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn hessian_trace_equals_laplacian() {
        // The Christoffel contraction cancels exactly in the trace for
        // matching stencils: tr_g Hess = Δ^g to rounding.
        let t = torus_with(32, |x, y| 0.2 * (x.sin() + (2.0 * y).cos()));
        let phi = ScalarField::TorusGrid(t.shape().from_fn(|x, y| (x + y).sin()));
        let em2u = t.em2u();
        let m = ManifoldBackend::ConformalTorus(t.clone());
        let SymTensorField::TorusGrid { xx, yy, .. } = hessian(&m, &phi).unwrap() else {
            panic!()
        };
        let ScalarField::TorusGrid(lap) = laplace_beltrami(&m, &phi).unwrap() else { panic!() };
        for i in 0..xx.len() {
            let tr = em2u[i] * (xx[i] + yy[i]);
            assert!((tr - lap[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn euclid_gaussian_quadratic_fields() {
        let b = EuclideanBackend::gaussian_box(2, 1.0).unwrap();
        let m = ManifoldBackend::Euclidean(b);
        let tau = 1.0;
        let f = ScalarField::EuclidAnalytic(AnalyticScalar::radial_quadratic(
            2,
            1.0 / (4.0 * tau),
            [0.0; 3],
            0.0,
        ));
        let ScalarField::EuclidAnalytic(g) = grad_norm_sq(&m, &f).unwrap() else { panic!() };
        let x = [1.0, -2.0, 0.0];
        assert!((g.value(&x) - 5.0 / (4.0 * tau * tau)).abs() < 1e-10);
    }

    #[test]
    fn integrate_gaussian_mass() {
        for n in 1..=3usize {
            let tau = 0.7;
            let b = EuclideanBackend::gaussian_box(n, tau).unwrap();
            let norm = (4.0 * PI * tau).powf(-(n as f64) / 2.0);
            let val = integrate_euclid(&b, |x| {
                let r2: f64 = x[..n].iter().map(|v| v * v).sum();
                norm * (-r2 / (4.0 * tau)).exp()
            })
            .unwrap();
            assert!((val - 1.0).abs() < 1e-10, "n={n}: mass {val}");
        }
    }

    #[test]
    fn integrate_flat_torus_area() {
        let t = TorusBackend::flat(16, 16, 2.0, 3.0).unwrap();
        let m = ManifoldBackend::ConformalTorus(t);
        let one = ScalarField::Const(1.0);
        assert!((integrate(&m, &one).unwrap() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn integrate_sphere_volume_profile_vs_closed_form() {
        let s = SphereBackend::new(3, 1.3).unwrap();
        let m = ManifoldBackend::Sphere(s.clone());
        let profile = ScalarField::SphereLat(vec![1.0; s.lat_res + 1]);
        let v = integrate(&m, &profile).unwrap();
        assert!((v - s.volume()).abs() < 1e-8 * s.volume());
    }

    #[test]
    fn rescale_curvature_law() {
        let t = torus_with(32, |x, y| 0.1 * (x + y).sin());
        let m = ManifoldBackend::ConformalTorus(t);
        let alpha = 2.7;
        let m2 = rescale(&m, alpha).unwrap();
        let ScalarField::TorusGrid(r1) = scalar_curvature(&m) else { panic!() };
        let ScalarField::TorusGrid(r2) = scalar_curvature(&m2) else { panic!() };
        for (a, b) in r1.iter().zip(&r2) {
            assert!((b - a / alpha).abs() < 1e-12 * (1.0 + a.abs()));
        }
        let s = ManifoldBackend::Sphere(SphereBackend::new(2, 1.0).unwrap());
        let ManifoldBackend::Sphere(s2) = rescale(&s, 4.0).unwrap() else { panic!() };
        assert!((s2.radius - 2.0).abs() < 1e-15);
    }

    #[test]
    fn divergence_theorem_on_torus() {
        let t = torus_with(24, |x, y| 0.15 * (x.sin() + y.cos()));
        let m = ManifoldBackend::ConformalTorus(t.clone());
        let phi = ScalarField::TorusGrid(t.shape().from_fn(|x, y| (2.0 * x).cos() * y.sin()));
        let lap = laplace_beltrami(&m, &phi).unwrap();
        let total = integrate(&m, &lap).unwrap();
        assert!(total.abs() < 1e-10);
    }

    #[test]
    fn self_adjointness_weighted() {
        let t = torus_with(16, |x, y| 0.2 * (x + 2.0 * y).sin());
        let m = ManifoldBackend::ConformalTorus(t.clone());
        let a = ScalarField::TorusGrid(t.shape().from_fn(|x, _| x.cos()));
        let b = ScalarField::TorusGrid(t.shape().from_fn(|x, y| (x - y).sin()));
        let la = laplace_beltrami(&m, &a).unwrap();
        let lb = laplace_beltrami(&m, &b).unwrap();
        let (ScalarField::TorusGrid(av), ScalarField::TorusGrid(bv)) = (&a, &b) else { panic!() };
        let (ScalarField::TorusGrid(lav), ScalarField::TorusGrid(lbv)) = (&la, &lb) else {
            panic!()
        };
        let w = t.e2u();
        let lhs: f64 = lav.iter().zip(bv.iter()).zip(&w).map(|((p, q), w)| p * q * w).sum();
        let rhs: f64 = lbv.iter().zip(av.iter()).zip(&w).map(|((p, q), w)| p * q * w).sum();
        assert!((lhs - rhs).abs() < 1e-10 * (lhs.abs().max(1.0)));
    }
}
