//! Gauge-modified flow machinery: the closed-form flat-space metric and
//! potential pair, and pull-backs of torus metrics along the gradient flow
//! of a potential.
//!
//! These are the two ingredients used to check that the modified flow is the
//! plain flow transported by a time-dependent diffeomorphism: flat space
//! admits an exact solution family, and on the torus the diffeomorphism is
//! realized numerically and the transported pair is evaluated through the
//! fully general (non-conformal) metric path.

use crate::error::{LabError, Result};
use crate::geometry::general2d::Metric2D;
use crate::geometry::interp::sample_periodic;
use crate::geometry::{AnalyticScalar, TorusBackend};

/// Exact solution of the metric-and-potential system
/// `∂g/∂t = −2(Ric + Hess f)`, `∂f/∂t = −Δf − R` on flat space:
/// `g = c·δ`, `f = a|x|² + b` with `ċ = −4a`, `a` constant and
/// `ḃ = −2na/c`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticFlatPair {
    pub n: usize,
    /// Conformal scale of the metric `g = c·δ`.
    pub c: f64,
    /// Quadratic coefficient of the potential.
    pub a: f64,
    /// Constant offset of the potential.
    pub b: f64,
}

impl QuadraticFlatPair {
    pub fn new(n: usize, c: f64, a: f64, b: f64) -> Result<Self> {
        if n == 0 || n > 3 {
            return Err(LabError::InvalidParameter(format!("dimension {n} not in 1..=3")));
        }
        if c <= 0.0 {
            return Err(LabError::InvalidParameter("metric scale must be positive".into()));
        }
        Ok(Self { n, c, a, b })
    }

    /// The pair at time `t` (closed form): `c(t) = c₀ − 4at`,
    /// `b(t) = b₀ + (n/2)·ln(c(t)/c₀)`.
    pub fn at_time(&self, t: f64) -> Result<Self> {
        let c = self.c - 4.0 * self.a * t;
        if c <= 0.0 {
            return Err(LabError::Extinction { t: self.c / (4.0 * self.a) });
        }
        let b = self.b + self.n as f64 / 2.0 * (c / self.c).ln();
        Ok(Self { n: self.n, c, a: self.a, b })
    }

    /// The potential as a closed-form field.
    pub fn potential(&self) -> AnalyticScalar {
        AnalyticScalar::radial_quadratic(self.n, self.a, [0.0; 3], self.b)
    }
}

/// Integrate the gradient flow `dx/ds = ∇^g f = e^{−2u}∇f` of all grid nodes
/// for `time`, returning the displacement components `ψ(x) − x` (smooth and
/// periodic, no wrap jumps).
pub fn gradient_flow_map(
    t: &TorusBackend,
    f: &[f64],
    time: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let shape = t.shape();
    if f.len() != shape.len() {
        return Err(LabError::BackendMismatch("potential grid size mismatch".into()));
    }
    if steps == 0 {
        return Err(LabError::InvalidParameter("need at least one flow step".into()));
    }
    let fx = shape.dx(f);
    let fy = shape.dy(f);
    let em2u = t.em2u();
    let vel = |x: f64, y: f64| -> (f64, f64) {
        let w = sample_periodic(&shape, &em2u, x, y);
        (w * sample_periodic(&shape, &fx, x, y), w * sample_periodic(&shape, &fy, x, y))
    };
    let ds = time / steps as f64;
    let mut dx = vec![0.0; shape.len()];
    let mut dy = vec![0.0; shape.len()];
    for j in 0..shape.ny {
        for i in 0..shape.nx {
            let (x0, y0) = (i as f64 * shape.hx, j as f64 * shape.hy);
            let (mut x, mut y) = (x0, y0);
            for _ in 0..steps {
                let (k1x, k1y) = vel(x, y);
                let (k2x, k2y) = vel(x + 0.5 * ds * k1x, y + 0.5 * ds * k1y);
                let (k3x, k3y) = vel(x + 0.5 * ds * k2x, y + 0.5 * ds * k2y);
                let (k4x, k4y) = vel(x + ds * k3x, y + ds * k3y);
                x += ds / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
                y += ds / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            }
            let idx = shape.idx(i, j);
            dx[idx] = x - x0;
            dy[idx] = y - y0;
        }
    }
    Ok((dx, dy))
}

/// Pull a conformal torus pair `(g, f)` back along the gradient flow of `f`
/// run for `time`: `ĝ = Dψᵀ g(ψ) Dψ`, `f̂ = f∘ψ`. The result leaves the
/// conformal family, hence the general-metric representation.
pub fn pullback_pair(
    t: &TorusBackend,
    f: &[f64],
    time: f64,
    steps: usize,
) -> Result<(Metric2D, Vec<f64>)> {
    let shape = t.shape();
    let (dx, dy) = gradient_flow_map(t, f, time, steps)?;
    // Jacobian of ψ = id + displacement from stencils of the displacement.
    let dxx = shape.dx(&dx);
    let dxy = shape.dy(&dx);
    let dyx = shape.dx(&dy);
    let dyy = shape.dy(&dy);
    let mut gxx = vec![0.0; shape.len()];
    let mut gxy = vec![0.0; shape.len()];
    let mut gyy = vec![0.0; shape.len()];
    let mut f_hat = vec![0.0; shape.len()];
    for j in 0..shape.ny {
        for i in 0..shape.nx {
            let idx = shape.idx(i, j);
            let px = i as f64 * shape.hx + dx[idx];
            let py = j as f64 * shape.hy + dy[idx];
            let w = (2.0 * sample_periodic(&shape, &t.u, px, py)).exp();
            let j11 = 1.0 + dxx[idx];
            let j12 = dxy[idx];
            let j21 = dyx[idx];
            let j22 = 1.0 + dyy[idx];
            gxx[idx] = w * (j11 * j11 + j21 * j21);
            gxy[idx] = w * (j11 * j12 + j21 * j22);
            gyy[idx] = w * (j12 * j12 + j22 * j22);
            f_hat[idx] = sample_periodic(&shape, f, px, py);
        }
    }
    Ok((Metric2D::new(shape, gxx, gxy, gyy)?, f_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::LabError;
    use crate::util::diff1;
    use std::f64::consts::PI;

    #[test]
    fn flat_pair_satisfies_its_equations() {
        let p = QuadraticFlatPair::new(3, 2.0, 0.3, -0.7).unwrap();
        // ċ = −4a and ḃ = −2na/c, checked by differentiating the closed form.
        let c_dot = diff1(|t| p.at_time(t).unwrap().c, 0.2, 1e-4);
        let b_dot = diff1(|t| p.at_time(t).unwrap().b, 0.2, 1e-4);
        let at = p.at_time(0.2).unwrap();
        assert!((c_dot + 4.0 * p.a).abs() < 1e-9);
        assert!((b_dot + 2.0 * 3.0 * p.a / at.c).abs() < 1e-9);
        assert_eq!(at.a, p.a);
        // running into c = 0 reports extinction
        assert!(matches!(p.at_time(5.0), Err(LabError::Extinction { .. })));
    }

    fn curved_torus(n: usize) -> TorusBackend {
        let flat = TorusBackend::flat(n, n, 2.0 * PI, 2.0 * PI).unwrap();
        let u = flat.shape().from_fn(|x, y| 0.06 * x.sin() + 0.04 * (x + y).cos());
        TorusBackend::new(n, n, 2.0 * PI, 2.0 * PI, u).unwrap()
    }

    #[test]
    fn constant_potential_gives_identity_pullback() {
        let t = curved_torus(32);
        let f = vec![1.3; t.shape().len()];
        let (g, f_hat) = pullback_pair(&t, &f, 0.5, 16).unwrap();
        let e2u = t.e2u();
        for i in 0..f.len() {
            assert!((g.gxx[i] - e2u[i]).abs() < 1e-13);
            assert!(g.gxy[i].abs() < 1e-13);
            assert!((g.gyy[i] - e2u[i]).abs() < 1e-13);
            assert!((f_hat[i] - 1.3).abs() < 1e-13);
        }
    }

    #[test]
    fn pullback_preserves_volume_and_integrals() {
        let t = curved_torus(64);
        let shape = t.shape();
        let f = shape.from_fn(|x, y| 0.05 * x.cos() + 0.03 * y.sin());
        let (g, _) = pullback_pair(&t, &f, 0.2, 32).unwrap();
        let ones = vec![1.0; shape.len()];
        let vol_hat = g.integrate(&ones);
        assert!(
            (vol_hat - t.volume()).abs() < 1e-6 * t.volume(),
            "volume changed under pull-back: {} vs {}",
            vol_hat,
            t.volume()
        );
        // ∫ φ∘ψ dV_ĝ = ∫ φ dV_g for any scalar φ
        let phi = shape.from_fn(|x, y| (x - 2.0 * y).sin() + 0.8);
        let (dx, dy) = gradient_flow_map(&t, &f, 0.2, 32).unwrap();
        let mut phi_hat = vec![0.0; shape.len()];
        for j in 0..shape.ny {
            for i in 0..shape.nx {
                let idx = shape.idx(i, j);
                phi_hat[idx] = sample_periodic(
                    &shape,
                    &phi,
                    i as f64 * shape.hx + dx[idx],
                    j as f64 * shape.hy + dy[idx],
                );
            }
        }
        let lhs = g.integrate(&phi_hat);
        let e2u = t.e2u();
        let rhs = shape
            .cell_sum(&phi.iter().zip(&e2u).map(|(p, w)| p * w).collect::<Vec<_>>());
        assert!(
            (lhs - rhs).abs() < 1e-5 * rhs.abs(),
            "scalar integral not invariant: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn pullback_transports_curvature() {
        // Scalar curvature is natural under diffeomorphisms: R̂ = R∘ψ.
        let t = curved_torus(64);
        let shape = t.shape();
        let f = shape.from_fn(|x, y| 0.05 * (x + 0.4).sin() + 0.04 * y.cos());
        let (g, _) = pullback_pair(&t, &f, 0.15, 32).unwrap();
        let r_hat = g.scalar_curvature();
        let r = t.scalar_curvature_grid();
        let (dx, dy) = gradient_flow_map(&t, &f, 0.15, 32).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..shape.ny {
            for i in 0..shape.nx {
                let idx = shape.idx(i, j);
                let expect = sample_periodic(
                    &shape,
                    &r,
                    i as f64 * shape.hx + dx[idx],
                    j as f64 * shape.hy + dy[idx],
                );
                worst = worst.max((r_hat[idx] - expect).abs());
            }
        }
        assert!(worst < 5e-5, "curvature transport error {worst}");
    }
}
