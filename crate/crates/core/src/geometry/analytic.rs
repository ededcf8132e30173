//! Closed-form scalar fields on the euclidean backend.
//!
//! Euclidean computations are analytic-first: a field carries callables for
//! its value, gradient and Hessian so that quadratures and geodesic formulas
//! reproduce the flat-space examples to near machine precision. Builders
//! that have exact derivatives supply them; `from_fn` falls back to
//! high-order finite differences of the value callable.

use std::sync::Arc;

use crate::util::{diff1, diff2};

/// Point type shared across backends; only the first `n` entries are used.
pub type Pt = [f64; 3];

type ValFn = dyn Fn(&Pt) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Pt) -> [f64; 3] + Send + Sync;
type HessFn = dyn Fn(&Pt) -> [[f64; 3]; 3] + Send + Sync;

/// A scalar field on flat R^n given by closed-form callables.
#[derive(Clone)]
pub struct AnalyticScalar {
    val: Arc<ValFn>,
    grad: Arc<GradFn>,
    hess: Arc<HessFn>,
}

impl std::fmt::Debug for AnalyticScalar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AnalyticScalar(..)")
    }
}

impl AnalyticScalar {
    pub fn value(&self, x: &Pt) -> f64 {
        (self.val)(x)
    }

    pub fn gradient(&self, x: &Pt) -> [f64; 3] {
        (self.grad)(x)
    }

    pub fn hessian(&self, x: &Pt) -> [[f64; 3]; 3] {
        (self.hess)(x)
    }

    /// Field with exact derivative callables.
    pub fn with_derivatives(
        val: impl Fn(&Pt) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&Pt) -> [f64; 3] + Send + Sync + 'static,
        hess: impl Fn(&Pt) -> [[f64; 3]; 3] + Send + Sync + 'static,
    ) -> Self {
        Self { val: Arc::new(val), grad: Arc::new(grad), hess: Arc::new(hess) }
    }

    /// Field from a value callable only; derivatives by fourth-order
    /// centered differences with step `1e-3` (adequate for smooth fields at
    /// the tolerances used on this backend's derivative paths).
    pub fn from_fn(n: usize, val: impl Fn(&Pt) -> f64 + Send + Sync + 'static) -> Self {
        let val = Arc::new(val);
        let h = 1e-3;
        let vg = val.clone();
        let grad = move |x: &Pt| {
            let mut g = [0.0; 3];
            for (a, ga) in g.iter_mut().enumerate().take(n) {
                let vg = &vg;
                *ga = diff1(
                    |t| {
                        let mut y = *x;
                        y[a] = t;
                        vg(&y)
                    },
                    x[a],
                    h,
                );
            }
            g
        };
        let vh = val.clone();
        let hess = move |x: &Pt| {
            let mut m = [[0.0; 3]; 3];
            for a in 0..n {
                let vh1 = &vh;
                m[a][a] = diff2(
                    |t| {
                        let mut y = *x;
                        y[a] = t;
                        vh1(&y)
                    },
                    x[a],
                    h,
                );
                for b in (a + 1)..n {
                    let vh2 = &vh;
                    let mixed = diff1(
                        |s| {
                            diff1(
                                |t| {
                                    let mut y = *x;
                                    y[a] = s;
                                    y[b] = t;
                                    vh2(&y)
                                },
                                x[b],
                                h,
                            )
                        },
                        x[a],
                        h,
                    );
                    m[a][b] = mixed;
                    m[b][a] = mixed;
                }
            }
            m
        };
        Self { val, grad: Arc::new(grad), hess: Arc::new(hess) }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_derivatives(move |_| c, |_| [0.0; 3], |_| [[0.0; 3]; 3])
    }

    /// `a·|x − c|² + b`, the workhorse for Gaussian potentials.
    pub fn radial_quadratic(n: usize, a: f64, center: Pt, b: f64) -> Self {
        let val = move |x: &Pt| {
            let mut r2 = 0.0;
            for i in 0..n {
                r2 += (x[i] - center[i]) * (x[i] - center[i]);
            }
            a * r2 + b
        };
        let grad = move |x: &Pt| {
            let mut g = [0.0; 3];
            for i in 0..n {
                g[i] = 2.0 * a * (x[i] - center[i]);
            }
            g
        };
        let hess = move |_: &Pt| {
            let mut m = [[0.0; 3]; 3];
            for (i, row) in m.iter_mut().enumerate().take(n) {
                row[i] = 2.0 * a;
            }
            m
        };
        Self::with_derivatives(val, grad, hess)
    }

    /// Gaussian potential of scale `tau`: `|x|²/(4τ) + (n/2)·ln(4πτ)`.
    /// This is the compatible soliton potential on flat space.
    pub fn gaussian_potential(n: usize, tau: f64) -> Self {
        let b = 0.5 * n as f64 * (4.0 * std::f64::consts::PI * tau).ln();
        Self::radial_quadratic(n, 1.0 / (4.0 * tau), [0.0; 3], b)
    }

    /// Gaussian bump `amp · exp(−|x − c|²/(2σ²))` with exact derivatives;
    /// sums of these are the seeded perturbations for randomized-potential
    /// suites (smooth, rapidly decaying, closed-form).
    pub fn bump(n: usize, amp: f64, center: Pt, sigma: f64) -> Self {
        let s2 = sigma * sigma;
        let val = move |x: &Pt| {
            let mut r2 = 0.0;
            for i in 0..n {
                r2 += (x[i] - center[i]) * (x[i] - center[i]);
            }
            amp * (-r2 / (2.0 * s2)).exp()
        };
        let grad = move |x: &Pt| {
            let v = val(x);
            let mut g = [0.0; 3];
            for i in 0..n {
                g[i] = -v * (x[i] - center[i]) / s2;
            }
            g
        };
        let hess = move |x: &Pt| {
            let v = val(x);
            let mut m = [[0.0; 3]; 3];
            for i in 0..n {
                for j in 0..n {
                    let d = (x[i] - center[i]) * (x[j] - center[j]) / (s2 * s2);
                    m[i][j] = v * d;
                }
                m[i][i] -= v / s2;
            }
            m
        };
        Self::with_derivatives(val, grad, hess)
    }

    /// Pointwise sum of fields.
    pub fn sum(terms: Vec<AnalyticScalar>) -> Self {
        let t1 = terms.clone();
        let t2 = terms.clone();
        let t3 = terms;
        Self::with_derivatives(
            move |x| t1.iter().map(|t| t.value(x)).sum(),
            move |x| {
                let mut g = [0.0; 3];
                for t in &t2 {
                    let tg = t.gradient(x);
                    for i in 0..3 {
                        g[i] += tg[i];
                    }
                }
                g
            },
            move |x| {
                let mut m = [[0.0; 3]; 3];
                for t in &t3 {
                    let th = t.hessian(x);
                    for (mi, ti) in m.iter_mut().zip(&th) {
                        for (a, b) in mi.iter_mut().zip(ti) {
                            *a += b;
                        }
                    }
                }
                m
            },
        )
    }

    /// Field plus a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let base = self.clone();
        let bg = self.clone();
        let bh = self.clone();
        Self::with_derivatives(
            move |x| base.value(x) + c,
            move |x| bg.gradient(x),
            move |x| bh.hessian(x),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivatives_exact() {
        let f = AnalyticScalar::radial_quadratic(3, 0.25, [1.0, 0.0, -2.0], 5.0);
        let x = [0.3, -0.7, 1.1];
        assert!((f.value(&x) - (0.25 * (0.49 + 0.49 + 9.61) + 5.0)).abs() < 1e-12);
        let g = f.gradient(&x);
        assert!((g[0] - 2.0 * 0.25 * (-0.7)).abs() < 1e-12);
        let h = f.hessian(&x);
        assert!((h[2][2] - 0.5).abs() < 1e-12 && h[0][1].abs() < 1e-12);
    }

    #[test]
    fn from_fn_derivatives_match_exact_builder() {
        let exact = AnalyticScalar::bump(2, 0.7, [0.2, -0.4, 0.0], 1.3);
        let e2 = exact.clone();
        let fd = AnalyticScalar::from_fn(2, move |x| e2.value(x));
        let x = [0.5, 0.1, 0.0];
        let (ge, gf) = (exact.gradient(&x), fd.gradient(&x));
        let (he, hf) = (exact.hessian(&x), fd.hessian(&x));
        for i in 0..2 {
            assert!((ge[i] - gf[i]).abs() < 1e-10);
            for j in 0..2 {
                assert!((he[i][j] - hf[i][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn sum_combines_derivatives() {
        let f = AnalyticScalar::sum(vec![
            AnalyticScalar::radial_quadratic(2, 1.0, [0.0; 3], 0.0),
            AnalyticScalar::constant(3.0),
        ]);
        let x = [1.0, 2.0, 0.0];
        assert!((f.value(&x) - 8.0).abs() < 1e-12);
        assert!((f.gradient(&x)[1] - 4.0).abs() < 1e-12);
    }
}
