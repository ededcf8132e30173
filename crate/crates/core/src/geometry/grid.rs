//! Periodic finite-difference stencils on a uniform 2-D grid.
//!
//! All stencils are centered, fourth-order accurate convolutions. Symmetric
//! stencils keep the discrete Laplacian exactly self-adjoint with respect to
//! the flat grid inner product, and the periodic sums of every derivative
//! stencil vanish exactly — both properties are load-bearing for the
//! spectral solver and the conservation checks downstream.

/// Shape and spacing of a periodic grid; row-major storage `values[j*nx + i]`
/// with `x = i*hx`, `y = j*hy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

impl GridShape {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    fn wrap_x(&self, i: isize) -> usize {
        i.rem_euclid(self.nx as isize) as usize
    }

    #[inline]
    fn wrap_y(&self, j: isize) -> usize {
        j.rem_euclid(self.ny as isize) as usize
    }

    #[inline]
    pub fn at(&self, v: &[f64], i: isize, j: isize) -> f64 {
        v[self.wrap_y(j) * self.nx + self.wrap_x(i)]
    }

    /// First derivative in x: (-v[i+2] + 8v[i+1] - 8v[i-1] + v[i-2]) / 12h.
    pub fn dx(&self, v: &[f64]) -> Vec<f64> {
        self.map_stencil(v, |s, v, i, j| {
            (-s.at(v, i + 2, j) + 8.0 * s.at(v, i + 1, j) - 8.0 * s.at(v, i - 1, j)
                + s.at(v, i - 2, j))
                / (12.0 * s.hx)
        })
    }

    /// First derivative in y.
    pub fn dy(&self, v: &[f64]) -> Vec<f64> {
        self.map_stencil(v, |s, v, i, j| {
            (-s.at(v, i, j + 2) + 8.0 * s.at(v, i, j + 1) - 8.0 * s.at(v, i, j - 1)
                + s.at(v, i, j - 2))
                / (12.0 * s.hy)
        })
    }

    /// Second derivative in x.
    pub fn dxx(&self, v: &[f64]) -> Vec<f64> {
        self.map_stencil(v, |s, v, i, j| {
            (-s.at(v, i + 2, j) + 16.0 * s.at(v, i + 1, j) - 30.0 * s.at(v, i, j)
                + 16.0 * s.at(v, i - 1, j)
                - s.at(v, i - 2, j))
                / (12.0 * s.hx * s.hx)
        })
    }

    /// Second derivative in y.
    pub fn dyy(&self, v: &[f64]) -> Vec<f64> {
        self.map_stencil(v, |s, v, i, j| {
            (-s.at(v, i, j + 2) + 16.0 * s.at(v, i, j + 1) - 30.0 * s.at(v, i, j)
                + 16.0 * s.at(v, i, j - 1)
                - s.at(v, i, j - 2))
                / (12.0 * s.hy * s.hy)
        })
    }

    /// Mixed derivative: composition of the two first-derivative stencils.
    pub fn dxy(&self, v: &[f64]) -> Vec<f64> {
        self.dy(&self.dx(v))
    }

    /// Flat Laplacian, sum of the two one-dimensional second derivatives.
    /// The stencil is a symmetric convolution, hence self-adjoint on the
    /// periodic grid, and its row sums are exactly zero.
    pub fn lap_flat(&self, v: &[f64]) -> Vec<f64> {
        let xx = self.dxx(v);
        let yy = self.dyy(v);
        xx.iter().zip(&yy).map(|(a, b)| a + b).collect()
    }

    /// Plain sum times the cell area: the trapezoid (= midpoint) rule, which
    /// is spectrally accurate for smooth periodic integrands.
    pub fn cell_sum(&self, v: &[f64]) -> f64 {
        v.iter().sum::<f64>() * self.hx * self.hy
    }

    /// Build a grid of values from a function of the node coordinates.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(f(i as f64 * self.hx, j as f64 * self.hy));
            }
        }
        out
    }

    fn map_stencil<F>(&self, v: &[f64], f: F) -> Vec<f64>
    where
        F: Fn(&GridShape, &[f64], isize, isize) -> f64,
    {
        assert_eq!(v.len(), self.len(), "grid size mismatch");
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny as isize {
            for i in 0..self.nx as isize {
                out.push(f(self, v, i, j));
            }
        }
        out
    }
}
