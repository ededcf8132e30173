//! Small numerical utilities: quadrature rules, finite-difference stencils
//! and deterministic formatting shared across modules.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre polynomial from the
/// Chebyshev-like initial guess; accurate to machine precision for the
/// modest orders (n <= 128) used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Initial guess (Abramowitz & Stegun 25.4.38 neighborhood).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = (n as f64) * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Composite Simpson quadrature of uniformly sampled values over `[a, b]`.
///
/// `values.len()` must be odd (even number of intervals). This is the fixed
/// rule used for all s-parametrized path integrals.
pub fn simpson(values: &[f64], a: f64, b: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd sample count");
    let h = (b - a) / (n - 1) as f64;
    let mut acc = values[0] + values[n - 1];
    for (j, v) in values.iter().enumerate().take(n - 1).skip(1) {
        acc += if j % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Trapezoid quadrature of uniformly sampled values over `[a, b]`;
/// used where sample counts may be even.
pub fn trapezoid(values: &[f64], a: f64, b: f64) -> f64 {
    let n = values.len();
    assert!(n >= 2);
    let h = (b - a) / (n - 1) as f64;
    let mut acc = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        acc += v;
    }
    acc * h
}

/// Format a float with 17 significant digits, enough to round-trip any f64
/// exactly through text. All persistent outputs use this.
pub fn fmt17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Fourth-order centered first-derivative stencil applied to a closure
/// sampling at offsets of `h`.
pub fn diff1<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Fourth-order centered second-derivative stencil.
pub fn diff2<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h))
        / (12.0 * h * h)
}

/// Wrap a coordinate into `[0, period)`.
pub fn wrap(x: f64, period: f64) -> f64 {
    let y = x % period;
    if y < 0.0 {
        y + period
    } else {
        y
    }
}

/// Signed minimal displacement from `a` to `b` on a circle of given period,
/// in `(-period/2, period/2]`.
pub fn wrap_diff(a: f64, b: f64, period: f64) -> f64 {
    let mut d = (b - a) % period;
    if d > 0.5 * period {
        d -= period;
    }
    if d <= -0.5 * period {
        d += period;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1.
        for n in [2usize, 5, 16, 48] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let val: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * xi.powi(deg as i32 - 1))
                .sum();
            // integral of x^(deg-1) over [-1,1]: 0 if odd power, 2/(p+1) if even.
            let p = deg - 1;
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((val - exact).abs() < 1e-13, "n={n} val={val} exact={exact}");
        }
    }

    #[test]
    fn gauss_legendre_handles_gaussian() {
        let (x, w) = gauss_legendre(64);
        // integral of exp(-t^2) over [-8, 8] = sqrt(pi) to machine precision.
        let val: f64 = x
            .iter()
            .zip(&w)
            .map(|(&xi, &wi)| 8.0 * wi * (-(8.0 * xi) * (8.0 * xi)).exp())
            .sum();
        assert!((val - std::f64::consts::PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn simpson_is_fourth_order() {
        let f = |x: f64| x.sin();
        let eval = |n: usize| {
            let vals: Vec<f64> = (0..=n).map(|j| f(j as f64 / n as f64)).collect();
            simpson(&vals, 0.0, 1.0)
        };
        let exact = 1.0 - 1.0f64.cos();
        let e1 = (eval(16) - exact).abs();
        let e2 = (eval(32) - exact).abs();
        assert!(e1 / e2 > 12.0, "convergence ratio {}", e1 / e2);
    }

    #[test]
    fn fmt17_round_trips() {
        for &x in &[std::f64::consts::PI, 1.0 / 3.0, -2.5e-17, 6.02e23] {
            let y: f64 = fmt17(x).parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn wrap_diff_takes_short_way() {
        assert!((wrap_diff(0.1, 6.2, 2.0 * std::f64::consts::PI) + 0.183185307).abs() < 1e-6);
        assert_eq!(wrap_diff(0.0, 0.4, 1.0), 0.4);
    }
}
