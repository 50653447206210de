//! Gauss-Legendre rules.

/// Gauss-Legendre nodes and weights on [0, 1] with `n` points.
///
/// Exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one quadrature point");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, t);
        x[n - 1 - i] = 0.5 * (t + 1.0);
        w[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// Standard Legendre polynomial `P_n(t)` and its derivative on [-1, 1].
pub fn legendre_with_deriv(n: usize, t: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = t;
    for m in 2..=n {
        let m = m as f64;
        let p2 = ((2.0 * m - 1.0) * t * p1 - (m - 1.0) * p0) / m;
        p0 = p1;
        p1 = p2;
    }
    let dp = if (t * t - 1.0).abs() < 1e-300 {
        // Endpoint value of the derivative.
        let nn = n as f64;
        let s = if n % 2 == 0 && t < 0.0 { -1.0 } else { 1.0 };
        s * nn * (nn + 1.0) / 2.0
    } else {
        n as f64 * (t * p1 - p0) / (t * t - 1.0)
    };
    (p1, dp)
}

/// Composite Gauss-Legendre rule on [a, b] split into `pieces` equal parts.
pub fn composite(a: f64, b: f64, pieces: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = (b - a) / pieces as f64;
    let mut xs = Vec::with_capacity(pieces * n);
    let mut ws = Vec::with_capacity(pieces * n);
    for p in 0..pieces {
        let lo = a + h * p as f64;
        for (xi, wi) in x.iter().zip(w.iter()) {
            xs.push(lo + h * xi);
            ws.push(h * wi);
        }
    }
    (xs, ws)
}
