//! Quadrature on the reference triangle in barycentric coordinates.

/// Points are barycentric triples; weights sum to the reference area ½.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Symmetric 6-point rule, exact for polynomials of degree 4.
    pub fn degree4() -> Self {
        let s10 = 10f64.sqrt();
        let r = (38.0 - 44.0 * (0.4f64).sqrt()).sqrt();
        let a1 = (8.0 - s10 + r) / 18.0;
        let a2 = (8.0 - s10 - r) / 18.0;
        let q = (213125.0 - 53320.0 * s10).sqrt();
        let w1 = (620.0 + q) / 3720.0;
        let w2 = (620.0 - q) / 3720.0;
        let mut points = Vec::with_capacity(6);
        let mut weights = Vec::with_capacity(6);
        for (a, w) in [(a1, w1), (a2, w2)] {
            let b = 1.0 - 2.0 * a;
            for p in [[b, a, a], [a, b, a], [a, a, b]] {
                points.push(p);
                weights.push(0.5 * w);
            }
        }
        Self {
            points,
            weights,
            degree: 4,
        }
    }

    /// Collapsed (Duffy) tensor Gauss–Legendre rule with `n × n` points,
    /// exact for polynomials of degree `2n − 2` on the triangle. Used to
    /// integrate smooth data when projecting initial conditions.
    pub fn collapsed_gauss(n: usize) -> Self {
        let (xs, ws) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (i, &s) in xs.iter().enumerate() {
            for (j, &t) in xs.iter().enumerate() {
                // (s, t) in the unit square → (ξ, η) = (s, t(1 − s))
                let xi = s;
                let eta = t * (1.0 - s);
                points.push([1.0 - xi - eta, xi, eta]);
                weights.push(ws[i] * ws[j] * (1.0 - s));
            }
        }
        Self {
            points,
            weights,
            degree: 2 * n - 2,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        xs[i] = 0.5 * (1.0 - x);
        ws[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}
