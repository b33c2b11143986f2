//! Truncation `λ_ε`, the potential `F_ε` with `F_ε'' = 1/λ_ε`, and the
//! element-wise matrix `Λ_ε(u)` satisfying the discrete chain rule
//! `Λ_ε(u) ∇Π^h(F_ε'(u)) = ∇u` on right-angled P1 meshes.

use crate::error::{Error, Result};
use crate::fem::space::FESpace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub eps: f64,
}

impl Regularization {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
        }
        Ok(Self { eps })
    }

    /// Whether `eps < e⁻²`, below which the positivity estimates apply.
    pub fn in_positivity_regime(&self) -> bool {
        self.eps < (-2.0f64).exp()
    }

    pub fn lambda(&self, s: f64) -> f64 {
        lambda_eps(s, self.eps)
    }

    pub fn f(&self, s: f64) -> f64 {
        f_eps(s, self.eps)
    }

    pub fn fp(&self, s: f64) -> f64 {
        fp_eps(s, self.eps)
    }
}

/// Clamp of `s` to `[ε, 1/ε]`.
pub fn lambda_eps(s: f64, eps: f64) -> f64 {
    s.clamp(eps, 1.0 / eps)
}

/// `F_ε'`: `ln s` on `[ε, 1/ε]`, continued linearly with slopes `1/ε` and `ε`.
pub fn fp_eps(s: f64, eps: f64) -> f64 {
    let hi = 1.0 / eps;
    if s < eps {
        eps.ln() + (s - eps) / eps
    } else if s > hi {
        -eps.ln() + eps * (s - hi)
    } else {
        s.ln()
    }
}

/// `F_ε` with `F_ε(1) = F_ε'(1) = 0`.
pub fn f_eps(s: f64, eps: f64) -> f64 {
    let hi = 1.0 / eps;
    let inner = |s: f64| s * s.ln() - s + 1.0;
    if s < eps {
        let d = s - eps;
        inner(eps) + eps.ln() * d + d * d / (2.0 * eps)
    } else if s > hi {
        let d = s - hi;
        inner(hi) - eps.ln() * d + 0.5 * eps * d * d
    } else {
        inner(s)
    }
}

/// Symmetric 2×2 matrices, one per element, stored as `[xx, xy, yy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaField {
    pub entries: Vec<[f64; 3]>,
}

impl LambdaField {
    #[inline]
    pub fn apply(&self, e: usize, x: [f64; 2]) -> [f64; 2] {
        let [a, b, c] = self.entries[e];
        [a * x[0] + b * x[1], b * x[0] + c * x[1]]
    }

    /// Eigenvalues of the element matrix, ascending.
    pub fn eigenvalues(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.entries[e];
        let mean = 0.5 * (a + c);
        let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        [mean - r, mean + r]
    }
}

/// Per-element orthonormal frames along the two legs of the right angle.
#[derive(Debug, Clone)]
pub struct LambdaBuilder {
    eps: f64,
    frames: Vec<[[f64; 2]; 2]>,
    vertices: Vec<[usize; 3]>,
}

impl LambdaBuilder {
    pub fn new(space: &FESpace, reg: Regularization) -> Result<Self> {
        if space.degree() != 1 {
            return Err(Error::UnsupportedDegree(space.degree()));
        }
        let mesh = space.mesh();
        let mut frames = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let p = mesh.triangle_points(t);
            let mut legs = [[0.0; 2]; 2];
            for (i, leg) in legs.iter_mut().enumerate() {
                let d = [p[i + 1][0] - p[0][0], p[i + 1][1] - p[0][1]];
                let len = d[0].hypot(d[1]);
                *leg = [d[0] / len, d[1] / len];
            }
            if (legs[0][0] * legs[1][0] + legs[0][1] * legs[1][1]).abs() > 1e-12 {
                return Err(Error::NotRightAngled(t));
            }
            frames.push(legs);
        }
        Ok(Self {
            eps: reg.eps,
            frames,
            vertices: mesh.triangles.clone(),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Leg coefficient: difference quotient of `s ↦ s` over `F_ε'`, or its
    /// limit `λ_ε` at the midpoint when the two values coincide.
    fn quotient(&self, u0: f64, ui: f64) -> f64 {
        let du = ui - u0;
        if du.abs() <= 1e-14 * u0.abs().max(1.0) {
            return lambda_eps(0.5 * (u0 + ui), self.eps);
        }
        let df = fp_eps(ui, self.eps) - fp_eps(u0, self.eps);
        // F_ε' is strictly increasing, so the quotient is a value of λ_ε
        // by the mean value theorem; guard against rounding at the ends
        (du / df).clamp(self.eps, 1.0 / self.eps)
    }

    pub fn build(&self, u: &[f64]) -> LambdaField {
        self.build_with(u, |u0, ui| self.quotient(u0, ui))
    }

    fn build_with(&self, u: &[f64], coeff: impl Fn(f64, f64) -> f64) -> LambdaField {
        let entries = self
            .frames
            .iter()
            .zip(&self.vertices)
            .map(|(legs, tri)| {
                let u0 = u[tri[0]];
                let mut m = [0.0; 3];
                for (i, e) in legs.iter().enumerate() {
                    let d = coeff(u0, u[tri[i + 1]]);
                    m[0] += d * e[0] * e[0];
                    m[1] += d * e[0] * e[1];
                    m[2] += d * e[1] * e[1];
                }
                m
            })
            .collect();
        LambdaField { entries }
    }
}

pub fn build_lambda(space: &FESpace, u: &[f64], eps: f64) -> Result<LambdaField> {
    Ok(LambdaBuilder::new(space, Regularization::new(eps)?)?.build(u))
}
