//! L² projections and the discrete shifted Laplacian.

use super::assemble::{assemble_lumped_mass, assemble_mass, assemble_stiffness, load_vector};
use super::quadrature::QuadratureRule;
use super::space::FESpace;
use super::sparse::{dot, SparseOperator};
use crate::error::Result;
use crate::solvers::linear::Factorization;

/// Rule used to integrate analytic data against basis functions.
pub fn data_rule() -> QuadratureRule {
    QuadratureRule::collapsed_gauss(8)
}

/// Lumped projection `Q^h f`: `(Q^h f, ū)^h = (f, ū)` for all P1 `ū`.
pub fn lumped_projection(space: &FESpace, f: impl Fn(f64, f64) -> f64, rule: &QuadratureRule) -> Result<Vec<f64>> {
    let ml = assemble_lumped_mass(space)?.diagonal();
    let rhs = load_vector(space, f, rule);
    Ok(rhs.iter().zip(&ml).map(|(b, m)| b / m).collect())
}

/// Consistent projection: `(P f, χ) = (f, χ)` for all `χ` in the space.
pub fn consistent_projection(space: &FESpace, f: impl Fn(f64, f64) -> f64, rule: &QuadratureRule) -> Result<Vec<f64>> {
    let m = assemble_mass(space);
    let rhs = load_vector(space, f, rule);
    Ok(Factorization::cholesky(&m)?.solve(&rhs))
}

/// `A_h = M⁻¹(K + M)` on a scalar space, so that
/// `(A_h v, v̄) = (∇v, ∇v̄) + (v, v̄)`.
pub struct ShiftedLaplacian {
    pub mass: SparseOperator,
    pub stiffness: SparseOperator,
    mass_factor: Factorization,
}

impl ShiftedLaplacian {
    pub fn new(space: &FESpace) -> Result<Self> {
        Self::from_operators(assemble_mass(space), assemble_stiffness(space))
    }

    pub fn from_operators(mass: SparseOperator, stiffness: SparseOperator) -> Result<Self> {
        let mass_factor = Factorization::cholesky(&mass)?;
        Ok(Self {
            mass,
            stiffness,
            mass_factor,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut kv = self.stiffness.mul_vec(v);
        self.mass_factor.solve_in_place(&mut kv);
        kv.iter().zip(v).map(|(a, b)| a + b).collect()
    }

    /// Coefficients of `(A_h − I)v = M⁻¹Kv`.
    pub fn apply_minus_identity(&self, v: &[f64]) -> Vec<f64> {
        self.mass_factor.solve(&self.stiffness.mul_vec(v))
    }

    /// `‖(A_h − I)v‖₀² = (Kv)ᵀM⁻¹(Kv)`.
    pub fn minus_identity_norm_sq(&self, v: &[f64]) -> f64 {
        let kv = self.stiffness.mul_vec(v);
        dot(&kv, &self.mass_factor.solve(&kv))
    }

    /// `M⁻¹b`.
    pub fn solve_mass(&self, b: &[f64]) -> Vec<f64> {
        self.mass_factor.solve(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble::integrate_function;
    use crate::fem::sparse::norm2;
    use crate::mesh::build_rect_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn space(n: usize, degree: usize) -> FESpace {
        FESpace::new(Arc::new(build_rect_mesh(2.0, 2.0, n, n).unwrap()), degree).unwrap()
    }

    fn bump(x: f64, y: f64) -> f64 {
        -10.0 * x * y * (2.0 - x) * (2.0 - y) * (-10.0 * (y - 1.0).powi(2) - 10.0 * (x - 1.0).powi(2)).exp() + 10.0001
    }

    #[test]
    fn constants_are_fixed_points() {
        let s = space(4, 1);
        let rule = data_rule();
        assert!(lumped_projection(&s, |_, _| 2.5, &rule).unwrap().iter().all(|v| (v - 2.5).abs() < 1e-13));
        assert!(consistent_projection(&s, |_, _| 2.5, &rule).unwrap().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn lumped_projection_preserves_mean() {
        let s = space(16, 1);
        let rule = data_rule();
        let q = lumped_projection(&s, bump, &rule).unwrap();
        let ml = assemble_lumped_mass(&s).unwrap();
        let lumped_integral: f64 = q.iter().zip(ml.diagonal()).map(|(a, b)| a * b).sum();
        // independent oracle: a finer tensor rule on a finer mesh
        let fine = space(40, 1);
        let exact = integrate_function(&fine, bump, &QuadratureRule::collapsed_gauss(10));
        assert!(((lumped_integral - exact) / exact).abs() < 1e-10);
    }

    #[test]
    fn consistent_projection_is_galerkin_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for degree in [1, 2] {
            let s = space(6, degree);
            let (a, b, c) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(-1.0..1.0));
            let f = |x: f64, y: f64| (a * x).sin() * (b * y).cos() + c * x * y;
            let rule = data_rule();
            let p = consistent_projection(&s, f, &rule).unwrap();
            let residual: Vec<f64> = load_vector(&s, f, &rule).iter().zip(assemble_mass(&s).mul_vec(&p)).map(|(l, m)| l - m).collect();
            assert!(norm2(&residual) < 1e-10);
        }
    }

    #[test]
    fn lumped_and_consistent_norms_are_uniformly_equivalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [4, 8, 16] {
            let s = space(n, 1);
            let m = assemble_mass(&s);
            let ml = assemble_lumped_mass(&s).unwrap();
            for _ in 0..100 {
                let u: Vec<f64> = (0..s.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let ratio = ml.quadratic(&u) / m.quadratic(&u);
                // the P1 element matrices give M ≤ M_L ≤ 4M
                assert!((1.0 - 1e-12..=4.0 + 1e-12).contains(&ratio), "{ratio}");
            }
        }
    }

    #[test]
    fn shifted_laplacian_identities() {
        let s = space(6, 2);
        let ah = ShiftedLaplacian::new(&s).unwrap();
        let c = vec![3.0; s.n_dofs()];
        assert!(ah.apply(&c).iter().all(|v| (v - 3.0).abs() < 1e-11));

        let v = s.interpolate(|x, y| (x * y).sin() + x * x);
        let w = ah.apply_minus_identity(&v);
        let direct = ah.mass.quadratic(&w);
        assert!((direct - ah.minus_identity_norm_sq(&v)).abs() < 1e-10 * direct.max(1.0));
        let av = ah.apply(&v);
        let diff: Vec<f64> = av.iter().zip(&v).zip(&w).map(|((a, b), c)| a - b - c).collect();
        assert!(norm2(&diff) < 1e-10 * norm2(&av));
    }

    fn w16_norm(s: &FESpace, v: &[f64]) -> f64 {
        let rule = QuadratureRule::collapsed_gauss(7);
        let mut acc = 0.0;
        for e in 0..s.n_elements() {
            let scale = 2.0 * s.geometry(e).area;
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let val = s.eval(v, e, p);
                let g = s.eval_grad(v, e, p);
                acc += w * scale * (val.powi(6) + (g[0] * g[0] + g[1] * g[1]).powi(3));
            }
        }
        acc.powf(1.0 / 6.0)
    }

    #[test]
    fn w16_norm_is_controlled_by_shifted_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut worst = Vec::new();
        for n in [4, 8, 16] {
            let s = space(n, 2);
            let ah = ShiftedLaplacian::new(&s).unwrap();
            let mut level_max: f64 = 0.0;
            for _ in 0..10 {
                // smooth random modes plus nodal noise
                let (a, b) = (rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64);
                let amp = rng.gen_range(-2.0..2.0);
                let mut v = s.interpolate(|x, y| amp * (a * std::f64::consts::FRAC_PI_2 * x).cos() * (b * std::f64::consts::FRAC_PI_2 * y).cos() + 0.3);
                v.iter_mut().for_each(|c| *c += rng.gen_range(-0.05..0.05));
                let av = ah.apply(&v);
                let ratio = w16_norm(&s, &v) / ah.mass.quadratic(&av).sqrt();
                level_max = level_max.max(ratio);
            }
            worst.push(level_max);
        }
        // a single constant works on every level
        let c = worst[0].max(1.0) * 2.0;
        assert!(worst.iter().all(|&r| r <= c), "{worst:?}");
    }
}
