//! Vector P1 space with vanishing normal trace on the boundary.
//!
//! Coefficients are stored in blocks: the first `n` entries hold the
//! x-components at the vertices, the next `n` the y-components. On a
//! boundary vertex the component along the outward normal is pinned to zero;
//! at corners both components are.

use std::sync::Arc;

use super::quadrature::QuadratureRule;
use super::space::{FESpace, Tabulation};
use super::sparse::{AssemblyPattern, SparseOperator};
use crate::error::{Error, Result};
use crate::solvers::linear::Factorization;

#[derive(Debug, Clone)]
pub struct VectorSpaceSigma {
    scalar: Arc<FESpace>,
    constrained: Vec<bool>,
}

impl VectorSpaceSigma {
    pub fn new(scalar: Arc<FESpace>) -> Result<Self> {
        if scalar.degree() != 1 {
            return Err(Error::UnsupportedDegree(scalar.degree()));
        }
        let n = scalar.n_dofs();
        let mut constrained = vec![false; 2 * n];
        for edge in &scalar.mesh().boundary_edges {
            for &v in &edge.vertices {
                if edge.normal[0].abs() > 0.5 {
                    constrained[v] = true;
                }
                if edge.normal[1].abs() > 0.5 {
                    constrained[n + v] = true;
                }
            }
        }
        Ok(Self { scalar, constrained })
    }

    pub fn scalar(&self) -> &Arc<FESpace> {
        &self.scalar
    }

    pub fn n_vertices(&self) -> usize {
        self.scalar.n_dofs()
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.scalar.n_dofs()
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    pub fn n_constrained(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }

    /// Zeroes the constrained entries of a coefficient or load vector.
    pub fn apply_constraint(&self, x: &mut [f64]) {
        for (xi, &c) in x.iter_mut().zip(&self.constrained) {
            if c {
                *xi = 0.0;
            }
        }
    }

    pub fn satisfies_constraint(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.constrained).all(|(v, &c)| !c || *v == 0.0)
    }

    fn element_dofs(&self, e: usize) -> [usize; 6] {
        let n = self.n_vertices();
        let d = self.scalar.element_dofs(e);
        [d[0], d[1], d[2], n + d[0], n + d[1], n + d[2]]
    }

    fn pattern(&self) -> AssemblyPattern {
        let elements: Vec<Vec<usize>> = (0..self.scalar.n_elements()).map(|e| self.element_dofs(e).to_vec()).collect();
        AssemblyPattern::new(self.n_dofs(), &elements)
    }

    fn assemble(&self, with_mass: bool, with_derivatives: bool) -> SparseOperator {
        let pat = self.pattern();
        let mut op = pat.zeroed();
        let mut local = [0.0; 36];
        for e in 0..self.scalar.n_elements() {
            let geo = self.scalar.geometry(e);
            let (a, g) = (geo.area, &geo.grad_lambda);
            local.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    let mut xx = 0.0;
                    let mut xy = 0.0;
                    let mut yx = 0.0;
                    if with_mass {
                        xx += a * if i == j { 1.0 / 6.0 } else { 1.0 / 12.0 };
                    }
                    if with_derivatives {
                        // (div, div) + (rot, rot) with rot σ = ∂ₓσ_y − ∂_yσₓ
                        xx += a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                        xy = a * (g[i][0] * g[j][1] - g[i][1] * g[j][0]);
                        yx = a * (g[i][1] * g[j][0] - g[i][0] * g[j][1]);
                    }
                    local[i * 6 + j] += xx;
                    local[(i + 3) * 6 + (j + 3)] += xx;
                    local[i * 6 + (j + 3)] += xy;
                    local[(i + 3) * 6 + j] += yx;
                }
            }
            pat.add_local(&mut op, e, &local);
        }
        op.symmetric = true;
        op
    }

    /// Consistent vector mass matrix `(σ_j, σ̄_i)`, unconstrained.
    pub fn assemble_mass(&self) -> SparseOperator {
        self.assemble(true, false)
    }

    /// Matrix of `(∇·σ, ∇·σ̄) + (rot σ, rot σ̄) + (σ, σ̄)`, unconstrained.
    pub fn assemble_b(&self) -> SparseOperator {
        self.assemble(true, true)
    }

    /// Copy of `op` with identity rows and columns on the constrained dofs.
    pub fn pinned(&self, op: &SparseOperator) -> SparseOperator {
        let mut out = op.clone();
        out.pin_dofs(&self.constrained);
        out
    }

    /// Consistent L² projection of `g` onto the constrained space, with the
    /// right-hand side integrated by `rule`.
    pub fn l2_project(&self, g: impl Fn(f64, f64) -> [f64; 2], rule: &QuadratureRule) -> Result<Vec<f64>> {
        let mut rhs = self.load_vector(g, rule);
        self.apply_constraint(&mut rhs);
        let m = self.pinned(&self.assemble_mass());
        let mut x = Factorization::cholesky(&m)?.solve(&rhs);
        self.apply_constraint(&mut x);
        Ok(x)
    }

    /// `∫ g · σ̄_i` for every basis function, constrained rows included.
    pub fn load_vector(&self, g: impl Fn(f64, f64) -> [f64; 2], rule: &QuadratureRule) -> Vec<f64> {
        let tab = Tabulation::new(1, rule);
        let n = self.n_vertices();
        let mut out = vec![0.0; 2 * n];
        for e in 0..self.scalar.n_elements() {
            let scale = 2.0 * self.scalar.geometry(e).area;
            let dofs = self.scalar.element_dofs(e);
            for q in 0..tab.weights.len() {
                let x = self.scalar.map_point(e, &tab.points[q]);
                let gv = g(x[0], x[1]);
                let w = tab.weights[q] * scale;
                for (i, &d) in dofs.iter().enumerate() {
                    out[d] += w * gv[0] * tab.values[q][i];
                    out[n + d] += w * gv[1] * tab.values[q][i];
                }
            }
        }
        out
    }

    /// Piecewise-constant divergence and rotation on element `e`.
    pub fn div_rot(&self, sigma: &[f64], e: usize) -> (f64, f64) {
        let n = self.n_vertices();
        let g = &self.scalar.geometry(e).grad_lambda;
        let mut div = 0.0;
        let mut rot = 0.0;
        for (i, &d) in self.scalar.element_dofs(e).iter().enumerate() {
            div += sigma[d] * g[i][0] + sigma[n + d] * g[i][1];
            rot += sigma[n + d] * g[i][0] - sigma[d] * g[i][1];
        }
        (div, rot)
    }

    /// Pointwise magnitude at the vertices.
    pub fn vertex_magnitudes(&self, sigma: &[f64]) -> Vec<f64> {
        let n = self.n_vertices();
        (0..n).map(|i| sigma[i].hypot(sigma[n + i])).collect()
    }
}

/// Coefficient vector of a field in a [`VectorSpaceSigma`].
#[derive(Debug, Clone)]
pub struct VectorField {
    pub space: Arc<VectorSpaceSigma>,
    pub coeffs: Vec<f64>,
}

impl VectorField {
    /// Fails unless the length matches and the constrained entries are zero.
    pub fn new(space: Arc<VectorSpaceSigma>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a vector space with {} dofs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        if !space.satisfies_constraint(&coeffs) {
            return Err(Error::InvalidArgument("vector field violates the normal-trace constraint".into()));
        }
        Ok(Self { space, coeffs })
    }

    pub fn zero(space: Arc<VectorSpaceSigma>) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            coeffs: vec![0.0; n],
        }
    }
}
