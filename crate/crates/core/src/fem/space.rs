//! Continuous Lagrange P1/P2 spaces on a [`StructuredMesh`].

use std::sync::Arc;

use super::quadrature::QuadratureRule;
use crate::error::{Error, Result};
use crate::mesh::{Point, StructuredMesh};

/// Local edges in P2 ordering: dof 3 + e sits on the midpoint of
/// `LOCAL_EDGES[e]`.
pub const LOCAL_EDGES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    pub grad_lambda: [[f64; 2]; 3],
}

impl ElementGeometry {
    fn new(p: [Point; 3]) -> Self {
        let twice = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let mut grad_lambda = [[0.0; 2]; 3];
        for (i, g) in grad_lambda.iter_mut().enumerate() {
            let a = p[(i + 1) % 3];
            let b = p[(i + 2) % 3];
            *g = [(a[1] - b[1]) / twice, (b[0] - a[0]) / twice];
        }
        Self {
            area: 0.5 * twice,
            grad_lambda,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FESpace {
    mesh: Arc<StructuredMesh>,
    degree: usize,
    dof_coords: Vec<Point>,
    dof_map: Vec<usize>,
    geometry: Vec<ElementGeometry>,
}

impl FESpace {
    pub fn new(mesh: Arc<StructuredMesh>, degree: usize) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::UnsupportedDegree(degree));
        }
        let nv = mesh.n_vertices();
        let mut dof_coords = mesh.vertices.clone();
        let nloc = local_count(degree);
        let mut dof_map = Vec::with_capacity(nloc * mesh.n_triangles());
        if degree == 2 {
            dof_coords.extend(mesh.edges.iter().map(|&[a, b]| {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
            }));
        }
        for (t, tri) in mesh.triangles.iter().enumerate() {
            dof_map.extend_from_slice(tri);
            if degree == 2 {
                dof_map.extend(mesh.triangle_edges[t].iter().map(|e| nv + e));
            }
        }
        let geometry = (0..mesh.n_triangles()).map(|t| ElementGeometry::new(mesh.triangle_points(t))).collect();
        Ok(Self {
            mesh,
            degree,
            dof_coords,
            dof_map,
            geometry,
        })
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.len()
    }

    pub fn local_dofs(&self) -> usize {
        local_count(self.degree)
    }

    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }

    pub fn element_dofs(&self, e: usize) -> &[usize] {
        let n = self.local_dofs();
        &self.dof_map[n * e..n * (e + 1)]
    }

    pub fn geometry(&self, e: usize) -> &ElementGeometry {
        &self.geometry[e]
    }

    pub fn same_mesh(&self, other: &FESpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }

    /// Physical coordinates of a barycentric point in element `e`.
    pub fn map_point(&self, e: usize, bary: &[f64; 3]) -> Point {
        let p = self.mesh.triangle_points(e);
        [
            bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
            bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
        ]
    }

    /// Lagrange interpolation: nodal values `f(x_i)`.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.dof_coords.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Value of the field with coefficients `c` at a barycentric point of
    /// element `e`.
    pub fn eval(&self, c: &[f64], e: usize, bary: &[f64; 3]) -> f64 {
        let mut phi = [0.0; 6];
        basis_values(self.degree, bary, &mut phi);
        self.element_dofs(e).iter().zip(&phi).map(|(&d, p)| c[d] * p).sum()
    }

    pub fn eval_grad(&self, c: &[f64], e: usize, bary: &[f64; 3]) -> [f64; 2] {
        let mut g = [[0.0; 2]; 6];
        basis_grads(self.degree, bary, &self.geometry[e].grad_lambda, &mut g);
        let mut out = [0.0; 2];
        for (&d, gi) in self.element_dofs(e).iter().zip(&g) {
            out[0] += c[d] * gi[0];
            out[1] += c[d] * gi[1];
        }
        out
    }

    pub fn tabulate(&self, rule: &QuadratureRule) -> Tabulation {
        Tabulation::new(self.degree, rule)
    }
}

pub fn local_count(degree: usize) -> usize {
    if degree == 1 {
        3
    } else {
        6
    }
}

pub fn basis_values(degree: usize, l: &[f64; 3], out: &mut [f64]) {
    if degree == 1 {
        out[..3].copy_from_slice(l);
    } else {
        for i in 0..3 {
            out[i] = l[i] * (2.0 * l[i] - 1.0);
        }
        for (e, [i, j]) in LOCAL_EDGES.iter().enumerate() {
            out[3 + e] = 4.0 * l[*i] * l[*j];
        }
    }
}

/// Coefficients `c[i][m]` with `∇φ_i = Σ_m c[i][m] ∇λ_m`.
pub fn basis_grad_coeffs(degree: usize, l: &[f64; 3], out: &mut [[f64; 3]]) {
    for row in out.iter_mut().take(local_count(degree)) {
        *row = [0.0; 3];
    }
    if degree == 1 {
        for i in 0..3 {
            out[i][i] = 1.0;
        }
    } else {
        for i in 0..3 {
            out[i][i] = 4.0 * l[i] - 1.0;
        }
        for (e, [i, j]) in LOCAL_EDGES.iter().enumerate() {
            out[3 + e][*i] = 4.0 * l[*j];
            out[3 + e][*j] = 4.0 * l[*i];
        }
    }
}

pub fn basis_grads(degree: usize, l: &[f64; 3], grad_lambda: &[[f64; 2]; 3], out: &mut [[f64; 2]]) {
    let mut c = [[0.0; 3]; 6];
    basis_grad_coeffs(degree, l, &mut c);
    for i in 0..local_count(degree) {
        out[i] = combine(&c[i], grad_lambda);
    }
}

#[inline]
pub fn combine(c: &[f64; 3], grad_lambda: &[[f64; 2]; 3]) -> [f64; 2] {
    [
        c[0] * grad_lambda[0][0] + c[1] * grad_lambda[1][0] + c[2] * grad_lambda[2][0],
        c[0] * grad_lambda[0][1] + c[1] * grad_lambda[1][1] + c[2] * grad_lambda[2][1],
    ]
}

/// Basis values and gradient coefficients tabulated at the points of a
/// quadrature rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub degree: usize,
    pub nloc: usize,
    pub weights: Vec<f64>,
    pub points: Vec<[f64; 3]>,
    pub values: Vec<[f64; 6]>,
    pub grad_coeffs: Vec<[[f64; 3]; 6]>,
}

impl Tabulation {
    pub fn new(degree: usize, rule: &QuadratureRule) -> Self {
        let mut values = Vec::with_capacity(rule.len());
        let mut grad_coeffs = Vec::with_capacity(rule.len());
        for p in &rule.points {
            let mut v = [0.0; 6];
            basis_values(degree, p, &mut v);
            values.push(v);
            let mut c = [[0.0; 3]; 6];
            basis_grad_coeffs(degree, p, &mut c);
            grad_coeffs.push(c);
        }
        Self {
            degree,
            nloc: local_count(degree),
            weights: rule.weights.clone(),
            points: rule.points.clone(),
            values,
            grad_coeffs,
        }
    }

    /// Physical gradients of all local basis functions at point `q`.
    #[inline]
    pub fn grads(&self, q: usize, geo: &ElementGeometry) -> [[f64; 2]; 6] {
        let mut out = [[0.0; 2]; 6];
        for i in 0..self.nloc {
            out[i] = combine(&self.grad_coeffs[q][i], &geo.grad_lambda);
        }
        out
    }

    /// Field value at point `q` from local coefficients.
    #[inline]
    pub fn value(&self, q: usize, local: &[f64]) -> f64 {
        (0..self.nloc).map(|i| self.values[q][i] * local[i]).sum()
    }

    #[inline]
    pub fn grad(&self, q: usize, geo: &ElementGeometry, local: &[f64]) -> [f64; 2] {
        let g = self.grads(q, geo);
        let mut out = [0.0; 2];
        for i in 0..self.nloc {
            out[0] += local[i] * g[i][0];
            out[1] += local[i] * g[i][1];
        }
        out
    }
}

/// Coefficient vector together with the space it lives in.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub space: Arc<FESpace>,
    pub coeffs: Vec<f64>,
}

impl ScalarField {
    pub fn new(space: Arc<FESpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a space with {} dofs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(Self { space, coeffs })
    }

    pub fn constant(space: Arc<FESpace>, c: f64) -> Self {
        let n = space.n_dofs();
        Self {
            space,
            coeffs: vec![c; n],
        }
    }

    /// Values at the mesh vertices (the first `n_vertices` dofs in both
    /// P1 and P2 numbering).
    pub fn vertex_values(&self) -> &[f64] {
        &self.coeffs[..self.space.mesh().n_vertices()]
    }
}
