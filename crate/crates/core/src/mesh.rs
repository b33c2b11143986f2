//! Structured right-angled triangulations of a rectangle.
//!
//! Every cell of an `nx × ny` grid is split along its lower-left to
//! upper-right diagonal, so every triangle has exactly one right angle. The
//! right-angle vertex is always stored first, followed by the two leg
//! endpoints in counter-clockwise order.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub normal: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct StructuredMesh {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<Point>,
    /// Right-angle vertex first, counter-clockwise.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_vertices: BTreeSet<usize>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Unique undirected edges, sorted by (min, max) vertex index.
    pub edges: Vec<[usize; 2]>,
    /// For each triangle, the global edge indices of its local edges
    /// (0-1), (1-2), (2-0).
    pub triangle_edges: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMetrics {
    pub h: f64,
    pub min_angle: f64,
    pub total_area: f64,
}

impl StructuredMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_points(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Interior angles at local vertices 0, 1, 2.
    pub fn angles(&self, t: usize) -> [f64; 3] {
        let p = self.triangle_points(t);
        let mut out = [0.0; 3];
        for i in 0..3 {
            let a = p[i];
            let b = p[(i + 1) % 3];
            let c = p[(i + 2) % 3];
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [c[0] - a[0], c[1] - a[1]];
            let cross = u[0] * v[1] - u[1] * v[0];
            let dot = u[0] * v[0] + u[1] * v[1];
            out[i] = cross.abs().atan2(dot);
        }
        out
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let p = self.triangle_points(t);
        let mut d: f64 = 0.0;
        for i in 0..3 {
            let a = p[i];
            let b = p[(i + 1) % 3];
            d = d.max(((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt());
        }
        d
    }

    /// Returns `Err(NotRightAngled)` for the first element whose angle at the
    /// leading vertex is not π/2.
    pub fn check_right_angles(&self) -> Result<()> {
        for t in 0..self.n_triangles() {
            if (self.angles(t)[0] - FRAC_PI_2).abs() > 1e-12 {
                return Err(Error::NotRightAngled(t));
            }
        }
        Ok(())
    }

    pub fn metrics(&self) -> MeshMetrics {
        let mut h: f64 = 0.0;
        let mut min_angle = f64::INFINITY;
        let mut total_area = 0.0;
        for t in 0..self.n_triangles() {
            h = h.max(self.diameter(t));
            for a in self.angles(t) {
                min_angle = min_angle.min(a);
            }
            total_area += self.signed_area(t);
        }
        MeshMetrics {
            h,
            min_angle,
            total_area,
        }
    }

    /// Writes the mesh with optional vertex data as a legacy-VTK ASCII
    /// unstructured grid.
    pub fn write_vtk<W: Write>(&self, mut w: W, title: &str, point_data: &[(&str, &[f64])]) -> Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.n_vertices())?;
        for p in &self.vertices {
            writeln!(w, "{:.17e} {:.17e} 0", p[0], p[1])?;
        }
        let nt = self.n_triangles();
        writeln!(w, "CELLS {} {}", nt, 4 * nt)?;
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "CELL_TYPES {nt}")?;
        for _ in 0..nt {
            writeln!(w, "5")?;
        }
        if !point_data.is_empty() {
            writeln!(w, "POINT_DATA {}", self.n_vertices())?;
            for (name, values) in point_data {
                if values.len() != self.n_vertices() {
                    return Err(Error::DimensionMismatch(format!(
                        "point data '{name}' has {} values for {} vertices",
                        values.len(),
                        self.n_vertices()
                    )));
                }
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for v in *values {
                    writeln!(w, "{v:.17e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Builds an `nx × ny` grid on `[0, lx] × [0, ly]`, splitting each cell
/// along the diagonal from its lower-left to its upper-right corner.
pub fn build_rect_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<StructuredMesh> {
    if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "domain sides must be positive, got lx={lx}, ly={ly}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "cell counts must be positive, got nx={nx}, ny={ny}"
        )));
    }
    let dx = lx / nx as f64;
    let dy = ly / ny as f64;
    let idx = |i: usize, j: usize| j * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // snap the far sides so boundary coordinates are exact
            let x = if i == nx { lx } else { i as f64 * dx };
            let y = if j == ny { ly } else { j as f64 * dy };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let p00 = idx(i, j);
            let p10 = idx(i + 1, j);
            let p11 = idx(i + 1, j + 1);
            let p01 = idx(i, j + 1);
            triangles.push([p10, p11, p00]);
            triangles.push([p01, p00, p11]);
        }
    }

    let mut boundary_vertices = BTreeSet::new();
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(i, 0), idx(i + 1, 0)],
            normal: [0.0, -1.0],
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(nx, j), idx(nx, j + 1)],
            normal: [1.0, 0.0],
        });
    }
    for i in (0..nx).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(i + 1, ny), idx(i, ny)],
            normal: [0.0, 1.0],
        });
    }
    for j in (0..ny).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [idx(0, j + 1), idx(0, j)],
            normal: [-1.0, 0.0],
        });
    }
    for e in &boundary_edges {
        boundary_vertices.extend(e.vertices);
    }

    let (edges, triangle_edges) = enumerate_edges(&triangles);

    Ok(StructuredMesh {
        lx,
        ly,
        nx,
        ny,
        vertices,
        triangles,
        boundary_vertices,
        boundary_edges,
        edges,
        triangle_edges,
    })
}

fn enumerate_edges(triangles: &[[usize; 3]]) -> (Vec<[usize; 2]>, Vec<[usize; 3]>) {
    let mut all: Vec<[usize; 2]> = triangles
        .iter()
        .flat_map(|t| (0..3).map(move |i| sorted_pair(t[i], t[(i + 1) % 3])))
        .collect();
    all.sort_unstable();
    all.dedup();
    let triangle_edges = triangles
        .iter()
        .map(|t| {
            let mut out = [0; 3];
            for (i, slot) in out.iter_mut().enumerate() {
                let key = sorted_pair(t[i], t[(i + 1) % 3]);
                *slot = all.binary_search(&key).expect("edge enumerated above");
            }
            out
        })
        .collect();
    (all, triangle_edges)
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn single_cell() {
        let m = build_rect_mesh(2.0, 2.0, 1, 1).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.edges.len(), 5);
        assert!((m.metrics().total_area - 4.0).abs() < 1e-14);
        for t in 0..2 {
            let a = m.angles(t);
            assert!((a[0] - FRAC_PI_2).abs() < 1e-12);
            assert!((a[1] - FRAC_PI_4).abs() < 1e-12);
            assert!((a[2] - FRAC_PI_4).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_cell_min_angle() {
        let m = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        assert!((m.metrics().min_angle - FRAC_PI_4).abs() < 1e-14);
    }

    #[test]
    fn counts_25() {
        let m = build_rect_mesh(2.0, 2.0, 25, 25).unwrap();
        assert_eq!(m.n_vertices(), 676);
        assert_eq!(m.n_triangles(), 1250);
        let met = m.metrics();
        assert!((met.h - 2.0 / 25.0 * 2f64.sqrt()).abs() < 1e-14);
        assert!((met.total_area - 4.0).abs() < 1e-12);
        m.check_right_angles().unwrap();
    }

    #[test]
    fn h_for_20_cells() {
        let m = build_rect_mesh(2.0, 2.0, 20, 20).unwrap();
        assert!((m.metrics().h - 0.1 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(build_rect_mesh(0.0, 1.0, 1, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_rect_mesh(1.0, -1.0, 1, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_rect_mesh(1.0, 1.0, 0, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_rect_mesh(1.0, 1.0, 3, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn boundary_is_consistent() {
        let m = build_rect_mesh(3.0, 1.5, 6, 4).unwrap();
        let expected: BTreeSet<usize> = m
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, p)| p[0] == 0.0 || p[0] == 3.0 || p[1] == 0.0 || p[1] == 1.5)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(m.boundary_vertices, expected);
        for e in &m.boundary_edges {
            let n = e.normal;
            assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-15);
            assert!(n[0] == 0.0 || n[1] == 0.0);
            // outward: midpoint + normal leaves the box
            let a = m.vertices[e.vertices[0]];
            let b = m.vertices[e.vertices[1]];
            let q = [0.5 * (a[0] + b[0]) + 0.1 * n[0], 0.5 * (a[1] + b[1]) + 0.1 * n[1]];
            assert!(q[0] < 0.0 || q[0] > 3.0 || q[1] < 0.0 || q[1] > 1.5);
        }
    }

    #[test]
    fn vtk_header() {
        let m = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        let mut buf = Vec::new();
        let data = [1.0, 2.0, 3.0, 4.0];
        m.write_vtk(&mut buf, "t", &[("u", &data)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\nt\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 4 double\n"));
        assert!(s.contains("CELLS 2 8\n"));
        assert!(s.contains("POINT_DATA 4\nSCALARS u double 1\nLOOKUP_TABLE default\n"));
    }
}
