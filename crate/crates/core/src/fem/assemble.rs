//! Assembly of the scalar bilinear forms and load vectors.

use super::quadrature::QuadratureRule;
use super::space::{FESpace, Tabulation};
use super::sparse::{AssemblyPattern, SparseOperator};
use crate::error::{Error, Result};

pub fn pattern(space: &FESpace) -> AssemblyPattern {
    let elements: Vec<Vec<usize>> = (0..space.n_elements()).map(|e| space.element_dofs(e).to_vec()).collect();
    AssemblyPattern::new(space.n_dofs(), &elements)
}

fn assemble_local<F>(space: &FESpace, mut local: F) -> SparseOperator
where
    F: FnMut(usize, &mut [f64]),
{
    let pat = pattern(space);
    let mut op = pat.zeroed();
    let n = space.local_dofs();
    let mut buf = vec![0.0; n * n];
    for e in 0..space.n_elements() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        local(e, &mut buf);
        pat.add_local(&mut op, e, &buf);
    }
    op.symmetric = true;
    op
}

/// Consistent L² mass matrix `(φ_j, φ_i)`.
pub fn assemble_mass(space: &FESpace) -> SparseOperator {
    let tab = space.tabulate(&QuadratureRule::degree4());
    let n = tab.nloc;
    assemble_local(space, |e, buf| {
        let scale = 2.0 * space.geometry(e).area;
        for q in 0..tab.weights.len() {
            let w = tab.weights[q] * scale;
            let phi = &tab.values[q];
            for i in 0..n {
                for j in 0..n {
                    buf[i * n + j] += w * phi[i] * phi[j];
                }
            }
        }
    })
}

/// Diagonal lumped mass `(φ_j, φ_i)^h = ∫ Π^h(φ_i φ_j)`; P1 only.
pub fn assemble_lumped_mass(space: &FESpace) -> Result<SparseOperator> {
    if space.degree() != 1 {
        return Err(Error::Unsupported("mass lumping is only defined on P1 spaces".into()));
    }
    let mut diag = vec![0.0; space.n_dofs()];
    for e in 0..space.n_elements() {
        let a = space.geometry(e).area / 3.0;
        for &d in space.element_dofs(e) {
            diag[d] += a;
        }
    }
    Ok(SparseOperator::from_diagonal(&diag))
}

/// Stiffness matrix `(∇φ_j, ∇φ_i)`.
pub fn assemble_stiffness(space: &FESpace) -> SparseOperator {
    let tab = space.tabulate(&QuadratureRule::degree4());
    let n = tab.nloc;
    let p1 = space.degree() == 1;
    assemble_local(space, |e, buf| {
        let geo = space.geometry(e);
        let scale = 2.0 * geo.area;
        // P1 gradients are constant: one point suffices
        let npts = if p1 { 1 } else { tab.weights.len() };
        for q in 0..npts {
            let w = if p1 { geo.area } else { tab.weights[q] * scale };
            let g = tab.grads(q, geo);
            for i in 0..n {
                for j in 0..n {
                    buf[i * n + j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
    })
}

/// Load vector `∫ f φ_i` with the given rule.
pub fn load_vector(space: &FESpace, f: impl Fn(f64, f64) -> f64, rule: &QuadratureRule) -> Vec<f64> {
    let tab = Tabulation::new(space.degree(), rule);
    let mut out = vec![0.0; space.n_dofs()];
    for e in 0..space.n_elements() {
        let scale = 2.0 * space.geometry(e).area;
        let dofs = space.element_dofs(e);
        for q in 0..tab.weights.len() {
            let x = space.map_point(e, &tab.points[q]);
            let wf = tab.weights[q] * scale * f(x[0], x[1]);
            for (i, &d) in dofs.iter().enumerate() {
                out[d] += wf * tab.values[q][i];
            }
        }
    }
    out
}

/// `∫ f` over the domain with the given rule.
pub fn integrate_function(space: &FESpace, f: impl Fn(f64, f64) -> f64, rule: &QuadratureRule) -> f64 {
    let mut acc = 0.0;
    for e in 0..space.n_elements() {
        let scale = 2.0 * space.geometry(e).area;
        for (b, w) in rule.points.iter().zip(&rule.weights) {
            let x = space.map_point(e, b);
            acc += w * scale * f(x[0], x[1]);
        }
    }
    acc
}

fn gather(dofs: &[usize], c: &[f64], out: &mut [f64]) {
    for (o, &d) in out.iter_mut().zip(dofs) {
        *o = c[d];
    }
}

/// Vector `(u ∇v, ∇ū_i)` over the test basis of `test_space`; `u` lives in
/// `u_space`, `v` in `v_space`.
pub fn assemble_trilinear_uv(
    u_space: &FESpace,
    u: &[f64],
    v_space: &FESpace,
    v: &[f64],
    test_space: &FESpace,
) -> Result<Vec<f64>> {
    if !(u_space.same_mesh(v_space) && u_space.same_mesh(test_space)) {
        return Err(Error::DimensionMismatch("trilinear form over different meshes".into()));
    }
    let rule = QuadratureRule::degree4();
    let tu = u_space.tabulate(&rule);
    let tv = v_space.tabulate(&rule);
    let tt = test_space.tabulate(&rule);
    let mut out = vec![0.0; test_space.n_dofs()];
    let mut lu = [0.0; 6];
    let mut lv = [0.0; 6];
    for e in 0..test_space.n_elements() {
        let geo = test_space.geometry(e);
        gather(u_space.element_dofs(e), u, &mut lu);
        gather(v_space.element_dofs(e), v, &mut lv);
        let dofs = test_space.element_dofs(e);
        for q in 0..rule.len() {
            let w = rule.weights[q] * 2.0 * geo.area;
            let uq = tu.value(q, &lu);
            let gv = tv.grad(q, geo, &lv);
            let gt = tt.grads(q, geo);
            for (i, &d) in dofs.iter().enumerate() {
                out[d] += w * uq * (gv[0] * gt[i][0] + gv[1] * gt[i][1]);
            }
        }
    }
    Ok(out)
}

/// Vector `(u², v̄_i)` over the test basis.
pub fn assemble_square_source(u_space: &FESpace, u: &[f64], test_space: &FESpace) -> Result<Vec<f64>> {
    if !u_space.same_mesh(test_space) {
        return Err(Error::DimensionMismatch("source term over different meshes".into()));
    }
    let rule = QuadratureRule::degree4();
    let tu = u_space.tabulate(&rule);
    let tt = test_space.tabulate(&rule);
    let mut out = vec![0.0; test_space.n_dofs()];
    let mut lu = [0.0; 6];
    for e in 0..test_space.n_elements() {
        let area = test_space.geometry(e).area;
        gather(u_space.element_dofs(e), u, &mut lu);
        let dofs = test_space.element_dofs(e);
        for q in 0..rule.len() {
            let uq = tu.value(q, &lu);
            let w = rule.weights[q] * 2.0 * area * uq * uq;
            for (i, &d) in dofs.iter().enumerate() {
                out[d] += w * tt.values[q][i];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;
    use std::sync::Arc;

    fn space(n: usize, degree: usize) -> FESpace {
        FESpace::new(Arc::new(build_rect_mesh(2.0, 2.0, n, n).unwrap()), degree).unwrap()
    }

    #[test]
    fn mass_integrates_one() {
        for degree in [1, 2] {
            let s = space(5, degree);
            let m = assemble_mass(&s);
            let one = vec![1.0; s.n_dofs()];
            assert!((m.quadratic(&one) - 4.0).abs() < 1e-13);
            assert!(m.asymmetry() <= 1e-13);
        }
    }

    #[test]
    fn p1_element_mass_on_unit_right_triangle() {
        // a single cell of side 1 gives two right triangles with legs 1
        let s = FESpace::new(Arc::new(build_rect_mesh(1.0, 1.0, 1, 1).unwrap()), 1).unwrap();
        let m = assemble_mass(&s);
        let ml = assemble_lumped_mass(&s).unwrap();
        // vertex 1 (lower right) belongs to one triangle only
        assert!((m.get(1, 1) - 0.5 / 6.0).abs() < 1e-15);
        assert!((ml.get(1, 1) - 0.5 / 3.0).abs() < 1e-15);
        // vertex 0 belongs to both triangles
        assert!((ml.get(0, 0) - 2.0 * 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lumped_mass_is_row_sum() {
        let s = space(4, 1);
        let ml = assemble_lumped_mass(&s).unwrap();
        let rs = assemble_mass(&s).row_sums();
        for (a, b) in ml.diagonal().iter().zip(&rs) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((ml.diagonal().iter().sum::<f64>() - 4.0).abs() < 1e-13);
        assert!(matches!(assemble_lumped_mass(&space(2, 2)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn stiffness_kernel_and_coordinate_energy() {
        for degree in [1, 2] {
            let s = space(6, degree);
            let k = assemble_stiffness(&s);
            let one = vec![1.0; s.n_dofs()];
            assert!(k.mul_vec(&one).iter().all(|v| v.abs() <= 1e-12));
            let x = s.interpolate(|x, _| x);
            assert!((k.quadratic(&x) - 4.0).abs() < 1e-12);
            assert!(k.asymmetry() <= 1e-13);
        }
    }

    #[test]
    fn p1_stiffness_is_m_matrix() {
        let k = assemble_stiffness(&space(7, 1));
        for r in 0..k.nrows {
            for (c, v) in k.row(r) {
                if c != r {
                    assert!(v <= 1e-15, "K[{r},{c}] = {v}");
                }
            }
        }
    }

    #[test]
    fn trilinear_vanishes_for_constant_v_and_factors_constant_u() {
        let p1 = space(4, 1);
        let p2 = FESpace::new(p1.mesh().clone(), 2).unwrap();
        let u = p1.interpolate(|x, y| 1.0 + x * y);
        let vc = vec![3.0; p2.n_dofs()];
        let r = assemble_trilinear_uv(&p1, &u, &p2, &vc, &p1).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));

        let v = p2.interpolate(|x, y| x * x - y + x * y);
        let c = 2.5;
        let uc = vec![c; p1.n_dofs()];
        let r = assemble_trilinear_uv(&p1, &uc, &p2, &v, &p1).unwrap();
        // mixed stiffness (∇ψ_j, ∇φ_i) applied to v
        let mut trip = Vec::new();
        let rule = QuadratureRule::degree4();
        let (t1, t2) = (p1.tabulate(&rule), p2.tabulate(&rule));
        for e in 0..p1.n_elements() {
            let geo = p1.geometry(e);
            for q in 0..rule.len() {
                let w = rule.weights[q] * 2.0 * geo.area;
                let (g1, g2) = (t1.grads(q, geo), t2.grads(q, geo));
                for (i, &di) in p1.element_dofs(e).iter().enumerate() {
                    for (j, &dj) in p2.element_dofs(e).iter().enumerate() {
                        trip.push((di, dj, w * (g1[i][0] * g2[j][0] + g1[i][1] * g2[j][1])));
                    }
                }
            }
        }
        let kuv = SparseOperator::from_triplets(p1.n_dofs(), p2.n_dofs(), &trip).unwrap();
        let expect = kuv.mul_vec(&v);
        for (a, b) in r.iter().zip(&expect) {
            assert!((a - c * b).abs() < 1e-12);
        }
    }

    #[test]
    fn trilinear_matches_high_order_oracle() {
        let p1 = space(5, 1);
        let p2 = FESpace::new(p1.mesh().clone(), 2).unwrap();
        let u = p1.interpolate(|x, _| x);
        let v = p2.interpolate(|x, _| x);
        let r = assemble_trilinear_uv(&p1, &u, &p2, &v, &p1).unwrap();
        // ∫ x ∂ₓφ_i with a tensor Gauss rule evaluated pointwise
        let rule = QuadratureRule::collapsed_gauss(6);
        let mut expect = vec![0.0; p1.n_dofs()];
        for e in 0..p1.n_elements() {
            let geo = p1.geometry(e);
            for (b, w) in rule.points.iter().zip(&rule.weights) {
                let x = p1.map_point(e, b);
                for (i, &d) in p1.element_dofs(e).iter().enumerate() {
                    expect[d] += w * 2.0 * geo.area * x[0] * geo.grad_lambda[i][0];
                }
            }
        }
        for (a, b) in r.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn mismatched_meshes_are_rejected() {
        let a = space(2, 1);
        let b = space(2, 2);
        let u = vec![0.0; a.n_dofs()];
        let v = vec![0.0; b.n_dofs()];
        assert!(assemble_trilinear_uv(&a, &u, &b, &v, &a).is_err());
    }
}
