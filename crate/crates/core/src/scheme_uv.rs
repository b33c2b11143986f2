//! Backward Euler scheme in the variables `(u, v)` with P1 for `u` and P2
//! for `v`, solved by Newton's method on the coupled system.
//!
//! Because `u_h²` lies in the P2 space, testing the `v` equation with
//! `(A_h − I)v` cancels the chemotaxis term exactly, and the scheme
//! satisfies a discrete energy identity which [`UVScheme::energy_law_terms`]
//! evaluates term by term. A P1 space for `v` breaks that cancellation and
//! is supported as a negative control.

use std::sync::Arc;

use log::warn;

use crate::error::{Error, Result};
use crate::fem::assemble::{assemble_mass, assemble_stiffness, integrate_function};
use crate::fem::project::{data_rule, lumped_projection, ShiftedLaplacian};
use crate::fem::quadrature::QuadratureRule;
use crate::fem::space::{FESpace, ScalarField, Tabulation};
use crate::fem::sparse::{norm2, AssemblyPattern, SparseOperator};
use crate::mesh::StructuredMesh;
use crate::solvers::linear::{BlockSystemSolver, LinearMethod, LinearSolveConfig};
use crate::solvers::nonlinear::{newton_solve, NewtonConfig, NewtonSystem};

#[derive(Debug, Clone)]
pub struct UVState {
    pub u: ScalarField,
    pub v: ScalarField,
    pub t: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UVConfig {
    pub k: f64,
    pub newton: NewtonConfig,
    pub linear: LinearSolveConfig,
}

impl UVConfig {
    pub fn new(k: f64) -> Self {
        Self {
            k,
            newton: NewtonConfig::default(),
            linear: LinearSolveConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", self.k)));
        }
        self.newton.validate()?;
        self.linear.validate()?;
        if self.linear.method == LinearMethod::ConjugateGradient {
            return Err(Error::InvalidArgument("the Newton matrix is nonsymmetric; conjugate gradients do not apply".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UVStepInfo {
    pub newton_iterations: usize,
    pub residual: f64,
    pub linear_iterations: usize,
}

/// Terms of the discrete energy identity between two consecutive states,
/// with `û = u − m₀`. Their signed sum vanishes for the (P1, P2) scheme.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UVEnergyLawTerms {
    /// `δ_t E(û, v)`.
    pub energy_rate: f64,
    /// `(k/2)‖δ_t û‖₀²`.
    pub u_increment: f64,
    /// `(k/4)‖δ_t ∇v‖₀²`.
    pub grad_v_increment: f64,
    /// `‖û‖₁² = ‖∇û‖₀² + (∫û)²`.
    pub u_h1: f64,
    /// `½‖(A_h − I)v‖₀²`.
    pub shifted_laplacian: f64,
    /// `½‖∇v‖₀²`.
    pub grad_v: f64,
}

impl UVEnergyLawTerms {
    pub fn sum(&self) -> f64 {
        self.energy_rate + self.u_increment + self.grad_v_increment + self.u_h1 + self.shifted_laplacian + self.grad_v
    }

    pub fn largest(&self) -> f64 {
        [
            self.energy_rate,
            self.u_increment,
            self.grad_v_increment,
            self.u_h1,
            self.shifted_laplacian,
            self.grad_v,
        ]
        .iter()
        .fold(0.0, |m, t| m.max(t.abs()))
    }

    /// `δ_t E + ‖û‖₁² + ½‖(A_h − I)v‖₀² + ½‖∇v‖₀²`, which is `≤ 0` and
    /// equals minus the two increment terms.
    pub fn energy_residual(&self) -> f64 {
        self.energy_rate + self.u_h1 + self.shifted_laplacian + self.grad_v
    }
}

struct StepCache {
    k: f64,
    base: SparseOperator,
    solver: BlockSystemSolver,
}

pub struct UVScheme {
    u_space: Arc<FESpace>,
    v_space: Arc<FESpace>,
    mass_u: SparseOperator,
    stiff_u: SparseOperator,
    mass_v: SparseOperator,
    stiff_v: SparseOperator,
    ah: ShiftedLaplacian,
    pattern: AssemblyPattern,
    tab_u: Tabulation,
    tab_v: Tabulation,
    cache: Option<StepCache>,
}

impl UVScheme {
    /// P1 for `u` and P2 for `v`.
    pub fn new(mesh: Arc<StructuredMesh>) -> Result<Self> {
        Self::with_v_degree(mesh, 2)
    }

    /// `v_degree = 1` gives the (P1, P1) variant without the exact energy
    /// identity.
    pub fn with_v_degree(mesh: Arc<StructuredMesh>, v_degree: usize) -> Result<Self> {
        let u_space = Arc::new(FESpace::new(mesh.clone(), 1)?);
        let v_space = Arc::new(FESpace::new(mesh, v_degree)?);
        let nu = u_space.n_dofs();
        let elements: Vec<Vec<usize>> = (0..u_space.n_elements())
            .map(|e| {
                let mut d = u_space.element_dofs(e).to_vec();
                d.extend(v_space.element_dofs(e).iter().map(|&j| nu + j));
                d
            })
            .collect();
        let pattern = AssemblyPattern::new(nu + v_space.n_dofs(), &elements);
        let mass_v = assemble_mass(&v_space);
        let stiff_v = assemble_stiffness(&v_space);
        let ah = ShiftedLaplacian::from_operators(mass_v.clone(), stiff_v.clone())?;
        let rule = QuadratureRule::degree4();
        Ok(Self {
            mass_u: assemble_mass(&u_space),
            stiff_u: assemble_stiffness(&u_space),
            tab_u: u_space.tabulate(&rule),
            tab_v: v_space.tabulate(&rule),
            mass_v,
            stiff_v,
            ah,
            pattern,
            u_space,
            v_space,
            cache: None,
        })
    }

    pub fn u_space(&self) -> &Arc<FESpace> {
        &self.u_space
    }

    pub fn v_space(&self) -> &Arc<FESpace> {
        &self.v_space
    }

    pub fn mass_u(&self) -> &SparseOperator {
        &self.mass_u
    }

    pub fn mass_v(&self) -> &SparseOperator {
        &self.mass_v
    }

    pub fn stiffness_u(&self) -> &SparseOperator {
        &self.stiff_u
    }

    pub fn stiffness_v(&self) -> &SparseOperator {
        &self.stiff_v
    }

    pub fn shifted_laplacian(&self) -> &ShiftedLaplacian {
        &self.ah
    }

    /// `u⁰` is the lumped projection of `u₀` shifted by a constant so that
    /// `∫u⁰ = ∫u₀`; `v⁰` interpolates `v₀`.
    pub fn init(&self, u0: impl Fn(f64, f64) -> f64, v0: impl Fn(f64, f64) -> f64) -> Result<UVState> {
        let rule = data_rule();
        let mut u = lumped_projection(&self.u_space, &u0, &rule)?;
        let target = integrate_function(&self.u_space, &u0, &rule);
        let area = self.u_space.mesh().area();
        let shift = (target - self.integral_u(&u)) / area;
        u.iter_mut().for_each(|x| *x += shift);
        let v = self.v_space.interpolate(&v0);
        if u.iter().chain(&v).any(|&x| x < 0.0) {
            warn!("initial data has negative nodal values");
        }
        Ok(UVState {
            u: ScalarField::new(self.u_space.clone(), u)?,
            v: ScalarField::new(self.v_space.clone(), v)?,
            t: 0.0,
            step: 0,
        })
    }

    pub fn integral_u(&self, u: &[f64]) -> f64 {
        self.mass_u.row_sums().iter().zip(u).map(|(a, b)| a * b).sum()
    }

    pub fn integral_v(&self, v: &[f64]) -> f64 {
        self.mass_v.row_sums().iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// `E(u, v) = ½‖u‖₀² + ¼‖∇v‖₀²`.
    pub fn energy(&self, state: &UVState) -> f64 {
        0.5 * self.mass_u.quadratic(&state.u.coeffs) + 0.25 * self.stiff_v.quadratic(&state.v.coeffs)
    }

    fn ensure_cache(&mut self, k: f64) -> Result<()> {
        if self.cache.as_ref().is_some_and(|c| c.k == k) {
            return Ok(());
        }
        let nu = self.u_space.n_dofs();
        let mut base = self.pattern.zeroed();
        base.add_block(&self.mass_u, 0, 0, 1.0 / k)?;
        base.add_block(&self.stiff_u, 0, 0, 1.0)?;
        base.add_block(&self.mass_v, nu, nu, 1.0 / k + 1.0)?;
        base.add_block(&self.stiff_v, nu, nu, 1.0)?;
        let a_vv = self.mass_v.linear_combination(1.0 / k + 1.0, &self.stiff_v, 1.0)?;
        self.cache = Some(StepCache {
            k,
            base,
            solver: BlockSystemSolver::new(nu, &a_vv)?,
        });
        Ok(())
    }

    /// Residual of the coupled equations at `(u, v)` given the previous
    /// state, ordered `[u rows, v rows]`.
    pub fn residual(&self, prev: &UVState, u: &[f64], v: &[f64], k: f64) -> Vec<f64> {
        let (nl_u, nl_v) = self.nonlinear_terms(u, v);
        let mut r = Vec::with_capacity(u.len() + v.len());
        let du: Vec<f64> = u.iter().zip(&prev.u.coeffs).map(|(a, b)| a - b).collect();
        let mdu = self.mass_u.mul_vec(&du);
        let ku = self.stiff_u.mul_vec(u);
        for i in 0..u.len() {
            r.push(mdu[i] / k + ku[i] + nl_u[i]);
        }
        let dv: Vec<f64> = v.iter().zip(&prev.v.coeffs).map(|(a, b)| a - b).collect();
        let mdv = self.mass_v.mul_vec(&dv);
        let mv = self.mass_v.mul_vec(v);
        let kv = self.stiff_v.mul_vec(v);
        for j in 0..v.len() {
            r.push(mdv[j] / k + kv[j] + mv[j] - nl_v[j]);
        }
        r
    }

    /// `(u∇v, ∇ū_i)` and `(u², v̄_j)`.
    fn nonlinear_terms(&self, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tu = vec![0.0; u.len()];
        let mut sv = vec![0.0; v.len()];
        let mut lu = [0.0; 3];
        let mut lv = [0.0; 6];
        for e in 0..self.u_space.n_elements() {
            let geo = self.u_space.geometry(e);
            let du = self.u_space.element_dofs(e);
            let dv = self.v_space.element_dofs(e);
            for (i, &d) in du.iter().enumerate() {
                lu[i] = u[d];
            }
            for (i, &d) in dv.iter().enumerate() {
                lv[i] = v[d];
            }
            for q in 0..self.tab_u.weights.len() {
                let w = self.tab_u.weights[q] * 2.0 * geo.area;
                let uq = self.tab_u.value(q, &lu);
                let gv = self.tab_v.grad(q, geo, &lv);
                let gphi = self.tab_u.grads(q, geo);
                for (i, &d) in du.iter().enumerate() {
                    tu[d] += w * uq * (gv[0] * gphi[i][0] + gv[1] * gphi[i][1]);
                }
                let psi = &self.tab_v.values[q];
                for (j, &d) in dv.iter().enumerate() {
                    sv[d] += w * uq * uq * psi[j];
                }
            }
        }
        (tu, sv)
    }

    fn jacobian_with(&self, base: &SparseOperator, u: &[f64], v: &[f64]) -> SparseOperator {
        let mut jac = base.clone();
        let nvl = self.v_space.local_dofs();
        let n = 3 + nvl;
        let mut local = vec![0.0; n * n];
        let mut lu = [0.0; 3];
        let mut lv = [0.0; 6];
        for e in 0..self.u_space.n_elements() {
            let geo = self.u_space.geometry(e);
            for (i, &d) in self.u_space.element_dofs(e).iter().enumerate() {
                lu[i] = u[d];
            }
            for (i, &d) in self.v_space.element_dofs(e).iter().enumerate() {
                lv[i] = v[d];
            }
            local.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..self.tab_u.weights.len() {
                let w = self.tab_u.weights[q] * 2.0 * geo.area;
                let uq = self.tab_u.value(q, &lu);
                let gv = self.tab_v.grad(q, geo, &lv);
                let gphi = self.tab_u.grads(q, geo);
                let gpsi = self.tab_v.grads(q, geo);
                let phi = &self.tab_u.values[q];
                let psi = &self.tab_v.values[q];
                for i in 0..3 {
                    let gvi = gv[0] * gphi[i][0] + gv[1] * gphi[i][1];
                    for l in 0..3 {
                        local[i * n + l] += w * phi[l] * gvi;
                    }
                    for m in 0..nvl {
                        local[i * n + 3 + m] += w * uq * (gpsi[m][0] * gphi[i][0] + gpsi[m][1] * gphi[i][1]);
                    }
                }
                for j in 0..nvl {
                    for l in 0..3 {
                        local[(3 + j) * n + l] -= 2.0 * w * uq * phi[l] * psi[j];
                    }
                }
            }
            self.pattern.add_local(&mut jac, e, &local);
        }
        jac
    }

    /// Jacobian of [`UVScheme::residual`] at `(u, v)`.
    pub fn jacobian(&mut self, u: &[f64], v: &[f64], k: f64) -> Result<SparseOperator> {
        self.ensure_cache(k)?;
        let base = &self.cache.as_ref().expect("cache built").base;
        Ok(self.jacobian_with(base, u, v))
    }

    /// Advances one step. The Newton iteration starts from the previous
    /// state.
    pub fn step(&mut self, prev: &UVState, cfg: &UVConfig) -> Result<(UVState, UVStepInfo)> {
        cfg.validate()?;
        if !prev.u.space.same_mesh(&self.u_space) || prev.v.coeffs.len() != self.v_space.n_dofs() {
            return Err(Error::DimensionMismatch("state does not belong to this scheme".into()));
        }
        self.ensure_cache(cfg.k)?;
        let nu = self.u_space.n_dofs();
        let mut x0 = prev.u.coeffs.clone();
        x0.extend_from_slice(&prev.v.coeffs);
        let mut cache = self.cache.take().expect("cache built");
        let mut sys = UVNewton {
            scheme: self,
            cache: &mut cache,
            prev,
            k: cfg.k,
            linear: cfg.linear,
            linear_iterations: 0,
        };
        let out = newton_solve(&mut sys, &x0, &cfg.newton);
        let linear_iterations = sys.linear_iterations;
        self.cache = Some(cache);
        let out = out.map_err(|e| Error::StepFailure {
            step: prev.step + 1,
            source: Box::new(e),
        })?;
        let (u, v) = out.x.split_at(nu);
        Ok((
            UVState {
                u: ScalarField::new(self.u_space.clone(), u.to_vec())?,
                v: ScalarField::new(self.v_space.clone(), v.to_vec())?,
                t: prev.t + cfg.k,
                step: prev.step + 1,
            },
            UVStepInfo {
                newton_iterations: out.iterations,
                residual: out.residual,
                linear_iterations,
            },
        ))
    }

    /// Evaluates each term of the discrete energy identity between `prev`
    /// and `next` with time step `k`.
    pub fn energy_law_terms(&self, prev: &UVState, next: &UVState, k: f64) -> UVEnergyLawTerms {
        let area = self.u_space.mesh().area();
        let m0 = self.integral_u(&prev.u.coeffs) / area;
        let hat_n: Vec<f64> = next.u.coeffs.iter().map(|x| x - m0).collect();
        let hat_p: Vec<f64> = prev.u.coeffs.iter().map(|x| x - m0).collect();
        let du: Vec<f64> = hat_n.iter().zip(&hat_p).map(|(a, b)| a - b).collect();
        let su: Vec<f64> = hat_n.iter().zip(&hat_p).map(|(a, b)| a + b).collect();
        let dv: Vec<f64> = next.v.coeffs.iter().zip(&prev.v.coeffs).map(|(a, b)| a - b).collect();
        let sv: Vec<f64> = next.v.coeffs.iter().zip(&prev.v.coeffs).map(|(a, b)| a + b).collect();
        // differences of squares written as products to avoid cancellation
        let energy_rate = (0.5 * self.mass_u.bilinear(&du, &su) + 0.25 * self.stiff_v.bilinear(&dv, &sv)) / k;
        let mean_hat = self.integral_u(&hat_n);
        UVEnergyLawTerms {
            energy_rate,
            u_increment: 0.5 * self.mass_u.quadratic(&du) / k,
            grad_v_increment: 0.25 * self.stiff_v.quadratic(&dv) / k,
            u_h1: self.stiff_u.quadratic(&hat_n) + mean_hat * mean_hat,
            shifted_laplacian: 0.5 * self.ah.minus_identity_norm_sq(&next.v.coeffs),
            grad_v: 0.5 * self.stiff_v.quadratic(&next.v.coeffs),
        }
    }

    /// `k (‖u‖₁² + ‖∇v‖₁²)²` with `‖∇v‖₁²` measured as
    /// `‖∇v‖₀² + ‖(A_h − I)v‖₀²`. Uniqueness of the step solution is known
    /// when this is small; reported only.
    pub fn uniqueness_indicator(&self, state: &UVState, k: f64) -> f64 {
        let u = &state.u.coeffs;
        let mean = self.integral_u(u);
        let u1 = self.stiff_u.quadratic(u) + mean * mean;
        let v = &state.v.coeffs;
        let gv1 = self.stiff_v.quadratic(v) + self.ah.minus_identity_norm_sq(v);
        k * (u1 + gv1).powi(2)
    }
}

struct UVNewton<'a> {
    scheme: &'a UVScheme,
    cache: &'a mut StepCache,
    prev: &'a UVState,
    k: f64,
    linear: LinearSolveConfig,
    linear_iterations: usize,
}

impl NewtonSystem for UVNewton<'_> {
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let (u, v) = x.split_at(self.scheme.u_space.n_dofs());
        Ok(self.scheme.residual(self.prev, u, v, self.k))
    }

    fn jacobian(&mut self, x: &[f64]) -> Result<SparseOperator> {
        let (u, v) = x.split_at(self.scheme.u_space.n_dofs());
        Ok(self.scheme.jacobian_with(&self.cache.base, u, v))
    }

    fn solve_jacobian(&mut self, x: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let jac = self.jacobian(x)?;
        let (dx, its) = self.cache.solver.solve(&jac, rhs, &self.linear)?;
        self.linear_iterations += its;
        Ok(dx)
    }
}

/// Discrete `L²` norm of the Newton residual recomputed at a state.
pub fn recomputed_residual(scheme: &UVScheme, prev: &UVState, next: &UVState, k: f64) -> f64 {
    norm2(&scheme.residual(prev, &next.u.coeffs, &next.v.coeffs, k))
}

/// `∫u` and `∫v` for a state, by mass row sums.
pub fn masses(scheme: &UVScheme, state: &UVState) -> (f64, f64) {
    (scheme.integral_u(&state.u.coeffs), scheme.integral_v(&state.v.coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scheme(n: usize, v_degree: usize) -> UVScheme {
        UVScheme::with_v_degree(Arc::new(build_rect_mesh(2.0, 2.0, n, n).unwrap()), v_degree).unwrap()
    }

    fn bump_u(x: f64, y: f64) -> f64 {
        -10.0 * x * y * (2.0 - x) * (2.0 - y) * (-10.0 * (y - 1.0).powi(2) - 10.0 * (x - 1.0).powi(2)).exp() + 10.0001
    }

    fn bump_v(x: f64, y: f64) -> f64 {
        20.0 * x * y * (2.0 - x) * (2.0 - y) * (-30.0 * (y - 1.0).powi(2) - 30.0 * (x - 1.0).powi(2)).exp() + 0.0001
    }

    #[test]
    fn constant_state_is_a_fixed_point() {
        let mut s = scheme(4, 2);
        let m0 = 1.7;
        let st = s.init(|_, _| m0, |_, _| m0 * m0).unwrap();
        assert!(st.u.coeffs.iter().all(|x| (x - m0).abs() < 1e-13));
        let (next, info) = s.step(&st, &UVConfig::new(1e-2)).unwrap();
        assert_eq!(info.newton_iterations, 0);
        assert!(next.u.coeffs.iter().all(|x| (x - m0).abs() < 1e-12));
        assert!(next.v.coeffs.iter().all(|x| (x - m0 * m0).abs() < 1e-12));
        let terms = s.energy_law_terms(&st, &next, 1e-2);
        assert!(terms.largest() < 1e-12, "{terms:?}");
    }

    #[test]
    fn energy_of_simple_states() {
        let s = scheme(3, 2);
        let st = s.init(|_, _| 2.0, |_, _| 5.0).unwrap();
        assert!((s.energy(&st) - 8.0).abs() < 1e-12);
        let zero = s.init(|_, _| 0.0, |_, _| 0.0).unwrap();
        assert_eq!(s.energy(&zero), 0.0);
    }

    #[test]
    fn init_matches_mean_and_is_positive() {
        let s = scheme(20, 2);
        let st = s.init(bump_u, bump_v).unwrap();
        let exact = integrate_function(&FESpace::new(Arc::new(build_rect_mesh(2.0, 2.0, 60, 60).unwrap()), 1).unwrap(), bump_u, &QuadratureRule::collapsed_gauss(10));
        assert!((s.integral_u(&st.u.coeffs) - exact).abs() < 1e-12 * exact);
        assert!(st.u.coeffs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut s = scheme(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prev = s.init(|x, y| 1.0 + x * y, |x, y| 2.0 + (x - y).sin()).unwrap();
        let nu = s.u_space().n_dofs();
        let x: Vec<f64> = prev.u.coeffs.iter().chain(&prev.v.coeffs).map(|c| c + rng.gen_range(-0.3..0.3)).collect();
        let d: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = 0.05;
        let jac = s.jacobian(&x[..nu], &x[nu..], k).unwrap();
        let jd = jac.mul_vec(&d);
        let h = 1e-6;
        let shifted = |sign: f64| -> Vec<f64> {
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + sign * h * b).collect();
            s.residual(&prev, &y[..nu], &y[nu..], k)
        };
        let (rp, rm) = (shifted(1.0), shifted(-1.0));
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let err: Vec<f64> = fd.iter().zip(&jd).map(|(a, b)| a - b).collect();
        assert!(norm2(&err) <= 1e-6 * norm2(&jd), "{} vs {}", norm2(&err), norm2(&jd));
    }

    fn run(s: &mut UVScheme, cfg: &UVConfig, steps: usize) -> Vec<(UVState, UVStepInfo)> {
        let mut st = s.init(bump_u, bump_v).unwrap();
        let mut out = Vec::new();
        for _ in 0..steps {
            let (next, info) = s.step(&st, cfg).unwrap();
            out.push((next.clone(), info));
            st = next;
        }
        out
    }

    #[test]
    fn mass_mean_v_and_energy_identity() {
        let mut s = scheme(8, 2);
        let mut cfg = UVConfig::new(1e-3);
        cfg.newton.tol = 1e-11;
        let st0 = s.init(bump_u, bump_v).unwrap();
        let mass0 = s.integral_u(&st0.u.coeffs);
        let mut prev = st0;
        for _ in 0..5 {
            let (next, info) = s.step(&prev, &cfg).unwrap();
            assert!(info.newton_iterations >= 1);
            assert!((s.integral_u(&next.u.coeffs) - mass0).abs() <= 1e-10 * mass0);
            // δ_t ∫v = ∫u² − ∫v
            let dv = (s.integral_v(&next.v.coeffs) - s.integral_v(&prev.v.coeffs)) / cfg.k;
            let usq = s.mass_u().quadratic(&next.u.coeffs);
            let rhs = usq - s.integral_v(&next.v.coeffs);
            assert!((dv - rhs).abs() < 1e-7 * rhs.abs().max(1.0), "{dv} vs {rhs}");
            let terms = s.energy_law_terms(&prev, &next, cfg.k);
            assert!(terms.sum().abs() <= 1e-7 * terms.largest(), "{terms:?}");
            assert!(s.energy(&next) <= s.energy(&prev) + 1e-10);
            // the solver's reported residual is reproducible
            assert!((recomputed_residual(&s, &prev, &next, cfg.k) - info.residual).abs() <= 1e-12);
            prev = next;
        }
    }

    #[test]
    fn krylov_and_direct_agree() {
        let mut s = scheme(6, 2);
        let mut cfg = UVConfig::new(1e-3);
        cfg.newton.tol = 1e-11;
        let a = run(&mut s, &cfg, 3);
        cfg.linear.method = LinearMethod::BiCgStab;
        let b = run(&mut s, &cfg, 3);
        let (ua, ub) = (&a[2].0.u.coeffs, &b[2].0.u.coeffs);
        let diff: Vec<f64> = ua.iter().zip(ub).map(|(x, y)| x - y).collect();
        assert!(norm2(&diff) < 1e-8 * norm2(ua));
        assert!(b[0].1.linear_iterations > 0);
    }

    #[test]
    fn p1_v_space_breaks_the_identity() {
        let mut cfg = UVConfig::new(1e-3);
        cfg.newton.tol = 1e-11;
        let mut good = scheme(8, 2);
        let mut bad = scheme(8, 1);
        let g = run(&mut good, &cfg, 2);
        let b = run(&mut bad, &cfg, 2);
        let dg = good.energy_law_terms(&good.init(bump_u, bump_v).unwrap(), &g[0].0, cfg.k).sum().abs();
        let db = bad.energy_law_terms(&bad.init(bump_u, bump_v).unwrap(), &b[0].0, cfg.k).sum().abs();
        assert!(db > 1e3 * dg.max(1e-14), "{db} vs {dg}");
    }

    #[test]
    fn conjugate_gradient_is_rejected() {
        let mut cfg = UVConfig::new(1e-3);
        cfg.linear.method = LinearMethod::ConjugateGradient;
        assert!(cfg.validate().is_err());
        assert!(UVConfig::new(0.0).validate().is_err());
    }
}
