//! Schemes in the variables `(u, σ)` with `σ` standing for `∇v`.
//!
//! Both variants use P1 for `u` with a lumped time derivative, and the
//! vector P1 space with vanishing normal trace for `σ`:
//!
//! ```text
//! (δ_t u, ū)^h + (∇u, ∇ū) + (M(u) σ, ∇ū) = 0
//! (δ_t σ, σ̄) + (B σ, σ̄) = 2 (M(u) ∇u, σ̄)
//! ```
//!
//! where the mobility `M(u)` is the element matrix `Λ_ε(u)` for the
//! regularized scheme, solved by a Picard iteration, and the scalar `u`
//! itself for the plain variant, solved by Newton's method. The chemical
//! `v` is recovered afterwards from a lumped linear problem.

use std::sync::Arc;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::fem::assemble::{assemble_lumped_mass, assemble_mass, assemble_square_source, assemble_stiffness};
use crate::fem::project::{data_rule, lumped_projection, ShiftedLaplacian};
use crate::fem::quadrature::QuadratureRule;
use crate::fem::sigma::{VectorField, VectorSpaceSigma};
use crate::fem::space::{FESpace, ScalarField, Tabulation};
use crate::fem::sparse::{norm2, AssemblyPattern, SparseOperator};
use crate::mesh::StructuredMesh;
use crate::regularization::{f_eps, LambdaBuilder, LambdaField, Regularization};
use crate::solvers::linear::{BlockSystemSolver, Factorization, LinearMethod, LinearSolveConfig};
use crate::solvers::nonlinear::{newton_solve, AndersonMixer, NewtonConfig, NewtonSystem, PicardConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum USVariant {
    Regularized(Regularization),
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct USConfig {
    pub k: f64,
    pub variant: USVariant,
    pub picard: PicardConfig,
    pub newton: NewtonConfig,
    pub linear: LinearSolveConfig,
    /// How many times a step may halve its time step after the Picard
    /// iteration diverges or runs out of iterations.
    pub max_halvings: usize,
}

/// Consecutive growing Picard changes that count as divergence.
const DIVERGENCE_RUN: usize = 5;

impl USConfig {
    pub fn regularized(k: f64, eps: f64) -> Result<Self> {
        Ok(Self::with_variant(k, USVariant::Regularized(Regularization::new(eps)?)))
    }

    pub fn plain(k: f64) -> Self {
        Self::with_variant(k, USVariant::Plain)
    }

    fn with_variant(k: f64, variant: USVariant) -> Self {
        Self {
            k,
            variant,
            picard: PicardConfig::default(),
            newton: NewtonConfig::default(),
            linear: LinearSolveConfig::default(),
            max_halvings: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", self.k)));
        }
        if let USVariant::Regularized(r) = self.variant {
            Regularization::new(r.eps)?;
        }
        self.picard.validate()?;
        self.newton.validate()?;
        self.linear.validate()?;
        if self.variant == USVariant::Plain && self.linear.method == LinearMethod::ConjugateGradient {
            return Err(Error::InvalidArgument("the Newton matrix is nonsymmetric; conjugate gradients do not apply".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct USState {
    pub u: ScalarField,
    pub sigma: VectorField,
    pub v: ScalarField,
    pub t: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct USStepInfo {
    /// Picard or Newton iterations of the accepted attempt.
    pub iterations: usize,
    /// Last relative Picard change, or the final Newton residual norm.
    pub last_change: f64,
    /// Time step actually taken.
    pub k_used: f64,
    pub halvings: usize,
    pub linear_iterations: usize,
}

/// Terms of the discrete energy law between two consecutive states, with
/// `û = u − m₀` and lumped norms wherever the scheme pairs lumped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct USEnergyLawTerms {
    /// `δ_t (½|û|_h² + ¼‖σ‖₀²)`.
    pub energy_rate: f64,
    /// `(k/2)|δ_t û|_h²`.
    pub u_increment: f64,
    /// `(k/4)‖δ_t σ‖₀²`.
    pub sigma_increment: f64,
    /// `‖û‖₁² = ‖∇û‖₀² + (∫û)²`.
    pub u_h1: f64,
    /// `½‖σ‖₁²` with `‖σ‖₁² = (Bσ, σ)`.
    pub sigma_h1: f64,
}

impl USEnergyLawTerms {
    pub fn sum(&self) -> f64 {
        self.energy_rate + self.u_increment + self.sigma_increment + self.u_h1 + self.sigma_h1
    }

    pub fn largest(&self) -> f64 {
        [self.energy_rate, self.u_increment, self.sigma_increment, self.u_h1, self.sigma_h1]
            .iter()
            .fold(0.0, |m, t| m.max(t.abs()))
    }
}

struct StepCache {
    k: f64,
    u_factor: Factorization,
    sigma_factor: Factorization,
    v_factor: Factorization,
    plain: Option<(SparseOperator, BlockSystemSolver)>,
}

pub struct USScheme {
    space: Arc<FESpace>,
    sigma_space: Arc<VectorSpaceSigma>,
    mass: SparseOperator,
    lumped: Vec<f64>,
    stiffness: SparseOperator,
    sigma_mass: SparseOperator,
    b: SparseOperator,
    ah: ShiftedLaplacian,
    tab: Tabulation,
    plain_pattern: AssemblyPattern,
    plain_mask: Vec<bool>,
    lambda: Option<LambdaBuilder>,
    cache: Option<StepCache>,
}

impl USScheme {
    pub fn new(mesh: Arc<StructuredMesh>) -> Result<Self> {
        let space = Arc::new(FESpace::new(mesh, 1)?);
        let sigma_space = Arc::new(VectorSpaceSigma::new(space.clone())?);
        let n = space.n_dofs();
        let elements: Vec<Vec<usize>> = (0..space.n_elements())
            .map(|e| {
                let d = space.element_dofs(e);
                let mut all = d.to_vec();
                all.extend(d.iter().map(|&i| n + i));
                all.extend(d.iter().map(|&i| 2 * n + i));
                all
            })
            .collect();
        let mut plain_mask = vec![false; n];
        plain_mask.extend_from_slice(sigma_space.constrained());
        let mass = assemble_mass(&space);
        let stiffness = assemble_stiffness(&space);
        Ok(Self {
            lumped: assemble_lumped_mass(&space)?.diagonal(),
            ah: ShiftedLaplacian::from_operators(mass.clone(), stiffness.clone())?,
            mass,
            stiffness,
            sigma_mass: sigma_space.assemble_mass(),
            b: sigma_space.assemble_b(),
            tab: space.tabulate(&QuadratureRule::degree4()),
            plain_pattern: AssemblyPattern::new(3 * n, &elements),
            plain_mask,
            lambda: None,
            cache: None,
            space,
            sigma_space,
        })
    }

    pub fn space(&self) -> &Arc<FESpace> {
        &self.space
    }

    pub fn sigma_space(&self) -> &Arc<VectorSpaceSigma> {
        &self.sigma_space
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    pub fn sigma_mass(&self) -> &SparseOperator {
        &self.sigma_mass
    }

    pub fn b_matrix(&self) -> &SparseOperator {
        &self.b
    }

    pub fn shifted_laplacian(&self) -> &ShiftedLaplacian {
        &self.ah
    }

    /// `u⁰ = Q^h u₀`, `σ⁰ = Q̃^h(∇v₀)`, `v⁰ = Q^h v₀`.
    pub fn init(
        &self,
        u0: impl Fn(f64, f64) -> f64,
        v0: impl Fn(f64, f64) -> f64,
        grad_v0: impl Fn(f64, f64) -> [f64; 2],
    ) -> Result<USState> {
        let rule = data_rule();
        let u = lumped_projection(&self.space, u0, &rule)?;
        let v = lumped_projection(&self.space, v0, &rule)?;
        if u.iter().chain(&v).any(|&x| x < 0.0) {
            warn!("initial data has negative nodal values");
        }
        let sigma = self.sigma_space.l2_project(grad_v0, &rule)?;
        Ok(USState {
            u: ScalarField::new(self.space.clone(), u)?,
            sigma: VectorField::new(self.sigma_space.clone(), sigma)?,
            v: ScalarField::new(self.space.clone(), v)?,
            t: 0.0,
            step: 0,
        })
    }

    /// `(u, 1)^h`.
    pub fn lumped_integral(&self, u: &[f64]) -> f64 {
        self.lumped.iter().zip(u).map(|(m, x)| m * x).sum()
    }

    pub fn lumped_norm_sq(&self, u: &[f64]) -> f64 {
        self.lumped.iter().zip(u).map(|(m, x)| m * x * x).sum()
    }

    /// `Ẽ(u, σ) = ½‖u‖₀² + ¼‖σ‖₀²`.
    pub fn modified_energy(&self, state: &USState) -> f64 {
        0.5 * self.mass.quadratic(&state.u.coeffs) + 0.25 * self.sigma_mass.quadratic(&state.sigma.coeffs)
    }

    /// `(F_ε(u), 1)^h`.
    pub fn lumped_potential(&self, u: &[f64], eps: f64) -> f64 {
        self.lumped.iter().zip(u).map(|(m, &x)| m * f_eps(x, eps)).sum()
    }

    fn ensure_cache(&mut self, k: f64) -> Result<()> {
        if self.cache.as_ref().is_some_and(|c| c.k == k) {
            return Ok(());
        }
        let ml = SparseOperator::from_diagonal(&self.lumped);
        let a_u = ml.linear_combination(1.0 / k, &self.stiffness, 1.0)?;
        let a_s = self.sigma_space.pinned(&self.sigma_mass.linear_combination(1.0 / k, &self.b, 1.0)?);
        let a_v = ml.linear_combination(1.0 / k + 1.0, &self.stiffness, 1.0)?;
        self.cache = Some(StepCache {
            k,
            u_factor: Factorization::cholesky(&a_u)?,
            sigma_factor: Factorization::cholesky(&a_s)?,
            v_factor: Factorization::cholesky(&a_v)?,
            plain: None,
        });
        Ok(())
    }

    fn lambda_builder(&mut self, reg: Regularization) -> Result<&LambdaBuilder> {
        if self.lambda.as_ref().is_none_or(|b| b.eps() != reg.eps) {
            self.lambda = Some(LambdaBuilder::new(&self.space, reg)?);
        }
        Ok(self.lambda.as_ref().expect("builder set"))
    }

    /// `(Λ σ, ∇ū_i)` for element-constant `Λ`.
    fn coupling_u(&self, lambda: &LambdaField, sigma: &[f64]) -> Vec<f64> {
        let n = self.space.n_dofs();
        let mut out = vec![0.0; n];
        for e in 0..self.space.n_elements() {
            let geo = self.space.geometry(e);
            let d = self.space.element_dofs(e);
            let mean = [
                (sigma[d[0]] + sigma[d[1]] + sigma[d[2]]) / 3.0,
                (sigma[n + d[0]] + sigma[n + d[1]] + sigma[n + d[2]]) / 3.0,
            ];
            let w = lambda.apply(e, mean);
            for (i, &di) in d.iter().enumerate() {
                let g = geo.grad_lambda[i];
                out[di] += geo.area * (w[0] * g[0] + w[1] * g[1]);
            }
        }
        out
    }

    /// `(Λ ∇u, σ̄_i)` for element-constant `Λ`; constrained rows zeroed.
    fn coupling_sigma(&self, lambda: &LambdaField, u: &[f64]) -> Vec<f64> {
        let n = self.space.n_dofs();
        let mut out = vec![0.0; 2 * n];
        for e in 0..self.space.n_elements() {
            let geo = self.space.geometry(e);
            let d = self.space.element_dofs(e);
            let mut gu = [0.0; 2];
            for (i, &di) in d.iter().enumerate() {
                gu[0] += u[di] * geo.grad_lambda[i][0];
                gu[1] += u[di] * geo.grad_lambda[i][1];
            }
            let w = lambda.apply(e, gu);
            let third = geo.area / 3.0;
            for &di in d {
                out[di] += third * w[0];
                out[n + di] += third * w[1];
            }
        }
        self.sigma_space.apply_constraint(&mut out);
        out
    }

    /// Advances one step with the configured variant; `v` is recovered from
    /// the new `u`.
    pub fn step(&mut self, prev: &USState, cfg: &USConfig) -> Result<(USState, USStepInfo)> {
        cfg.validate()?;
        if !prev.u.space.same_mesh(&self.space) {
            return Err(Error::DimensionMismatch("state does not belong to this scheme".into()));
        }
        let mut k = cfg.k;
        let mut halvings = 0;
        let (u, sigma, mut info) = loop {
            let attempt = match cfg.variant {
                USVariant::Regularized(reg) => self.picard(prev, reg, k, &cfg.picard),
                USVariant::Plain => self.newton_plain(prev, k, cfg),
            };
            match attempt {
                Ok(done) => break done,
                Err(Error::NonConvergence { method: method @ ("Picard" | "Picard (diverging)"), iterations, last })
                    if halvings < cfg.max_halvings =>
                {
                    warn!("step {}: {method} stopped after {iterations} iterations (change {last:.3e}); halving k", prev.step + 1);
                    k *= 0.5;
                    halvings += 1;
                }
                Err(e) => {
                    return Err(Error::StepFailure {
                        step: prev.step + 1,
                        source: Box::new(e),
                    })
                }
            }
        };
        info.k_used = k;
        info.halvings = halvings;
        let v = self.recover_v(&prev.v.coeffs, &u, k)?;
        Ok((
            USState {
                u: ScalarField::new(self.space.clone(), u)?,
                sigma: VectorField::new(self.sigma_space.clone(), sigma)?,
                v: ScalarField::new(self.space.clone(), v)?,
                t: prev.t + k,
                step: prev.step + 1,
            },
            info,
        ))
    }

    fn picard(&mut self, prev: &USState, reg: Regularization, k: f64, cfg: &PicardConfig) -> Result<(Vec<f64>, Vec<f64>, USStepInfo)> {
        self.ensure_cache(k)?;
        self.lambda_builder(reg)?;
        let builder = self.lambda.as_ref().expect("builder set");
        let cache = self.cache.as_ref().expect("cache built");
        let u_old = &prev.u.coeffs;
        let s_old = &prev.sigma.coeffs;
        let rhs_u: Vec<f64> = u_old.iter().zip(&self.lumped).map(|(u, m)| m * u / k).collect();
        let mut rhs_s: Vec<f64> = self.sigma_mass.mul_vec(s_old).iter().map(|x| x / k).collect();
        self.sigma_space.apply_constraint(&mut rhs_s);

        let n = u_old.len();
        let mut x = u_old.clone();
        x.extend_from_slice(s_old);
        let block_scale = |v: &[f64]| 1.0 / norm2(v).max(1e-10 * norm2(u_old).max(1.0));
        let (wu, ws) = (block_scale(u_old), block_scale(s_old));
        let weights: Vec<f64> = (0..x.len()).map(|i| if i < n { wu } else { ws }).collect();
        let mut mixer = AndersonMixer::new(cfg.depth, weights);
        let mut last = f64::INFINITY;
        let mut growing = 0;
        for it in 1..=cfg.max_iter {
            let (u, s) = x.split_at(n);
            let cu = self.coupling_u(&builder.build(u), s);
            let mut u_new: Vec<f64> = rhs_u.iter().zip(&cu).map(|(a, b)| a - b).collect();
            cache.u_factor.solve_in_place(&mut u_new);
            let cs = self.coupling_sigma(&builder.build(&u_new), &u_new);
            let mut s_new: Vec<f64> = rhs_s.iter().zip(&cs).map(|(a, b)| a + 2.0 * b).collect();
            cache.sigma_factor.solve_in_place(&mut s_new);
            self.sigma_space.apply_constraint(&mut s_new);

            let change = self.relative_change(u, &u_new, s, &s_new);
            debug!("Picard iteration {it}: relative change {change:.3e}");
            if change <= cfg.tol {
                return Ok((
                    u_new,
                    s_new,
                    USStepInfo {
                        iterations: it,
                        last_change: change,
                        ..Default::default()
                    },
                ));
            }
            let mut g = u_new;
            g.extend_from_slice(&s_new);
            x = mixer.next(&x, &g);
            if !change.is_finite() {
                growing = DIVERGENCE_RUN;
            } else if change > last {
                growing += 1;
            } else {
                growing = 0;
            }
            if growing >= DIVERGENCE_RUN {
                return Err(Error::NonConvergence {
                    method: "Picard (diverging)",
                    iterations: it,
                    last: change,
                });
            }
            last = change;
        }
        Err(Error::NonConvergence {
            method: "Picard",
            iterations: cfg.max_iter,
            last,
        })
    }

    /// `max(‖Δu‖/‖u‖, ‖Δσ‖/‖σ‖)` in L² norms. The σ denominator is floored
    /// at `1e-10·max(1, ‖u‖)` so that states with vanishing σ do not stall.
    fn relative_change(&self, u: &[f64], u_new: &[f64], s: &[f64], s_new: &[f64]) -> f64 {
        let du: Vec<f64> = u_new.iter().zip(u).map(|(a, b)| a - b).collect();
        let ds: Vec<f64> = s_new.iter().zip(s).map(|(a, b)| a - b).collect();
        let nu = self.mass.quadratic(u_new).sqrt();
        let floor = 1e-10 * nu.max(1.0);
        let cu = self.mass.quadratic(&du).sqrt() / nu.max(floor);
        let cs = self.sigma_mass.quadratic(&ds).sqrt() / self.sigma_mass.quadratic(s_new).sqrt().max(floor);
        cu.max(cs)
    }

    fn newton_plain(&mut self, prev: &USState, k: f64, cfg: &USConfig) -> Result<(Vec<f64>, Vec<f64>, USStepInfo)> {
        self.ensure_cache(k)?;
        let n = self.space.n_dofs();
        if self.cache.as_ref().expect("cache built").plain.is_none() {
            let mut base = self.plain_pattern.zeroed();
            base.add_block(&SparseOperator::from_diagonal(&self.lumped), 0, 0, 1.0 / k)?;
            base.add_block(&self.stiffness, 0, 0, 1.0)?;
            base.add_block(&self.sigma_mass, n, n, 1.0 / k)?;
            base.add_block(&self.b, n, n, 1.0)?;
            let d = self.sigma_space.pinned(&self.sigma_mass.linear_combination(1.0 / k, &self.b, 1.0)?);
            let solver = BlockSystemSolver::new(n, &d)?;
            self.cache.as_mut().expect("cache built").plain = Some((base, solver));
        }
        let mut plain = self.cache.as_mut().expect("cache built").plain.take().expect("plain cache");
        let mut x0 = prev.u.coeffs.clone();
        x0.extend_from_slice(&prev.sigma.coeffs);
        let mut sys = PlainNewton {
            scheme: self,
            base: &plain.0,
            solver: &mut plain.1,
            prev,
            k,
            linear: cfg.linear,
            linear_iterations: 0,
        };
        let out = newton_solve(&mut sys, &x0, &cfg.newton);
        let linear_iterations = sys.linear_iterations;
        self.cache.as_mut().expect("cache built").plain = Some(plain);
        let out = out?;
        let mut x = out.x;
        let mut s = x.split_off(n);
        self.sigma_space.apply_constraint(&mut s);
        Ok((
            x,
            s,
            USStepInfo {
                iterations: out.iterations,
                last_change: out.residual,
                linear_iterations,
                ..Default::default()
            },
        ))
    }

    /// Residual of the plain variant, ordered `[u rows, σ rows]`; constrained
    /// σ rows hold the constrained values themselves.
    pub fn plain_residual(&self, prev: &USState, u: &[f64], sigma: &[f64], k: f64) -> Vec<f64> {
        let n = self.space.n_dofs();
        let mut r = vec![0.0; 3 * n];
        let ku = self.stiffness.mul_vec(u);
        for i in 0..n {
            r[i] = self.lumped[i] * (u[i] - prev.u.coeffs[i]) / k + ku[i];
        }
        let ds: Vec<f64> = sigma.iter().zip(&prev.sigma.coeffs).map(|(a, b)| a - b).collect();
        let ms = self.sigma_mass.mul_vec(&ds);
        let bs = self.b.mul_vec(sigma);
        for i in 0..2 * n {
            r[n + i] = ms[i] / k + bs[i];
        }
        self.plain_local(u, sigma, |e, _, local_r| {
            let d = self.space.element_dofs(e);
            for i in 0..3 {
                r[d[i]] += local_r[i];
                r[n + d[i]] += local_r[3 + i];
                r[2 * n + d[i]] += local_r[6 + i];
            }
        });
        for (ri, (&c, &s)) in r[n..].iter_mut().zip(self.sigma_space.constrained().iter().zip(sigma)) {
            if c {
                *ri = s;
            }
        }
        r
    }

    fn plain_jacobian(&self, base: &SparseOperator, u: &[f64], sigma: &[f64]) -> SparseOperator {
        let mut jac = base.clone();
        self.plain_local(u, sigma, |e, local_j, _| self.plain_pattern.add_local(&mut jac, e, local_j));
        jac.pin_dofs(&self.plain_mask);
        jac
    }

    /// Element contributions of the nonlinear terms of the plain variant:
    /// `(u σ, ∇ū)` and `−2(u ∇u, σ̄)` with their derivatives. Local order is
    /// `[u₀..u₂, σx₀..σx₂, σy₀..σy₂]`.
    fn plain_local(&self, u: &[f64], sigma: &[f64], mut sink: impl FnMut(usize, &[f64], &[f64])) {
        let n = self.space.n_dofs();
        let mut jl = [0.0; 81];
        let mut rl = [0.0; 9];
        for e in 0..self.space.n_elements() {
            let geo = self.space.geometry(e);
            let g = &geo.grad_lambda;
            let d = self.space.element_dofs(e);
            let lu = [u[d[0]], u[d[1]], u[d[2]]];
            let lsx = [sigma[d[0]], sigma[d[1]], sigma[d[2]]];
            let lsy = [sigma[n + d[0]], sigma[n + d[1]], sigma[n + d[2]]];
            let gu = [
                lu[0] * g[0][0] + lu[1] * g[1][0] + lu[2] * g[2][0],
                lu[0] * g[0][1] + lu[1] * g[1][1] + lu[2] * g[2][1],
            ];
            jl.iter_mut().for_each(|x| *x = 0.0);
            rl.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..self.tab.weights.len() {
                let w = self.tab.weights[q] * 2.0 * geo.area;
                let phi = &self.tab.values[q];
                let uq = self.tab.value(q, &lu);
                let sq = [self.tab.value(q, &lsx), self.tab.value(q, &lsy)];
                for i in 0..3 {
                    let sgi = sq[0] * g[i][0] + sq[1] * g[i][1];
                    rl[i] += w * uq * sgi;
                    rl[3 + i] -= 2.0 * w * uq * gu[0] * phi[i];
                    rl[6 + i] -= 2.0 * w * uq * gu[1] * phi[i];
                    for l in 0..3 {
                        jl[i * 9 + l] += w * phi[l] * sgi;
                        jl[i * 9 + 3 + l] += w * uq * phi[l] * g[i][0];
                        jl[i * 9 + 6 + l] += w * uq * phi[l] * g[i][1];
                        jl[(3 + i) * 9 + l] -= 2.0 * w * (phi[l] * gu[0] + uq * g[l][0]) * phi[i];
                        jl[(6 + i) * 9 + l] -= 2.0 * w * (phi[l] * gu[1] + uq * g[l][1]) * phi[i];
                    }
                }
            }
            sink(e, &jl, &rl);
        }
    }

    /// Jacobian of [`USScheme::plain_residual`] at `(u, σ)`.
    pub fn plain_jacobian_at(&mut self, u: &[f64], sigma: &[f64], k: f64) -> Result<SparseOperator> {
        let n = self.space.n_dofs();
        let mut base = self.plain_pattern.zeroed();
        base.add_block(&SparseOperator::from_diagonal(&self.lumped), 0, 0, 1.0 / k)?;
        base.add_block(&self.stiffness, 0, 0, 1.0)?;
        base.add_block(&self.sigma_mass, n, n, 1.0 / k)?;
        base.add_block(&self.b, n, n, 1.0)?;
        Ok(self.plain_jacobian(&base, u, sigma))
    }

    /// Solves `(δ_t v, v̄)^h + (∇v, ∇v̄) + (v, v̄)^h = (u², v̄)`.
    pub fn recover_v(&mut self, prev_v: &[f64], u_new: &[f64], k: f64) -> Result<Vec<f64>> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {k}")));
        }
        self.ensure_cache(k)?;
        let source = assemble_square_source(&self.space, u_new, &self.space)?;
        let mut rhs: Vec<f64> = prev_v.iter().zip(&self.lumped).zip(&source).map(|((v, m), s)| m * v / k + s).collect();
        self.cache.as_ref().expect("cache built").v_factor.solve_in_place(&mut rhs);
        Ok(rhs)
    }

    /// Terms of the energy law between two consecutive states.
    pub fn energy_law_terms(&self, prev: &USState, next: &USState, k: f64) -> USEnergyLawTerms {
        let area = self.space.mesh().area();
        let m0 = self.lumped_integral(&prev.u.coeffs) / area;
        let hat_n: Vec<f64> = next.u.coeffs.iter().map(|x| x - m0).collect();
        let du: Vec<f64> = next.u.coeffs.iter().zip(&prev.u.coeffs).map(|(a, b)| a - b).collect();
        let su: Vec<f64> = next.u.coeffs.iter().zip(&prev.u.coeffs).map(|(a, b)| a + b - 2.0 * m0).collect();
        let ds: Vec<f64> = next.sigma.coeffs.iter().zip(&prev.sigma.coeffs).map(|(a, b)| a - b).collect();
        let ss: Vec<f64> = next.sigma.coeffs.iter().zip(&prev.sigma.coeffs).map(|(a, b)| a + b).collect();
        let lumped_du_su: f64 = self.lumped.iter().zip(&du).zip(&su).map(|((m, a), b)| m * a * b).sum();
        let mean_hat = self.lumped_integral(&hat_n);
        USEnergyLawTerms {
            energy_rate: (0.5 * lumped_du_su + 0.25 * self.sigma_mass.bilinear(&ds, &ss)) / k,
            u_increment: 0.5 * self.lumped_norm_sq(&du) / k,
            sigma_increment: 0.25 * self.sigma_mass.quadratic(&ds) / k,
            u_h1: self.stiffness.quadratic(&hat_n) + mean_hat * mean_hat,
            sigma_h1: 0.5 * self.b.quadratic(&next.sigma.coeffs),
        }
    }
}

struct PlainNewton<'a> {
    scheme: &'a USScheme,
    base: &'a SparseOperator,
    solver: &'a mut BlockSystemSolver,
    prev: &'a USState,
    k: f64,
    linear: LinearSolveConfig,
    linear_iterations: usize,
}

impl NewtonSystem for PlainNewton<'_> {
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let (u, s) = x.split_at(self.scheme.space.n_dofs());
        Ok(self.scheme.plain_residual(self.prev, u, s, self.k))
    }

    fn jacobian(&mut self, x: &[f64]) -> Result<SparseOperator> {
        let (u, s) = x.split_at(self.scheme.space.n_dofs());
        Ok(self.scheme.plain_jacobian(self.base, u, s))
    }

    fn solve_jacobian(&mut self, x: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let jac = self.jacobian(x)?;
        let (dx, its) = self.solver.solve(&jac, rhs, &self.linear)?;
        self.linear_iterations += its;
        Ok(dx)
    }
}
