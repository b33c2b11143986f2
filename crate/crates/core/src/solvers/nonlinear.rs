//! Newton driver and the fixed-point iteration settings.

use faer::linalg::solvers::SolveLstsq;

use super::linear::Factorization;
use crate::error::{Error, Result};
use crate::fem::sparse::{norm2, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 25,
            damping: 1.0,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Newton needs tol > 0, max_iter ≥ 1 and damping in (0, 1]; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Anderson history length; 0 evaluates the map at its own output.
    pub depth: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 50,
            depth: 5,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(format!(
                "Picard needs tol > 0 and max_iter ≥ 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Anderson mixing for a fixed-point map `x ↦ G(x)`: the next evaluation
/// point is `G(x) − ΔG γ` with `γ` minimizing `‖W(f − ΔF γ)‖`, where
/// `f = G(x) − x` and `ΔF`, `ΔG` hold differences of the last `depth`
/// residuals and outputs.
#[derive(Debug, Clone)]
pub struct AndersonMixer {
    depth: usize,
    weights: Vec<f64>,
    last: Option<(Vec<f64>, Vec<f64>)>,
    df: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
}

impl AndersonMixer {
    /// `weights` scale each component inside the least-squares problem.
    pub fn new(depth: usize, weights: Vec<f64>) -> Self {
        Self {
            depth,
            weights,
            last: None,
            df: Vec::new(),
            dg: Vec::new(),
        }
    }

    /// Next point at which to evaluate the map, given `x` and `g = G(x)`.
    pub fn next(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = g.iter().zip(x).zip(&self.weights).map(|((a, b), w)| w * (a - b)).collect();
        if self.depth == 0 {
            return g.to_vec();
        }
        if let Some((f_prev, g_prev)) = self.last.take() {
            self.df.push(f.iter().zip(&f_prev).map(|(a, b)| a - b).collect());
            self.dg.push(g.iter().zip(&g_prev).map(|(a, b)| a - b).collect());
            if self.df.len() > self.depth {
                self.df.remove(0);
                self.dg.remove(0);
            }
        }
        self.last = Some((f.clone(), g.to_vec()));
        if self.df.is_empty() {
            return g.to_vec();
        }
        let (n, m) = (f.len(), self.df.len());
        let a = faer::Mat::from_fn(n, m, |i, j| self.df[j][i]);
        let b = faer::Mat::from_fn(n, 1, |i, _| f[i]);
        let gamma = a.col_piv_qr().solve_lstsq(&b);
        let gamma: Vec<f64> = (0..m).map(|j| gamma[(j, 0)]).collect();
        // A nearly dependent history gives wild coefficients; restart from
        // the plain map output.
        if gamma.iter().any(|c| !c.is_finite() || c.abs() > 1e4) {
            self.df.clear();
            self.dg.clear();
            return g.to_vec();
        }
        let mut out = g.to_vec();
        for (c, d) in gamma.iter().zip(&self.dg) {
            for (o, di) in out.iter_mut().zip(d) {
                *o -= c * di;
            }
        }
        out
    }
}

/// A nonlinear system `R(x) = 0` with Jacobian `J(x)`.
pub trait NewtonSystem {
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>>;

    fn jacobian(&mut self, x: &[f64]) -> Result<SparseOperator>;

    /// Solves `J(x) dx = rhs`. The default assembles the Jacobian and
    /// factors it from scratch.
    fn solve_jacobian(&mut self, x: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let j = self.jacobian(x)?;
        Ok(Factorization::lu(&j)?.solve(rhs))
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub initial_residual: f64,
    /// ‖R(x)‖ evaluated at the returned `x`.
    pub residual: f64,
}

/// Stops when `‖R(x)‖ ≤ tol·max(1, ‖R(x₀)‖)` or when the last increment
/// satisfies `‖dx‖ ≤ tol·(1 + ‖x‖)`.
pub fn newton_solve<S: NewtonSystem + ?Sized>(sys: &mut S, x0: &[f64], cfg: &NewtonConfig) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut r = sys.residual(&x)?;
    if r.len() != x.len() {
        return Err(Error::DimensionMismatch(format!("residual of length {} for {} unknowns", r.len(), x.len())));
    }
    let initial_residual = norm2(&r);
    let threshold = cfg.tol * initial_residual.max(1.0);
    let mut rnorm = initial_residual;
    for it in 0..=cfg.max_iter {
        if !rnorm.is_finite() {
            return Err(Error::NonConvergence {
                method: "Newton",
                iterations: it,
                last: rnorm,
            });
        }
        if rnorm <= threshold {
            return Ok(NewtonOutcome {
                x,
                iterations: it,
                initial_residual,
                residual: rnorm,
            });
        }
        if it == cfg.max_iter {
            break;
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = sys.solve_jacobian(&x, &neg)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += cfg.damping * di;
        }
        r = sys.residual(&x)?;
        rnorm = norm2(&r);
        if cfg.damping * norm2(&dx) <= cfg.tol * (1.0 + norm2(&x)) && rnorm.is_finite() {
            return Ok(NewtonOutcome {
                x,
                iterations: it + 1,
                initial_residual,
                residual: rnorm,
            });
        }
    }
    Err(Error::NonConvergence {
        method: "Newton",
        iterations: cfg.max_iter,
        last: rnorm,
    })
}

/// Closure-backed [`NewtonSystem`].
pub struct FnSystem<R, J> {
    pub residual: R,
    pub jacobian: J,
}

impl<R, J> NewtonSystem for FnSystem<R, J>
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> SparseOperator,
{
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.residual)(x))
    }

    fn jacobian(&mut self, x: &[f64]) -> Result<SparseOperator> {
        Ok((self.jacobian)(x))
    }
}
