//! Linear solvers: sparse direct factorizations (faer) and Krylov methods.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};

use crate::error::{Error, Result};
use crate::fem::sparse::{axpy, dot, norm2, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearMethod {
    Direct,
    #[serde(rename = "cg")]
    ConjugateGradient,
    BiCgStab,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolveConfig {
    pub method: LinearMethod,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolveConfig {
    fn default() -> Self {
        Self {
            method: LinearMethod::Direct,
            rel_tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

impl LinearSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(format!(
                "linear solver needs rel_tol > 0 and max_iter ≥ 1 (got {} and {})",
                self.rel_tol, self.max_iter
            )));
        }
        Ok(())
    }
}

/// Solves `A x = b` with the configured method.
pub fn solve_linear(a: &SparseOperator, b: &[f64], cfg: &LinearSolveConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !a.is_square() || a.nrows != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} operator with right-hand side of length {}",
            a.nrows,
            a.ncols,
            b.len()
        )));
    }
    match cfg.method {
        LinearMethod::Direct => {
            let f = if a.symmetric {
                Factorization::cholesky(a).or_else(|_| Factorization::lu(a))?
            } else {
                Factorization::lu(a)?
            };
            Ok(f.solve(b))
        }
        LinearMethod::ConjugateGradient => conjugate_gradient(a, b, None, cfg).map(|(x, _)| x),
        LinearMethod::BiCgStab => bicgstab(a, b, &IdentityPreconditioner, cfg).map(|(x, _)| x),
    }
}

fn csc_view(a: &SparseOperator) -> SymbolicSparseColMatRef<'_, usize> {
    // the CSR arrays of A are the CSC arrays of Aᵀ
    SymbolicSparseColMatRef::new_checked(a.ncols, a.nrows, &a.row_ptr, None, &a.col_idx)
}

enum Kind {
    Lu(Lu<usize, f64>),
    Llt(Llt<usize, f64>),
}

/// A reusable sparse factorization. Refactoring with an operator of the
/// same sparsity pattern reuses the symbolic analysis.
pub struct Factorization {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic_lu: Option<SymbolicLu<usize>>,
    symbolic_llt: Option<SymbolicLlt<usize>>,
    kind: Kind,
}

impl Factorization {
    pub fn lu(a: &SparseOperator) -> Result<Self> {
        let sym = SymbolicLu::try_new(csc_view(a)).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let kind = Kind::Lu(Self::numeric_lu(&sym, a)?);
        Ok(Self {
            n: a.nrows,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
            symbolic_lu: Some(sym),
            symbolic_llt: None,
            kind,
        })
    }

    /// Cholesky factorization; `a` must be symmetric positive definite.
    pub fn cholesky(a: &SparseOperator) -> Result<Self> {
        let sym = SymbolicLlt::try_new(csc_view(a), Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let kind = Kind::Llt(Self::numeric_llt(&sym, a)?);
        Ok(Self {
            n: a.nrows,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
            symbolic_lu: None,
            symbolic_llt: Some(sym),
            kind,
        })
    }

    fn numeric_lu(sym: &SymbolicLu<usize>, a: &SparseOperator) -> Result<Lu<usize, f64>> {
        let mat = SparseColMatRef::new(csc_view(a), &a.values);
        Lu::try_new_with_symbolic(sym.clone(), mat).map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    fn numeric_llt(sym: &SymbolicLlt<usize>, a: &SparseOperator) -> Result<Llt<usize, f64>> {
        let mat = SparseColMatRef::new(csc_view(a), &a.values);
        Llt::try_new_with_symbolic(sym.clone(), mat, Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))
    }

    /// Numeric refactorization; falls back to a fresh symbolic analysis
    /// when the pattern changed.
    pub fn refactor(&mut self, a: &SparseOperator) -> Result<()> {
        let same = a.nrows == self.n && a.row_ptr == self.row_ptr && a.col_idx == self.col_idx;
        if !same {
            *self = match self.kind {
                Kind::Lu(_) => Self::lu(a)?,
                Kind::Llt(_) => Self::cholesky(a)?,
            };
            return Ok(());
        }
        self.kind = match &self.kind {
            Kind::Lu(_) => Kind::Lu(Self::numeric_lu(self.symbolic_lu.as_ref().unwrap(), a)?),
            Kind::Llt(_) => Kind::Llt(Self::numeric_llt(self.symbolic_llt.as_ref().unwrap(), a)?),
        };
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n, "right-hand side length");
        let rhs = MatMut::from_column_major_slice_mut(x, self.n, 1);
        match &self.kind {
            // the factor is of Aᵀ
            Kind::Lu(lu) => lu.solve_transpose_in_place(rhs),
            Kind::Llt(llt) => llt.solve_in_place(rhs),
        }
    }
}

pub trait Preconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

impl Preconditioner for Factorization {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.solve(r)
    }
}

/// Jacobi-preconditioned conjugate gradients for SPD operators. Returns the
/// solution and the iteration count.
pub fn conjugate_gradient(
    a: &SparseOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &LinearSolveConfig,
) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let diag = a.diagonal();
    let inv: Vec<f64> = diag.iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ai)| bi - ai).collect();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..cfg.max_iter {
        if norm2(&r) <= cfg.rel_tol * bnorm {
            return Ok((x, it));
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Factorization("conjugate gradient met a non-positive curvature".into()));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&inv) {
            *zi = ri * di;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    if norm2(&r) <= cfg.rel_tol * bnorm {
        return Ok((x, cfg.max_iter));
    }
    Err(Error::NonConvergence {
        method: "conjugate gradient",
        iterations: cfg.max_iter,
        last: norm2(&r) / bnorm,
    })
}

/// Right-preconditioned BiCGStab for a generic linear operator.
pub fn bicgstab_op<A, P>(apply_a: A, b: &[f64], precond: &P, cfg: &LinearSolveConfig) -> Result<(Vec<f64>, usize)>
where
    A: Fn(&[f64]) -> Vec<f64>,
    P: Preconditioner + ?Sized,
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for it in 1..=cfg.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            return Err(Error::NonConvergence {
                method: "BiCGStab (breakdown)",
                iterations: it,
                last: norm2(&r) / bnorm,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond.apply(&p);
        v = apply_a(&p_hat);
        alpha = rho / dot(&r_hat, &v);
        let mut s = r.clone();
        axpy(-alpha, &v, &mut s);
        axpy(alpha, &p_hat, &mut x);
        if norm2(&s) <= cfg.rel_tol * bnorm {
            return Ok((x, it));
        }
        let s_hat = precond.apply(&s);
        let t = apply_a(&s_hat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        axpy(omega, &s_hat, &mut x);
        r = s;
        axpy(-omega, &t, &mut r);
        if norm2(&r) <= cfg.rel_tol * bnorm {
            return Ok((x, it));
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::NonConvergence {
        method: "BiCGStab",
        iterations: cfg.max_iter,
        last: norm2(&r) / bnorm,
    })
}

pub fn bicgstab<P: Preconditioner + ?Sized>(
    a: &SparseOperator,
    b: &[f64],
    precond: &P,
    cfg: &LinearSolveConfig,
) -> Result<(Vec<f64>, usize)> {
    bicgstab_op(|x| a.mul_vec(x), b, precond, cfg)
}

/// Newton-type linear solves for 2×2 block matrices `[[A, B], [C, D]]`
/// whose `D` block is symmetric positive definite and fixed between calls.
///
/// With [`LinearMethod::Direct`] the whole matrix is factored (reusing the
/// symbolic analysis across calls). Otherwise BiCGStab runs with the block
/// lower-triangular preconditioner built from exact solves with `A` and `D`.
pub struct BlockSystemSolver {
    split: usize,
    d_factor: Factorization,
    full: Option<Factorization>,
    a_factor: Option<Factorization>,
}

impl BlockSystemSolver {
    pub fn new(split: usize, d_block: &SparseOperator) -> Result<Self> {
        Ok(Self {
            split,
            d_factor: Factorization::cholesky(d_block)?,
            full: None,
            a_factor: None,
        })
    }

    /// Solves `J x = rhs`, returning the solution and the Krylov iteration
    /// count (zero for direct solves).
    pub fn solve(&mut self, jac: &SparseOperator, rhs: &[f64], cfg: &LinearSolveConfig) -> Result<(Vec<f64>, usize)> {
        let n = jac.nrows;
        if cfg.method == LinearMethod::Direct {
            match self.full.as_mut() {
                Some(f) => f.refactor(jac)?,
                None => self.full = Some(Factorization::lu(jac)?),
            }
            return Ok((self.full.as_ref().expect("factorized").solve(rhs), 0));
        }
        let a = jac.sub_block(0..self.split, 0..self.split);
        match self.a_factor.as_mut() {
            Some(f) => f.refactor(&a)?,
            None => self.a_factor = Some(Factorization::lu(&a)?),
        }
        let pre = BlockLower {
            a: self.a_factor.as_ref().expect("factorized"),
            c: jac.sub_block(self.split..n, 0..self.split),
            d: &self.d_factor,
        };
        bicgstab_op(|y| jac.mul_vec(y), rhs, &pre, cfg)
    }
}

struct BlockLower<'a> {
    a: &'a Factorization,
    c: SparseOperator,
    d: &'a Factorization,
}

impl Preconditioner for BlockLower<'_> {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let split = self.a.dim();
        let mut out = self.a.solve(&r[..split]);
        let coupling = self.c.mul_vec(&out);
        let mut rd: Vec<f64> = r[split..].iter().zip(&coupling).map(|(a, b)| a - b).collect();
        self.d.solve_in_place(&mut rd);
        out.extend(rd);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> SparseOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 4.0 + rng.gen::<f64>()));
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = -0.5 * rng.gen::<f64>();
                    trip.push((i, j, v));
                    trip.push((j, i, v));
                    trip.push((i, i, -v));
                    trip.push((j, j, -v));
                }
            }
        }
        let mut a = SparseOperator::from_triplets(n, n, &trip).unwrap();
        a.symmetric = true;
        a
    }

    #[test]
    fn identity_solve() {
        let a = SparseOperator::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 9.0];
        for method in [LinearMethod::Direct, LinearMethod::ConjugateGradient, LinearMethod::BiCgStab] {
            let cfg = LinearSolveConfig { method, ..Default::default() };
            assert_eq!(solve_linear(&a, &b, &cfg).unwrap(), b);
        }
    }

    #[test]
    fn cg_and_direct_agree_on_random_spd() {
        let a = random_spd(100, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..100).map(|_| rng.gen::<f64>() - 0.5).collect();
        let direct = solve_linear(&a, &b, &LinearSolveConfig::default()).unwrap();
        let cg = solve_linear(
            &a,
            &b,
            &LinearSolveConfig {
                method: LinearMethod::ConjugateGradient,
                rel_tol: 1e-13,
                max_iter: 1000,
            },
        )
        .unwrap();
        let diff = direct.iter().zip(&cg).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
        let res: Vec<f64> = a.mul_vec(&direct).iter().zip(&b).map(|(x, y)| x - y).collect();
        assert!(norm2(&res) <= 1e-12 * norm2(&b));
    }

    #[test]
    fn lu_solves_nonsymmetric_and_refactors() {
        let trip = vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 3.0), (2, 2, 1.0), (2, 0, 4.0)];
        let a = SparseOperator::from_triplets(3, 3, &trip).unwrap();
        let mut f = Factorization::lu(&a).unwrap();
        let x = f.solve(&[3.0, 2.0, 5.0]);
        let ax = a.mul_vec(&x);
        assert!((ax[0] - 3.0).abs() < 1e-14 && (ax[1] - 2.0).abs() < 1e-14 && (ax[2] - 5.0).abs() < 1e-14);
        let a2 = a.scaled(2.0);
        f.refactor(&a2).unwrap();
        let x2 = f.solve(&[3.0, 2.0, 5.0]);
        for (p, q) in x.iter().zip(&x2) {
            assert!((p - 2.0 * q).abs() < 1e-14);
        }
        let bi = bicgstab(&a, &[3.0, 2.0, 5.0], &IdentityPreconditioner, &LinearSolveConfig::default()).unwrap().0;
        for (p, q) in x.iter().zip(&bi) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_and_config_errors() {
        let a = SparseOperator::identity(3);
        assert!(matches!(solve_linear(&a, &[1.0], &LinearSolveConfig::default()), Err(Error::DimensionMismatch(_))));
        let bad = LinearSolveConfig { rel_tol: 0.0, ..Default::default() };
        assert!(solve_linear(&a, &[1.0, 2.0, 3.0], &bad).is_err());
        let cg = LinearSolveConfig {
            method: LinearMethod::ConjugateGradient,
            rel_tol: 1e-30,
            max_iter: 1,
        };
        assert!(matches!(solve_linear(&random_spd(30, 1), &vec![1.0; 30], &cg), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn block_solver_matches_direct() {
        // [[A, B], [C, D]] with D SPD
        let d = random_spd(40, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut trip = Vec::new();
        for i in 0..20 {
            trip.push((i, i, 5.0 + rng.gen::<f64>()));
            trip.push((i, (i + 1) % 20, rng.gen::<f64>()));
            trip.push((i, 20 + rng.gen_range(0..40), 0.3 * rng.gen::<f64>()));
            trip.push((20 + rng.gen_range(0..40), i, 0.3 * rng.gen::<f64>()));
        }
        for r in 0..40 {
            for (c, v) in d.row(r) {
                trip.push((20 + r, 20 + c, v));
            }
        }
        let jac = SparseOperator::from_triplets(60, 60, &trip).unwrap();
        let b: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        let mut solver = BlockSystemSolver::new(20, &d).unwrap();
        let (direct, its) = solver.solve(&jac, &b, &LinearSolveConfig::default()).unwrap();
        assert_eq!(its, 0);
        let cfg = LinearSolveConfig {
            method: LinearMethod::BiCgStab,
            ..Default::default()
        };
        for _ in 0..2 {
            let (krylov, its) = solver.solve(&jac, &b, &cfg).unwrap();
            assert!(its > 0);
            let diff = direct.iter().zip(&krylov).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "{diff}");
        }
    }
}
