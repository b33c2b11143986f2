//! Per-step measurements, decay-rate fits and the constants of the
//! long-time estimates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::assemble::{assemble_mass, assemble_stiffness};
use crate::fem::project::ShiftedLaplacian;
use crate::fem::quadrature::QuadratureRule;
use crate::fem::space::{FESpace, ScalarField, Tabulation};
use crate::fem::sparse::{dot, SparseOperator};
use crate::scheme_us::USScheme;
use crate::scheme_uv::UVScheme;
use crate::solvers::linear::Factorization;

/// Version tag written on the first line of every report file.
pub const REPORT_FORMAT: &str = "# chemorep-report v1";

/// One accepted time step. Quantities that do not apply to a scheme are
/// `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub k: f64,
    /// `∫u`.
    pub integral_u: f64,
    /// `(u, 1)^h`.
    pub lumped_integral_u: f64,
    /// `E(u, v) = ½‖u‖₀² + ¼‖∇v‖₀²`.
    pub energy: f64,
    /// `Ẽ(u, σ) = ½‖u‖₀² + ¼‖σ‖₀²`.
    pub modified_energy: f64,
    /// `RE^n`; `NaN` at the initial state.
    pub energy_residual: f64,
    pub min_u: f64,
    pub min_v: f64,
    /// `‖Π^h(u_−)‖₀²`.
    pub negative_part: f64,
    /// `‖u − m₀‖₀²`.
    pub u_hat_sq: f64,
    /// `‖∇v‖₀²` for schemes in `(u, v)`, `‖σ‖₀²` for schemes in `(u, σ)`.
    pub gradient_sq: f64,
    /// `‖v − m₀²‖₀²`.
    pub v_hat_sq: f64,
    /// `k Σ ‖u − m₀‖₁²` up to this step.
    pub cumulative_u_h1: f64,
    /// Signed sum of the scheme's own energy-law terms.
    pub law_defect: f64,
    /// Largest magnitude among those terms.
    pub law_scale: f64,
    pub iterations: usize,
    pub linear_iterations: usize,
}

/// Time series of step records, strictly increasing in `t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    records: Vec<StepRecord>,
}

impl RunReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.t <= last.t {
                return Err(Error::InvalidArgument(format!(
                    "record time {} does not follow {}",
                    rec.t, last.t
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// `(t_n, f(record_n))` over all records.
    pub fn series(&self, f: impl Fn(&StepRecord) -> f64) -> (Vec<f64>, Vec<f64>) {
        self.records.iter().map(|r| (r.t, f(r))).unzip()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{REPORT_FORMAT}")?;
        let mut csv = csv::Writer::from_writer(w);
        if self.records.is_empty() {
            csv.write_record(CSV_COLUMNS)?;
        }
        for r in &self.records {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    }
}

const CSV_COLUMNS: &[&str] = &[
    "step",
    "t",
    "k",
    "integral_u",
    "lumped_integral_u",
    "energy",
    "modified_energy",
    "energy_residual",
    "min_u",
    "min_v",
    "negative_part",
    "u_hat_sq",
    "gradient_sq",
    "v_hat_sq",
    "cumulative_u_h1",
    "law_defect",
    "law_scale",
    "iterations",
    "linear_iterations",
];

/// Smallest nonzero eigenvalue of `Kx = λMx` on a P1 space, by inverse
/// iteration with the constants deflated. It bounds the continuum
/// zero-mean Poincaré constant from above.
pub fn poincare_constant(space: &FESpace) -> Result<f64> {
    if space.degree() != 1 {
        return Err(Error::UnsupportedDegree(space.degree()));
    }
    let m = assemble_mass(space);
    let k = assemble_stiffness(space);
    let shifted = Factorization::cholesky(&k.linear_combination(1.0, &m, 1.0)?)?;
    let ones_m = m.row_sums();
    let total: f64 = ones_m.iter().sum();
    let deflate = |x: &mut [f64]| {
        let c = dot(&ones_m, x) / total;
        x.iter_mut().for_each(|v| *v -= c);
    };
    let mut x: Vec<f64> = space
        .dof_coords()
        .iter()
        .map(|p| p[0] + 0.37 * p[1] * p[1] + 0.11 * (3.0 * p[0] * p[1]).sin())
        .collect();
    deflate(&mut x);
    let mut lambda = f64::INFINITY;
    let max_iter = 1000;
    for _ in 0..max_iter {
        let mut y = m.mul_vec(&x);
        shifted.solve_in_place(&mut y);
        deflate(&mut y);
        let norm = m.quadratic(&y).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        y.iter_mut().for_each(|v| *v /= norm);
        let next = k.quadratic(&y);
        x = y;
        if (next - lambda).abs() <= 1e-13 * next {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NonConvergence {
        method: "inverse iteration",
        iterations: max_iter,
        last: lambda,
    })
}

/// Decay regimes of `‖v − m₀²‖₀²` as a function of `2K_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VHatDecay {
    /// `2K_p > 1`: `C (1 + k)^{−n}`.
    Chemical,
    /// `2K_p = 1`: `C kn (1 + k)^{−n}`.
    Critical,
    /// `2K_p < 1`: `C (1 + 2K_p k)^{−n}`.
    Density,
}

impl VHatDecay {
    /// Selects the case, treating `|2K_p − 1| ≤ tol` as equality.
    pub fn select(two_kp: f64, tol: f64) -> Self {
        if (two_kp - 1.0).abs() <= tol {
            Self::Critical
        } else if two_kp > 1.0 {
            Self::Chemical
        } else {
            Self::Density
        }
    }

    /// Envelope after `n` steps of size `k`, up to the constant.
    pub fn envelope(self, two_kp: f64, k: f64, n: usize) -> f64 {
        let n = n as i32;
        match self {
            Self::Chemical => (1.0 + k).powi(-n),
            Self::Critical => k * n as f64 * (1.0 + k).powi(-n),
            Self::Density => (1.0 + two_kp * k).powi(-n),
        }
    }

    /// Exponential rate per unit time implied by `1 − x ≤ e^{−x}`; the
    /// critical case shares the rate of the first, the polynomial factor
    /// aside.
    pub fn rate(self, two_kp: f64, k: f64) -> f64 {
        match self {
            Self::Chemical | Self::Critical => 1.0 / (1.0 + k),
            Self::Density => two_kp / (1.0 + two_kp * k),
        }
    }
}

/// Poincaré constant of the domain and the decay rates it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    /// Discrete value on the mesh in use.
    pub c_p: f64,
    /// `min{C_p, 1}`.
    pub k_p: f64,
    /// `(π/l)²` with `l` the longer side of the rectangle.
    pub continuum_c_p: f64,
}

impl RateConstants {
    pub fn new(space: &FESpace) -> Result<Self> {
        let c_p = poincare_constant(space)?;
        let mesh = space.mesh();
        let l = mesh.lx.max(mesh.ly);
        Ok(Self {
            c_p,
            k_p: c_p.min(1.0),
            continuum_c_p: (std::f64::consts::PI / l).powi(2),
        })
    }

    pub fn from_c_p(c_p: f64, continuum_c_p: f64) -> Self {
        Self {
            c_p,
            k_p: c_p.min(1.0),
            continuum_c_p,
        }
    }

    /// `(1 + 2K_p k)^{−1}`.
    pub fn predicted_ratio(&self, k: f64) -> f64 {
        1.0 / (1.0 + 2.0 * self.k_p * k)
    }

    /// `2K_p / (1 + 2K_p k)`.
    pub fn predicted_rate(&self, k: f64) -> f64 {
        2.0 * self.k_p / (1.0 + 2.0 * self.k_p * k)
    }

    pub fn v_hat_case(&self) -> VHatDecay {
        VHatDecay::select(2.0 * self.k_p, 1e-12)
    }

    pub fn v_hat_rate(&self, k: f64) -> f64 {
        self.v_hat_case().rate(2.0 * self.k_p, k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFitOptions {
    /// Fraction of the usable window, counted from its end, that is fitted.
    pub tail_fraction: f64,
    /// Values at or below this are treated as having hit the floor.
    pub floor: f64,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            tail_fraction: 0.6,
            floor: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// `−d ln y / dt`.
    pub rate: f64,
    pub r_squared: f64,
    /// The series reached the floor and only its earlier part was fitted.
    pub hit_floor: bool,
    pub points: usize,
}

/// Least-squares fit of `ln y = a − rate·t` on the tail of a series.
pub fn decay_fit(t: &[f64], y: &[f64], opts: &DecayFitOptions) -> Result<DecayFit> {
    if t.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} times and {} values", t.len(), y.len())));
    }
    if !(opts.tail_fraction > 0.0 && opts.tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("tail fraction {} outside (0, 1]", opts.tail_fraction)));
    }
    let end = y.iter().position(|&v| !(v > opts.floor)).unwrap_or(y.len());
    let hit_floor = end < y.len();
    let take = ((end as f64) * opts.tail_fraction).ceil() as usize;
    let start = end - take.min(end);
    if end - start < 2 {
        return Err(Error::InvalidArgument(format!(
            "only {} points above the floor {:e}",
            end - start,
            opts.floor
        )));
    }
    let ts = &t[start..end];
    let ls: Vec<f64> = y[start..end].iter().map(|v| v.ln()).collect();
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let lm = ls.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|x| (x - tm).powi(2)).sum();
    let stl: f64 = ts.iter().zip(&ls).map(|(x, l)| (x - tm) * (l - lm)).sum();
    let sll: f64 = ls.iter().map(|l| (l - lm).powi(2)).sum();
    if stt <= 0.0 {
        return Err(Error::InvalidArgument("fit window has no time spread".into()));
    }
    let slope = stl / stt;
    let r_squared = if sll == 0.0 { 1.0 } else { stl * stl / (stt * sll) };
    Ok(DecayFit {
        rate: -slope,
        r_squared,
        hit_floor,
        points: ts.len(),
    })
}

/// Minimum of a field: exact nodal minimum for P1; for P2 the minimum over
/// the dofs and the degree-4 quadrature points, which bounds the true
/// minimum from above.
pub fn min_field(field: &ScalarField) -> f64 {
    let c = &field.coeffs;
    let nodal = c.iter().copied().fold(f64::INFINITY, f64::min);
    if field.space.degree() == 1 {
        return nodal;
    }
    let space = &field.space;
    let tab = Tabulation::new(space.degree(), &QuadratureRule::degree4());
    let mut local = [0.0; 6];
    let mut m = nodal;
    for e in 0..space.n_elements() {
        for (l, &d) in local.iter_mut().zip(space.element_dofs(e)) {
            *l = c[d];
        }
        for q in 0..tab.weights.len() {
            m = m.min(tab.value(q, &local));
        }
    }
    m
}

/// `‖Π^h(min(u, 0))‖₀²` in the lumped form, given the lumped mass
/// diagonal.
pub fn negative_part_norm(lumped: &[f64], u: &[f64]) -> f64 {
    lumped.iter().zip(u).map(|(m, &x)| if x < 0.0 { m * x * x } else { 0.0 }).sum()
}

/// Mass pairing that defines `A_h` on the space of `v`.
pub enum ShiftedLaplacianNorm<'a> {
    /// `(A_h v, v̄) = (∇v, ∇v̄) + (v, v̄)`.
    Consistent(&'a ShiftedLaplacian),
    /// `(A_h v, v̄)^h = (∇v, ∇v̄) + (v, v̄)^h`, given the lumped diagonal,
    /// matching a `v` equation written with the lumped product.
    Lumped(&'a [f64]),
}

/// Operators needed to evaluate `E(u, v)` and `RE^n` for a pair of
/// spaces.
pub struct EnergyOperators<'a> {
    pub mass_u: &'a SparseOperator,
    pub stiffness_u: &'a SparseOperator,
    pub stiffness_v: &'a SparseOperator,
    pub ah: ShiftedLaplacianNorm<'a>,
}

impl<'a> EnergyOperators<'a> {
    pub fn for_uv(s: &'a UVScheme) -> Self {
        Self {
            mass_u: s.mass_u(),
            stiffness_u: s.stiffness_u(),
            stiffness_v: s.stiffness_v(),
            ah: ShiftedLaplacianNorm::Consistent(s.shifted_laplacian()),
        }
    }

    /// Uses the recovered P1 `v`, with `A_h` taken from its lumped
    /// equation.
    pub fn for_us(s: &'a USScheme) -> Self {
        Self {
            mass_u: s.mass(),
            stiffness_u: s.stiffness(),
            stiffness_v: s.stiffness(),
            ah: ShiftedLaplacianNorm::Lumped(s.lumped_mass()),
        }
    }

    /// `E(u, v) = ½‖u‖₀² + ¼‖∇v‖₀²`.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        0.5 * self.mass_u.quadratic(u) + 0.25 * self.stiffness_v.quadratic(v)
    }

    /// `‖(A_h − I)v‖₀²`, measured in the pairing that defines `A_h`.
    pub fn shifted_laplacian_norm_sq(&self, v: &[f64]) -> f64 {
        match &self.ah {
            ShiftedLaplacianNorm::Consistent(ah) => ah.minus_identity_norm_sq(v),
            ShiftedLaplacianNorm::Lumped(d) => {
                let kv = self.stiffness_v.mul_vec(v);
                kv.iter().zip(*d).map(|(a, m)| a * a / m).sum()
            }
        }
    }

    /// `RE^n = δ_t E(u, v) + ‖∇u‖₀² + ½‖(A_h − I)v‖₀² + ½‖∇v‖₀²`.
    pub fn energy_residual(&self, prev: (&[f64], &[f64]), next: (&[f64], &[f64]), k: f64) -> f64 {
        let (up, vp) = prev;
        let (un, vn) = next;
        let du: Vec<f64> = un.iter().zip(up).map(|(a, b)| a - b).collect();
        let su: Vec<f64> = un.iter().zip(up).map(|(a, b)| a + b).collect();
        let dv: Vec<f64> = vn.iter().zip(vp).map(|(a, b)| a - b).collect();
        let sv: Vec<f64> = vn.iter().zip(vp).map(|(a, b)| a + b).collect();
        let rate = (0.5 * self.mass_u.bilinear(&du, &su) + 0.25 * self.stiffness_v.bilinear(&dv, &sv)) / k;
        rate + self.stiffness_u.quadratic(un)
            + 0.5 * self.shifted_laplacian_norm_sq(vn)
            + 0.5 * self.stiffness_v.quadratic(vn)
    }
}

/// `‖x − c‖²` in the norm of `m`.
pub fn shifted_norm_sq(m: &SparseOperator, x: &[f64], c: f64) -> f64 {
    let d: Vec<f64> = x.iter().map(|v| v - c).collect();
    m.quadratic(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;
    use crate::scheme_uv::UVConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn p1(n: usize) -> FESpace {
        FESpace::new(Arc::new(build_rect_mesh(2.0, 2.0, n, n).unwrap()), 1).unwrap()
    }

    #[test]
    fn poincare_constant_close_to_separation_of_variables_value() {
        let exact = (std::f64::consts::PI / 2.0).powi(2);
        let c = poincare_constant(&p1(32)).unwrap();
        assert!((c - exact).abs() / exact < 0.02, "{c}");
        assert!(c >= exact);
    }

    #[test]
    fn poincare_constant_decreases_under_refinement() {
        let exact = (std::f64::consts::PI / 2.0).powi(2);
        let c: Vec<f64> = [16, 32, 64].iter().map(|&n| poincare_constant(&p1(n)).unwrap()).collect();
        assert!(c[0] > c[1] && c[1] > c[2] && c[2] > exact, "{c:?}");
    }

    #[test]
    fn poincare_constant_matches_one_dimensional_oracle_on_strip() {
        // On [0,4]×[0,1] the first mode is cos(πx/4).
        let mesh = Arc::new(build_rect_mesh(4.0, 1.0, 64, 16).unwrap());
        let c = poincare_constant(&FESpace::new(mesh, 1).unwrap()).unwrap();
        let exact = (std::f64::consts::PI / 4.0).powi(2);
        assert!((c - exact).abs() / exact < 5e-3, "{c}");
    }

    #[test]
    fn rate_constants_on_square() {
        let rc = RateConstants::new(&p1(16)).unwrap();
        assert_eq!(rc.k_p, 1.0);
        assert_eq!(rc.v_hat_case(), VHatDecay::Chemical);
        let r = rc.predicted_ratio(1e-2);
        assert!(r > 0.0 && r < 1.0);
        assert!((rc.predicted_rate(1e-2) - 2.0 / 1.02).abs() < 1e-14);
        assert!((rc.continuum_c_p - 2.4674011002723395).abs() < 1e-12);
    }

    #[test]
    fn v_hat_case_selector_covers_all_regimes() {
        assert_eq!(VHatDecay::select(2.0, 1e-12), VHatDecay::Chemical);
        assert_eq!(VHatDecay::select(1.0, 1e-12), VHatDecay::Critical);
        assert_eq!(VHatDecay::select(0.4, 1e-12), VHatDecay::Density);
        let k = 1e-2;
        // Synthetic series following each envelope: fitted rate recovers
        // the predicted one (exactly for the geometric cases, to the
        // polynomial factor for the critical one).
        for (two_kp, tol) in [(2.0, 1e-8), (0.4, 1e-8), (1.0, 0.1)] {
            let case = VHatDecay::select(two_kp, 1e-12);
            let n: Vec<usize> = (1..=2000).collect();
            let t: Vec<f64> = n.iter().map(|&i| i as f64 * k).collect();
            let y: Vec<f64> = n.iter().map(|&i| case.envelope(two_kp, k, i)).collect();
            let fit = decay_fit(&t, &y, &DecayFitOptions::default()).unwrap();
            let expected = (1.0 + if case == VHatDecay::Density { two_kp } else { 1.0 } * k).ln() / k;
            assert!((fit.rate - expected).abs() / expected < tol, "{case:?} {} {expected}", fit.rate);
            // 1 − x ≤ e^{−x} makes the reported rate a lower bound.
            assert!(case.rate(two_kp, k) <= expected);
        }
    }

    #[test]
    fn decay_fit_exact_exponential() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|s| (-3.0 * s).exp()).collect();
        let fit = decay_fit(&t, &y, &DecayFitOptions::default()).unwrap();
        assert!((fit.rate - 3.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(!fit.hit_floor);
        assert_eq!(fit.points, 120);
    }

    #[test]
    fn decay_fit_constant_series() {
        let t: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = decay_fit(&t, &vec![2.5; 50], &DecayFitOptions::default()).unwrap();
        assert_eq!(fit.rate, 0.0);
    }

    #[test]
    fn decay_fit_noise_free_synthetic_rates() {
        for rate in [0.1, 1.0, 5.9, 40.0] {
            let t: Vec<f64> = (0..300).map(|i| 0.5 + i as f64 * 0.003).collect();
            let y: Vec<f64> = t.iter().map(|s| 7.0 * (-rate * s).exp()).collect();
            let fit = decay_fit(&t, &y, &DecayFitOptions::default()).unwrap();
            assert!((fit.rate - rate).abs() <= 1e-8 * rate, "{rate} {}", fit.rate);
        }
    }

    #[test]
    fn decay_fit_tolerates_one_percent_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for rate in [0.5, 2.0, 6.0] {
            let t: Vec<f64> = (0..1000).map(|i| i as f64 * 0.005).collect();
            let y: Vec<f64> = t
                .iter()
                .map(|s| (-rate * s).exp() * (1.0 + 0.01 * rng.gen_range(-1.0..1.0)))
                .collect();
            let fit = decay_fit(&t, &y, &DecayFitOptions::default()).unwrap();
            assert!((fit.rate - rate).abs() <= 0.05 * rate, "{rate} {}", fit.rate);
        }
    }

    #[test]
    fn decay_fit_stops_at_floor() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|s| if *s < 5.0 { (-4.0 * s).exp() } else { 0.0 }).collect();
        let fit = decay_fit(&t, &y, &DecayFitOptions::default()).unwrap();
        assert!(fit.hit_floor);
        assert_eq!(fit.points, 30);
        assert!((fit.rate - 4.0).abs() < 1e-10);
    }

    #[test]
    fn decay_fit_rejects_bad_input() {
        assert!(decay_fit(&[0.0, 1.0], &[1.0], &DecayFitOptions::default()).is_err());
        assert!(decay_fit(&[0.0, 1.0], &[0.0, 0.0], &DecayFitOptions::default()).is_err());
    }

    #[test]
    fn negative_part_norm_single_node() {
        let space = p1(8);
        let lumped = crate::fem::assemble::assemble_lumped_mass(&space).unwrap().diagonal();
        let mut u = vec![1.0; space.n_dofs()];
        assert_eq!(negative_part_norm(&lumped, &u), 0.0);
        let node = 40;
        let a = 0.3;
        u[node] = -a;
        let lumped_value = negative_part_norm(&lumped, &u);
        assert!((lumped_value - lumped[node] * a * a).abs() < 1e-15);
        // Against the consistent form of the same nodal negative part: for
        // P1 the lumped and consistent norms are equivalent with constants
        // in [1, 4] on any triangle.
        let mut neg = vec![0.0; space.n_dofs()];
        neg[node] = -a;
        let consistent = assemble_mass(&space).quadratic(&neg);
        let ratio = lumped_value / consistent;
        assert!((1.0..=4.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn min_field_p1_is_nodal_and_p2_samples_interior() {
        let mesh = Arc::new(build_rect_mesh(2.0, 2.0, 4, 4).unwrap());
        let s1 = Arc::new(FESpace::new(mesh.clone(), 1).unwrap());
        let f = ScalarField::new(s1.clone(), s1.interpolate(|x, y| x - y)).unwrap();
        assert_eq!(min_field(&f), -2.0);
        // A P2 bubble-like field vanishing at all dofs except midpoints has
        // its minimum strictly inside; sampling never goes below the true
        // minimum of the quadratic.
        let s2 = Arc::new(FESpace::new(mesh, 2).unwrap());
        let g = ScalarField::new(s2.clone(), s2.interpolate(|x, y| (x - 0.9).powi(2) + (y - 1.1).powi(2) - 0.5)).unwrap();
        let m = min_field(&g);
        assert!(m >= -0.5 - 1e-12);
        let nodal = g.coeffs.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(m <= nodal);
    }

    #[test]
    fn energy_residual_vanishes_for_constants_and_matches_law_terms() {
        let mesh = Arc::new(build_rect_mesh(2.0, 2.0, 4, 4).unwrap());
        let mut s = UVScheme::new(mesh).unwrap();
        let c = s.init(|_, _| 2.0, |_, _| 4.0).unwrap();
        let ops = EnergyOperators::for_uv(&s);
        let re = ops.energy_residual((&c.u.coeffs, &c.v.coeffs), (&c.u.coeffs, &c.v.coeffs), 1e-3);
        assert!(re.abs() < 1e-12);

        let prev = s
            .init(|x, y| 1.0 + 0.5 * (x * y).cos(), |x, _| 1.0 + x * x)
            .unwrap();
        let mut cfg = UVConfig::new(1e-3);
        cfg.newton.tol = 1e-12;
        let (next, _) = s.step(&prev, &cfg).unwrap();
        let ops = EnergyOperators::for_uv(&s);
        let re = ops.energy_residual((&prev.u.coeffs, &prev.v.coeffs), (&next.u.coeffs, &next.v.coeffs), 1e-3);
        let terms = s.energy_law_terms(&prev, &next, 1e-3);
        assert!((re - terms.energy_residual()).abs() < 1e-9 * terms.largest(), "{re} {}", terms.energy_residual());
        assert!((re + terms.u_increment + terms.grad_v_increment).abs() < 1e-7 * terms.largest());
        assert!(re < 0.0);
        let e = ops.energy(&next.u.coeffs, &next.v.coeffs);
        assert!((e - s.energy(&next)).abs() < 1e-12 * e);
    }

    #[test]
    fn run_report_rejects_non_increasing_time() {
        let rec = StepRecord {
            step: 0,
            t: 0.0,
            k: 0.1,
            integral_u: 1.0,
            lumped_integral_u: 1.0,
            energy: 1.0,
            modified_energy: 1.0,
            energy_residual: f64::NAN,
            min_u: 0.0,
            min_v: 0.0,
            negative_part: 0.0,
            u_hat_sq: 0.0,
            gradient_sq: 0.0,
            v_hat_sq: 0.0,
            cumulative_u_h1: 0.0,
            law_defect: 0.0,
            law_scale: 0.0,
            iterations: 0,
            linear_iterations: 0,
        };
        let mut r = RunReport::new();
        r.push(rec).unwrap();
        assert!(r.push(rec).is_err());
        r.push(StepRecord { step: 1, t: 0.1, ..rec }).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(REPORT_FORMAT));
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 2);
    }
}
