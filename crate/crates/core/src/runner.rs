//! Time-stepping driver and file output.
//!
//! A run writes, into its output directory, `report.csv` (one row per
//! accepted step, header versioned by [`crate::diagnostics::REPORT_FORMAT`]), the resolved
//! configuration as `config.toml`, and legacy-VTK snapshots
//! `snapshot_NNNNNN.vtk` holding `u`, `v` and, for `(u, σ)` schemes, `|σ|`
//! at the mesh vertices. A failed step keeps everything written so far and
//! appends a `# failure ...` line to the report.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{error, info};
use serde::Serialize;

use crate::config::{ExperimentConfig, SchemeKind};
use crate::diagnostics::{
    min_field, negative_part_norm, shifted_norm_sq, EnergyOperators, RunReport, StepRecord,
};
use crate::error::{Error, Result};
use crate::fem::assemble::assemble_lumped_mass;
use crate::mesh::{build_rect_mesh, StructuredMesh};
use crate::scheme_us::{USConfig, USScheme, USState};
use crate::scheme_uv::{UVConfig, UVScheme, UVState};

/// A scheme together with its current state.
pub enum Simulation {
    Uv {
        scheme: Box<UVScheme>,
        cfg: UVConfig,
        state: UVState,
    },
    Us {
        scheme: Box<USScheme>,
        cfg: USConfig,
        state: USState,
    },
}

enum PrevState {
    Uv(UVState),
    Us(USState),
}

struct Tracker {
    m0: f64,
    lumped: Vec<f64>,
    cumulative: f64,
}

impl Simulation {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let m = &config.mesh;
        let mesh = Arc::new(build_rect_mesh(m.lx, m.ly, m.nx, m.ny)?);
        let u0 = config.u0_expr()?;
        let v0 = config.v0_expr()?;
        let s = &config.solver;
        Ok(match config.scheme {
            SchemeKind::Uv => {
                let scheme = UVScheme::new(mesh)?;
                let state = scheme.init(|x, y| u0.eval(x, y), |x, y| v0.eval(x, y))?;
                let cfg = UVConfig {
                    k: config.k,
                    newton: s.newton(),
                    linear: s.linear(),
                };
                Self::Uv {
                    scheme: Box::new(scheme),
                    cfg,
                    state,
                }
            }
            SchemeKind::Us | SchemeKind::UsEps => {
                let scheme = USScheme::new(mesh)?;
                let [gx, gy] = v0.gradient();
                let state = scheme.init(|x, y| u0.eval(x, y), |x, y| v0.eval(x, y), |x, y| [gx.eval(x, y), gy.eval(x, y)])?;
                let mut cfg = match (config.scheme, config.eps) {
                    (SchemeKind::UsEps, Some(eps)) => USConfig::regularized(config.k, eps)?,
                    (SchemeKind::UsEps, None) => return Err(Error::Config("field `eps`: required by the us-eps scheme".into())),
                    _ => USConfig::plain(config.k),
                };
                cfg.picard = s.picard();
                cfg.newton = s.newton();
                cfg.linear = s.linear();
                cfg.max_halvings = s.max_halvings;
                Self::Us {
                    scheme: Box::new(scheme),
                    cfg,
                    state,
                }
            }
        })
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        match self {
            Self::Uv { scheme, .. } => scheme.u_space().mesh(),
            Self::Us { scheme, .. } => scheme.space().mesh(),
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            Self::Uv { state, .. } => state.t,
            Self::Us { state, .. } => state.t,
        }
    }

    pub fn step_index(&self) -> usize {
        match self {
            Self::Uv { state, .. } => state.step,
            Self::Us { state, .. } => state.step,
        }
    }

    /// Coefficients of `u` and `v` at the current time.
    pub fn fields(&self) -> (&[f64], &[f64]) {
        match self {
            Self::Uv { state, .. } => (&state.u.coeffs, &state.v.coeffs),
            Self::Us { state, .. } => (&state.u.coeffs, &state.v.coeffs),
        }
    }

    fn tracker(&self) -> Result<Tracker> {
        let (space, m0) = match self {
            Self::Uv { scheme, state, .. } => {
                (scheme.u_space(), scheme.integral_u(&state.u.coeffs) / scheme.u_space().mesh().area())
            }
            Self::Us { scheme, state, .. } => {
                (scheme.space(), scheme.lumped_integral(&state.u.coeffs) / scheme.space().mesh().area())
            }
        };
        Ok(Tracker {
            m0,
            lumped: assemble_lumped_mass(space)?.diagonal(),
            cumulative: 0.0,
        })
    }

    fn record(&self, tr: &Tracker, k: f64, prev: Option<&PrevState>, iterations: usize, linear_iterations: usize) -> StepRecord {
        let m0 = tr.m0;
        match self {
            Self::Uv { scheme, state, .. } => {
                let ops = EnergyOperators::for_uv(scheme);
                let (u, v) = (&state.u.coeffs, &state.v.coeffs);
                let (energy_residual, law_defect, law_scale) = match prev {
                    Some(PrevState::Uv(p)) => {
                        let terms = scheme.energy_law_terms(p, state, k);
                        let re = ops.energy_residual((&p.u.coeffs, &p.v.coeffs), (u, v), k);
                        (re, terms.sum(), terms.largest())
                    }
                    _ => (f64::NAN, f64::NAN, f64::NAN),
                };
                let energy = scheme.energy(state);
                let integral_u = scheme.integral_u(u);
                StepRecord {
                    step: state.step,
                    t: state.t,
                    k,
                    integral_u,
                    lumped_integral_u: tr.lumped.iter().zip(u).map(|(m, x)| m * x).sum(),
                    energy,
                    modified_energy: f64::NAN,
                    energy_residual,
                    min_u: min_field(&state.u),
                    min_v: min_field(&state.v),
                    negative_part: negative_part_norm(&tr.lumped, u),
                    u_hat_sq: shifted_norm_sq(scheme.mass_u(), u, m0),
                    gradient_sq: scheme.stiffness_v().quadratic(v),
                    v_hat_sq: shifted_norm_sq(scheme.mass_v(), v, m0 * m0),
                    cumulative_u_h1: tr.cumulative,
                    law_defect,
                    law_scale,
                    iterations,
                    linear_iterations,
                }
            }
            Self::Us { scheme, state, .. } => {
                let ops = EnergyOperators::for_us(scheme);
                let (u, v) = (&state.u.coeffs, &state.v.coeffs);
                let (energy_residual, law_defect, law_scale) = match prev {
                    Some(PrevState::Us(p)) => {
                        let terms = scheme.energy_law_terms(p, state, k);
                        let re = ops.energy_residual((&p.u.coeffs, &p.v.coeffs), (u, v), k);
                        (re, terms.sum(), terms.largest())
                    }
                    _ => (f64::NAN, f64::NAN, f64::NAN),
                };
                StepRecord {
                    step: state.step,
                    t: state.t,
                    k,
                    integral_u: scheme.mass().row_sums().iter().zip(u).map(|(m, x)| m * x).sum(),
                    lumped_integral_u: scheme.lumped_integral(u),
                    energy: ops.energy(u, v),
                    modified_energy: scheme.modified_energy(state),
                    energy_residual,
                    min_u: min_field(&state.u),
                    min_v: min_field(&state.v),
                    negative_part: negative_part_norm(&tr.lumped, u),
                    u_hat_sq: shifted_norm_sq(scheme.mass(), u, m0),
                    gradient_sq: scheme.sigma_mass().quadratic(&state.sigma.coeffs),
                    v_hat_sq: shifted_norm_sq(scheme.mass(), v, m0 * m0),
                    cumulative_u_h1: tr.cumulative,
                    law_defect,
                    law_scale,
                    iterations,
                    linear_iterations,
                }
            }
        }
    }

    /// `‖u − m₀‖₁²` at the current state.
    fn u_hat_h1(&self, m0: f64) -> f64 {
        let (u, stiffness, mass) = match self {
            Self::Uv { scheme, state, .. } => (&state.u.coeffs, scheme.stiffness_u(), scheme.mass_u()),
            Self::Us { scheme, state, .. } => (&state.u.coeffs, scheme.stiffness(), scheme.mass()),
        };
        let mean: f64 = mass.row_sums().iter().zip(u).map(|(m, x)| m * (x - m0)).sum();
        stiffness.quadratic(u) + mean * mean
    }

    /// Advances one step; returns the previous state with the step size
    /// used and the nonlinear and linear iteration counts.
    fn advance(&mut self) -> Result<(PrevState, f64, usize, usize)> {
        match self {
            Self::Uv { scheme, cfg, state } => {
                let (next, info) = scheme.step(state, cfg)?;
                let prev = std::mem::replace(state, next);
                Ok((PrevState::Uv(prev), cfg.k, info.newton_iterations, info.linear_iterations))
            }
            Self::Us { scheme, cfg, state } => {
                let (next, info) = scheme.step(state, cfg)?;
                let prev = std::mem::replace(state, next);
                Ok((PrevState::Us(prev), info.k_used, info.iterations, info.linear_iterations))
            }
        }
    }

    fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let mesh = self.mesh();
        let nv = mesh.n_vertices();
        let (u, v) = self.fields();
        let path = dir.join(format!("snapshot_{:06}.vtk", self.step_index()));
        let w = BufWriter::new(File::create(&path)?);
        let title = format!("t = {:e}", self.time());
        match self {
            Self::Uv { .. } => mesh.write_vtk(w, &title, &[("u", u), ("v", &v[..nv])]),
            Self::Us { scheme, state, .. } => {
                let mag = scheme.sigma_space().vertex_magnitudes(&state.sigma.coeffs);
                mesh.write_vtk(w, &title, &[("u", u), ("v", v), ("sigma_magnitude", &mag)])
            }
        }
    }
}

/// Result of one run. A step failure does not make [`run`] return an
/// error: the records up to the failure are kept and `failure` says what
/// went wrong.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub report: RunReport,
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs the configured experiment. Files are written only when the
/// configuration names an output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    let mut sim = Simulation::new(config)?;
    let out_dir = config.output.dir.clone();
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), config.to_toml()?)?;
    }
    let stride = config.output.snapshot_every;
    let snapshot = |sim: &Simulation| -> Result<()> {
        match &out_dir {
            Some(dir) if stride > 0 && sim.step_index() % stride == 0 => sim.write_snapshot(dir),
            _ => Ok(()),
        }
    };

    let mut tracker = sim.tracker()?;
    let mut report = RunReport::new();
    report.push(sim.record(&tracker, config.k, None, 0, 0))?;
    snapshot(&sim)?;

    let n_planned = config.n_steps();
    let mut failure = None;
    let mut next_log = 0;
    while sim.time() + 0.5 * config.k <= config.t_final {
        match sim.advance() {
            Ok((prev, k, its, lin)) => {
                tracker.cumulative += k * sim.u_hat_h1(tracker.m0);
                report.push(sim.record(&tracker, k, Some(&prev), its, lin))?;
                snapshot(&sim)?;
                if sim.step_index() >= next_log {
                    info!(
                        "{} step {}/{} t = {:.4e}",
                        config.scheme.name(),
                        sim.step_index(),
                        n_planned,
                        sim.time()
                    );
                    next_log += n_planned.div_ceil(10).max(1);
                }
            }
            Err(e) => {
                error!("{e}");
                failure = Some(e.to_string());
                break;
            }
        }
    }

    if let Some(dir) = &out_dir {
        write_report(&dir.join("report.csv"), &report, failure.as_deref())?;
    }
    Ok(RunOutcome {
        config: config.clone(),
        report,
        failure,
    })
}

fn write_report(path: &Path, report: &RunReport, failure: Option<&str>) -> Result<()> {
    use std::io::Write;
    let mut w = BufWriter::new(File::create(path)?);
    report.write_csv(&mut w)?;
    if let Some(msg) = failure {
        writeln!(w, "# failure after step {}: {}", report.last().map_or(0, |r| r.step), msg.replace('\n', " "))?;
    }
    w.flush()?;
    Ok(())
}

/// One line of an ε sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    /// `max_n ‖Π^h(u_−)‖₀²`.
    pub max_negative_part: f64,
    /// `min_n min u^n`.
    pub min_u: f64,
    /// `max_negative_part / eps`.
    pub ratio: f64,
    pub steps: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Smallest `C₀` with `max_negative_part ≤ C₀ ε` on every row.
    pub fn fitted_constant(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    /// Whether the negative part does not grow as ε decreases.
    pub fn monotone_in_eps(&self) -> bool {
        let mut rows: Vec<&SweepRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        rows.windows(2).all(|w| w[1].max_negative_part <= w[0].max_negative_part)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for r in &self.rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Runs the regularized `(u, σ)` scheme once per ε, concurrently. With an
/// output directory each run writes into `eps_<ε>/` and the table goes to
/// `sweep.csv`.
pub fn sweep_eps(config: &ExperimentConfig, eps_list: &[f64]) -> Result<SweepTable> {
    if config.scheme != SchemeKind::UsEps {
        return Err(Error::Config(format!(
            "field `scheme`: an ε sweep needs the us-eps scheme, got {}",
            config.scheme.name()
        )));
    }
    let configs: Vec<ExperimentConfig> = eps_list
        .iter()
        .map(|&eps| {
            let mut c = config.clone();
            c.eps = Some(eps);
            c.output.dir = config.output.dir.as_ref().map(|d| d.join(format!("eps_{eps:e}")));
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<Result<RunOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Unsupported("sweep run panicked".into()))))
            .collect()
    });
    let mut rows = Vec::with_capacity(outcomes.len());
    for (eps, outcome) in eps_list.iter().zip(outcomes) {
        let o = outcome?;
        let recs = o.report.records();
        let max_negative_part = recs.iter().map(|r| r.negative_part).fold(0.0, f64::max);
        rows.push(SweepRow {
            eps: *eps,
            max_negative_part,
            min_u: recs.iter().map(|r| r.min_u).fold(f64::INFINITY, f64::min),
            ratio: max_negative_part / eps,
            steps: recs.last().map_or(0, |r| r.step),
            failure: o.failure,
        });
    }
    let table = SweepTable { rows };
    if let Some(dir) = &config.output.dir {
        fs::create_dir_all(dir)?;
        table.write_csv(BufWriter::new(File::create(dir.join("sweep.csv"))?))?;
    }
    Ok(table)
}

/// Output directory for a run when none is configured.
pub fn default_output_dir(config: &ExperimentConfig) -> PathBuf {
    let name = config.preset.as_deref().unwrap_or("custom");
    PathBuf::from("out").join(format!("{name}-{}", config.scheme.name()))
}
