//! Experiment configuration read from TOML.
//!
//! A file may name a preset and override any of its values:
//!
//! ```toml
//! scheme = "us-eps"
//! preset = "energy"
//! eps = 1e-4
//! n_steps = 200
//!
//! [mesh]
//! nx = 32
//! ny = 32
//!
//! [solver]
//! linear = "bicgstab"
//!
//! [output]
//! snapshot_every = 50
//! ```
//!
//! Without a preset, `k`, the mesh, a duration and both initial
//! expressions are required.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::presets::{self, DOMAIN_SIDE};
use crate::solvers::linear::{LinearMethod, LinearSolveConfig};
use crate::solvers::nonlinear::{NewtonConfig, PicardConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// `(u, v)` with (P1, P2) elements and Newton's method.
    Uv,
    /// `(u, σ)` with the plain mobility and Newton's method.
    Us,
    /// `(u, σ)` with the regularized mobility and Picard iteration.
    UsEps,
}

impl SchemeKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "uv" => Ok(Self::Uv),
            "us" => Ok(Self::Us),
            "us-eps" => Ok(Self::UsEps),
            _ => Err(Error::Config(format!("field `scheme`: unknown scheme '{s}' (expected uv, us or us-eps)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uv => "uv",
            Self::Us => "us",
            Self::UsEps => "us-eps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub newton_damping: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Anderson history for the Picard iteration; 0 is the plain sweep.
    pub picard_depth: usize,
    pub linear: LinearMethod,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let n = NewtonConfig::default();
        let p = PicardConfig::default();
        let l = LinearSolveConfig::default();
        Self {
            newton_tol: n.tol,
            newton_max_iter: n.max_iter,
            newton_damping: n.damping,
            picard_tol: p.tol,
            picard_max_iter: p.max_iter,
            picard_depth: p.depth,
            linear: l.method,
            linear_tol: l.rel_tol,
            linear_max_iter: l.max_iter,
            max_halvings: 4,
        }
    }
}

impl SolverConfig {
    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
            damping: self.newton_damping,
        }
    }

    pub fn picard(&self) -> PicardConfig {
        PicardConfig {
            tol: self.picard_tol,
            max_iter: self.picard_max_iter,
            depth: self.picard_depth,
        }
    }

    pub fn linear(&self) -> LinearSolveConfig {
        LinearSolveConfig {
            method: self.linear,
            rel_tol: self.linear_tol,
            max_iter: self.linear_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write field snapshots every this many steps; 0 disables them.
    pub snapshot_every: usize,
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scheme: SchemeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub k: f64,
    pub t_final: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub u0: String,
    pub v0: String,
    pub mesh: MeshConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Preset values with default solver settings.
    pub fn from_preset(name: &str, scheme: SchemeKind) -> Result<Self> {
        RawConfig {
            scheme: Some(scheme),
            preset: Some(name.to_string()),
            ..Default::default()
        }
        .resolve()
    }

    /// Number of steps of size `k` covering `[0, t_final]`.
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.k).round() as usize
    }

    pub fn u0_expr(&self) -> Result<Expr> {
        Expr::parse(&self.u0).map_err(|e| Error::Config(format!("field `u0`: {e}")))
    }

    pub fn v0_expr(&self) -> Result<Expr> {
        Expr::parse(&self.v0).map_err(|e| Error::Config(format!("field `v0`: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("field `{name}`: {msg}")));
        if !(self.k > 0.0 && self.k.is_finite()) {
            return field("k", format!("must be positive, got {}", self.k));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return field("t_final", format!("must be positive, got {}", self.t_final));
        }
        if self.n_steps() == 0 {
            return field("t_final", format!("{} is shorter than half a step", self.t_final));
        }
        match (self.scheme, self.eps) {
            (SchemeKind::UsEps, None) => return field("eps", "required by the us-eps scheme".into()),
            (SchemeKind::UsEps, Some(e)) if !(e > 0.0 && e < 1.0) => {
                return field("eps", format!("must lie in (0, 1), got {e}"))
            }
            _ => {}
        }
        let m = &self.mesh;
        if !(m.lx > 0.0 && m.ly > 0.0 && m.lx.is_finite() && m.ly.is_finite()) {
            return field("mesh", format!("side lengths must be positive, got {} × {}", m.lx, m.ly));
        }
        if m.nx == 0 || m.ny == 0 {
            return field("mesh", format!("cell counts must be positive, got {} × {}", m.nx, m.ny));
        }
        self.u0_expr()?;
        self.v0_expr()?;
        let s = &self.solver;
        if !(s.newton_tol > 0.0) || s.newton_max_iter == 0 {
            return field("solver.newton_tol", "Newton needs tol > 0 and max_iter ≥ 1".into());
        }
        if !(s.newton_damping > 0.0 && s.newton_damping <= 1.0) {
            return field("solver.newton_damping", format!("must lie in (0, 1], got {}", s.newton_damping));
        }
        if !(s.picard_tol > 0.0) || s.picard_max_iter == 0 {
            return field("solver.picard_tol", "Picard needs tol > 0 and max_iter ≥ 1".into());
        }
        if !(s.linear_tol > 0.0) || s.linear_max_iter == 0 {
            return field("solver.linear_tol", "linear solver needs tol > 0 and max_iter ≥ 1".into());
        }
        if s.linear == LinearMethod::ConjugateGradient && self.scheme != SchemeKind::UsEps {
            return field(
                "solver.linear",
                format!("the {} scheme solves nonsymmetric systems; use direct or bicgstab", self.scheme.name()),
            );
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMesh {
    pub lx: Option<f64>,
    pub ly: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub newton_damping: Option<f64>,
    pub picard_tol: Option<f64>,
    pub picard_max_iter: Option<usize>,
    pub picard_depth: Option<usize>,
    pub linear: Option<LinearMethod>,
    pub linear_tol: Option<f64>,
    pub linear_max_iter: Option<usize>,
    pub max_halvings: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
    pub snapshot_every: Option<usize>,
}

/// Configuration as written, before defaults are filled in.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub scheme: Option<SchemeKind>,
    pub preset: Option<String>,
    pub k: Option<f64>,
    pub t_final: Option<f64>,
    pub n_steps: Option<usize>,
    pub eps: Option<f64>,
    pub u0: Option<String>,
    pub v0: Option<String>,
    #[serde(default)]
    pub mesh: RawMesh,
    #[serde(default)]
    pub solver: RawSolver,
    #[serde(default)]
    pub output: RawOutput,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills defaults from the preset and the solver defaults, then
    /// validates.
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let missing = |name: &str| Error::Config(format!("field `{name}`: missing and no preset to take it from"));
        let preset = self.preset.as_deref().map(presets::find).transpose()?;
        let scheme = self.scheme.ok_or_else(|| Error::Config("field `scheme`: missing".into()))?;
        let k = self.k.or(preset.map(|p| p.k)).ok_or_else(|| missing("k"))?;
        let t_final = match (self.t_final, self.n_steps) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("field `n_steps`: give either t_final or n_steps, not both".into()))
            }
            (Some(t), None) => t,
            (None, Some(n)) => n as f64 * k,
            (None, None) => preset.map(|p| p.t_final).ok_or_else(|| missing("t_final"))?,
        };
        let eps = match scheme {
            SchemeKind::UsEps => Some(self.eps.or(preset.map(|p| p.eps)).ok_or_else(|| missing("eps"))?),
            _ => self.eps,
        };
        let u0 = self.u0.or(preset.map(|p| p.u0.to_string())).ok_or_else(|| missing("u0"))?;
        let v0 = self.v0.or(preset.map(|p| p.v0.to_string())).ok_or_else(|| missing("v0"))?;
        let cells = preset.map(|p| p.cells());
        let mesh = MeshConfig {
            lx: self.mesh.lx.or(preset.map(|_| DOMAIN_SIDE)).ok_or_else(|| missing("mesh.lx"))?,
            ly: self.mesh.ly.or(preset.map(|_| DOMAIN_SIDE)).ok_or_else(|| missing("mesh.ly"))?,
            nx: self.mesh.nx.or(cells).ok_or_else(|| missing("mesh.nx"))?,
            ny: self.mesh.ny.or(cells).ok_or_else(|| missing("mesh.ny"))?,
        };
        let d = SolverConfig::default();
        let s = self.solver;
        let solver = SolverConfig {
            newton_tol: s.newton_tol.unwrap_or(d.newton_tol),
            newton_max_iter: s.newton_max_iter.unwrap_or(d.newton_max_iter),
            newton_damping: s.newton_damping.unwrap_or(d.newton_damping),
            picard_tol: s.picard_tol.unwrap_or(d.picard_tol),
            picard_max_iter: s.picard_max_iter.unwrap_or(d.picard_max_iter),
            picard_depth: s.picard_depth.unwrap_or(d.picard_depth),
            linear: s.linear.unwrap_or(d.linear),
            linear_tol: s.linear_tol.unwrap_or(d.linear_tol),
            linear_max_iter: s.linear_max_iter.unwrap_or(d.linear_max_iter),
            max_halvings: s.max_halvings.unwrap_or(d.max_halvings),
        };
        let cfg = ExperimentConfig {
            scheme,
            preset: self.preset,
            k,
            t_final,
            eps,
            u0,
            v0,
            mesh,
            solver,
            output: OutputConfig {
                dir: self.output.dir,
                snapshot_every: self.output.snapshot_every.unwrap_or(0),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads, resolves and validates a configuration file. Parse errors carry
/// the line and column.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_raw(path)?.resolve()
}

pub fn load_raw(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path)?;
    RawConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
