use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{debug, error};

use chemorep::config::{load_raw, ExperimentConfig, RawConfig, SchemeKind};
use chemorep::presets::PRESETS;
use chemorep::runner::{default_output_dir, run, sweep_eps};
use chemorep::Result;

/// Finite element experiments for a chemo-repulsion model with quadratic
/// production.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(RunArgs),
    /// Run the us-eps scheme once per ε and tabulate the negative part of u.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 1e-3, 1e-4])]
        eps: Vec<f64>,
    },
    /// List the built-in presets.
    PresetsList,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset name; overrides the one in the configuration file.
    #[arg(long)]
    preset: Option<String>,
    /// uv, us or us-eps.
    #[arg(long)]
    scheme: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write VTK snapshots every N steps (0 disables them).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Reserved; the solvers are deterministic and draw no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self, scheme_default: Option<SchemeKind>) -> Result<ExperimentConfig> {
        let mut raw = match &self.config {
            Some(path) => load_raw(path)?,
            None => RawConfig::default(),
        };
        if let Some(p) = &self.preset {
            raw.preset = Some(p.clone());
        }
        if let Some(s) = &self.scheme {
            raw.scheme = Some(SchemeKind::parse(s)?);
        }
        if raw.scheme.is_none() {
            raw.scheme = scheme_default;
        }
        if let Some(d) = &self.out {
            raw.output.dir = Some(d.clone());
        }
        if let Some(n) = self.snapshot_every {
            raw.output.snapshot_every = Some(n);
        }
        if let Some(seed) = self.seed {
            debug!("seed {seed} accepted and unused");
        }
        let mut cfg = raw.resolve()?;
        if cfg.output.dir.is_none() {
            cfg.output.dir = Some(default_output_dir(&cfg));
        }
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::PresetsList => {
            // Writes fail quietly when the reader goes away, e.g. `| head`.
            let mut out = std::io::stdout().lock();
            for p in PRESETS {
                let _ = writeln!(
                    out,
                    "{:<18} k={:<6e} h=1/{:<3} eps={:<6e} T={:<6e} {}",
                    p.name, p.k, p.inv_h, p.eps, p.t_final, p.summary
                )
                .and_then(|_| writeln!(out, "{:<18} u0 = {}", "", p.u0))
                .and_then(|_| writeln!(out, "{:<18} v0 = {}", "", p.v0));
            }
            Ok(true)
        }
        Command::Run(args) => {
            let cfg = args.resolve(None)?;
            print!("{}", cfg.to_toml()?);
            let outcome = run(&cfg)?;
            if let Some(last) = outcome.report.last() {
                println!(
                    "steps {}  t = {:.6e}  E = {:.6e}  min u = {:.6e}",
                    last.step, last.t, last.energy, last.min_u
                );
            }
            if let Some(msg) = &outcome.failure {
                error!("run stopped early: {msg}");
            }
            Ok(outcome.succeeded())
        }
        Command::Sweep { run, eps } => {
            let cfg = run.resolve(Some(SchemeKind::UsEps))?;
            print!("{}", cfg.to_toml()?);
            let table = sweep_eps(&cfg, &eps)?;
            println!("{:>10} {:>14} {:>14} {:>12}", "eps", "max |u_-|^2", "min u", "ratio");
            for r in &table.rows {
                println!("{:>10e} {:>14.6e} {:>14.6e} {:>12.4e}", r.eps, r.max_negative_part, r.min_u, r.ratio);
            }
            println!("fitted C0 = {:.4e}", table.fitted_constant());
            Ok(table.rows.iter().all(|r| r.failure.is_none()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
