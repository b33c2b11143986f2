//! Experiment presets on `Ω = [0, 2]²`.
//!
//! Mesh sizes are given as `h = 1/N`, which on this domain means `2N`
//! cells per side.

use crate::error::{Error, Result};

pub const DOMAIN_SIDE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub u0: &'static str,
    pub v0: &'static str,
    pub k: f64,
    /// `N` in `h = 1/N`.
    pub inv_h: usize,
    /// Regularization parameter for the regularized `(u, σ)` scheme.
    pub eps: f64,
    pub t_final: f64,
}

impl Preset {
    /// Cells per side of `[0, 2]²`.
    pub fn cells(&self) -> usize {
        cells_for_inv_h(self.inv_h)
    }
}

pub fn cells_for_inv_h(inv_h: usize) -> usize {
    (DOMAIN_SIDE * inv_h as f64).round() as usize
}

const BUMP_U: &str = "-10*x*y*(2-x)*(2-y)*exp(-10*(y-1)^2-10*(x-1)^2)+10.0001";
const WAVE_U: &str = "5*cos(2*pi*x)*cos(2*pi*y)+5.0001";

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "positivity",
        summary: "cell density dipping to 1e-4 under a concentrated chemical peak",
        u0: BUMP_U,
        v0: "100*x*y*(2-x)*(2-y)*exp(-30*(y-1)^2-30*(x-1)^2)+0.0001",
        k: 1e-5,
        inv_h: 20,
        eps: 1e-6,
        t_final: 1e-3,
    },
    Preset {
        name: "oscillation",
        summary: "cell density pushed towards zero where the chemical is highest",
        u0: WAVE_U,
        v0: "-170*cos(2*pi*x)*cos(2*pi*y)+170.0001",
        k: 1e-5,
        inv_h: 25,
        eps: 1e-6,
        t_final: 7e-4,
    },
    Preset {
        name: "energy",
        summary: "energy decay and energy-law residual",
        u0: BUMP_U,
        v0: "20*x*y*(2-x)*(2-y)*exp(-30*(y-1)^2-30*(x-1)^2)+0.0001",
        k: 1e-4,
        inv_h: 30,
        eps: 1e-5,
        t_final: 0.1,
    },
    Preset {
        name: "asymptotic-test1",
        summary: "long-time decay, chemical peaks where cells are scarce",
        u0: WAVE_U,
        v0: "-15*cos(2*pi*x)*cos(2*pi*y)+24",
        k: 1e-3,
        inv_h: 25,
        eps: 1e-5,
        t_final: 10.0,
    },
    Preset {
        name: "asymptotic-test2",
        summary: "long-time decay, chemical peaks where cells are dense",
        u0: WAVE_U,
        v0: "15*cos(2*pi*x)*cos(2*pi*y)+24",
        k: 1e-3,
        inv_h: 25,
        eps: 1e-5,
        t_final: 10.0,
    },
];

pub fn find(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Config(format!("unknown preset '{name}' (known: {})", known.join(", ")))
    })
}
