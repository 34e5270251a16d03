//! TOML study configuration.
//!
//! ```toml
//! reps = 300
//! levels = [0.01, 0.05, 0.1]
//! mu = 0.0
//! exponent_mode = "quartic"      # or "quadratic-literal"
//! fixed_genotypes = false
//! randomize_causal = false
//!
//! [[grid]]
//! sizes = [[1000, 10000], [2000, 20000]]
//! omega = [0.1, 0.5]               # or: m = [20, 200]
//! ab = [[0.4, 0.6], [0.8, 0.2]]
//! ```
//!
//! Each `[[grid]]` expands to the Cartesian product sizes × (omega | m) × ab,
//! in that nesting order. Scenario seeds derive from the study seed and the
//! scenario's position in the expanded list.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::genosim::SimConfig;
use crate::mcstudy::StudyOptions;
use crate::rng::scenario_seed;
use crate::varest::ExponentMode;

fn default_reps() -> usize {
    300
}

fn default_levels() -> Vec<f64> {
    vec![0.01, 0.05, 0.1]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub exponent_mode: ExponentMode,
    #[serde(default)]
    pub fixed_genotypes: bool,
    #[serde(default)]
    pub randomize_causal: bool,
    pub grid: Vec<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// `(n, p)` pairs.
    pub sizes: Vec<(usize, usize)>,
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
    #[serde(default)]
    pub m: Option<Vec<usize>>,
    /// `(a, b)` pairs.
    pub ab: Vec<(f64, f64)>,
}

/// Causal count for fraction `omega` of `p`, at least one.
pub fn causal_count(omega: f64, p: usize) -> Result<usize> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::InvalidInput(format!("omega = {omega} outside (0, 1]")));
    }
    Ok(((omega * p as f64).round() as usize).clamp(1, p))
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Parse(format!("study config: {e}")))?;
        if cfg.grid.is_empty() {
            return Err(Error::InvalidInput("study config has no [[grid]] entries".into()));
        }
        if cfg.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn options(&self) -> StudyOptions {
        StudyOptions {
            exponent_mode: self.exponent_mode,
            fixed_genotypes: self.fixed_genotypes,
            ..Default::default()
        }
    }

    /// Expanded scenario list with per-scenario seeds.
    pub fn scenarios(&self, seed: u64) -> Result<Vec<SimConfig>> {
        let mut out = Vec::new();
        for (g, grid) in self.grid.iter().enumerate() {
            let by_omega = match (&grid.omega, &grid.m) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(Error::InvalidInput(format!(
                        "grid {}: give exactly one of 'omega' or 'm'",
                        g + 1
                    )))
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
            };
            for &(n, p) in &grid.sizes {
                let ms: Vec<usize> = if by_omega {
                    grid.omega
                        .iter()
                        .flatten()
                        .map(|&w| causal_count(w, p))
                        .collect::<Result<_>>()?
                } else {
                    grid.m.clone().unwrap_or_default()
                };
                for &m in &ms {
                    for &(a, b) in &grid.ab {
                        let index = out.len() as u64;
                        let mut c = SimConfig::new(n, p, m, a, b, scenario_seed(seed, index));
                        c.n_reps = self.reps;
                        c.levels = self.levels.clone();
                        c.mu = self.mu;
                        c.randomize_causal = self.randomize_causal;
                        c.validate()?;
                        out.push(c);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("study config expands to no scenarios".into()));
        }
        Ok(out)
    }
}
