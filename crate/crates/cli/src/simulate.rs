//! Simulation grids from a JSON description.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "permutations": 200,
//!   "cells": [
//!     {"design": "gaussian", "noise": "cauchy", "n": 100, "p": 5,
//!      "alphas": [0.05, 0.01], "reps": 500, "methods": ["palmrt", "fl"]},
//!     {"experiment": "power", "design": "gaussian", "noise": "gaussian",
//!      "n": 100, "p": 1, "targets": [0.5, 0.7], "reps": 500,
//!      "methods": ["palmrt", "ftest"]}
//!   ]
//! }
//! ```

use std::path::Path;

use palmrt::perm::derive_seed;
use palmrt::sim::{
    calibrate_beta, gen_design, run_ci_coverage, run_power, run_type1, CellConfig, DesignKind, DesignSpec, NoiseKind,
    SignalSpec,
};
use palmrt::{CiConfig, Method, PalmrtConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::SimRecord;

const CELL_TAG: u64 = 0x0000_6365_6c6c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Type1,
    Power,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCell {
    #[serde(default)]
    pub experiment: Experiment,
    pub design: DesignKind,
    pub noise: NoiseKind,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Target F-test powers for `power` and `coverage` cells.
    #[serde(default)]
    pub targets: Vec<f64>,
    pub reps: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Overrides the seed derived from the file-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub permutations: Option<usize>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Palmrt]
}

fn default_permutations() -> usize {
    2000
}

fn default_calibration_reps() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_calibration_reps")]
    pub calibration_reps: usize,
    #[serde(default)]
    pub redraw_design: bool,
    #[serde(default)]
    pub palmrt: PalmrtConfig,
    pub cells: Vec<SimCell>,
}

impl SimConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    fn cell_config(&self, index: usize, cell: &SimCell) -> CellConfig {
        let seed = cell
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, CELL_TAG, index as u64));
        let mut config = CellConfig::new(
            DesignSpec::new(cell.design, cell.n, cell.p, seed),
            cell.noise,
            cell.reps,
            cell.permutations.unwrap_or(self.permutations),
            seed,
        );
        config.redraw_design = self.redraw_design;
        config.palmrt = self.palmrt;
        config
    }
}

/// One result per cell and level, in file order.
pub fn run(config: &SimConfig) -> Result<Vec<SimRecord>> {
    if config.cells.is_empty() {
        return Err(CliError::Spec("simulation config lists no cells".into()));
    }
    let mut out = Vec::new();
    for (i, cell) in config.cells.iter().enumerate() {
        validate_cell(cell)?;
        let cell_config = config.cell_config(i, cell);
        match cell.experiment {
            Experiment::Type1 => {
                let result = run_type1(&cell_config, &cell.methods, &cell.alphas)?;
                out.push(SimRecord {
                    config: cell_config,
                    result,
                });
            }
            Experiment::Power => {
                for &alpha in &cell.alphas {
                    let result = run_power(
                        &cell_config,
                        &cell.methods,
                        &cell.targets,
                        alpha,
                        config.calibration_reps,
                    )?;
                    out.push(SimRecord {
                        config: cell_config.clone(),
                        result,
                    });
                }
            }
            Experiment::Coverage => {
                let design = gen_design(&cell_config.design)?;
                let ci = CiConfig {
                    palmrt: config.palmrt,
                    ..CiConfig::default()
                };
                for &alpha in &cell.alphas {
                    let betas: Vec<f64> = if cell.targets.is_empty() {
                        vec![0.0]
                    } else {
                        cell.targets
                            .iter()
                            .map(|&t| {
                                calibrate_beta(&design, cell.noise, t, alpha, config.calibration_reps, cell_config.seed)
                            })
                            .collect::<palmrt::Result<_>>()?
                    };
                    for beta in betas {
                        let result = run_ci_coverage(&cell_config, &SignalSpec::beta(beta), alpha, &ci)?;
                        out.push(SimRecord {
                            config: cell_config.clone(),
                            result,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn validate_cell(cell: &SimCell) -> Result<()> {
    if cell.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(CliError::Spec(format!("alphas must lie in (0, 1): {:?}", cell.alphas)));
    }
    if cell.experiment == Experiment::Power && cell.targets.is_empty() {
        return Err(CliError::Spec("power cells need at least one target".into()));
    }
    Ok(())
}
