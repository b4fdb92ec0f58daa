//! Experiment configuration files (TOML). Matrices are written as lists of
//! rows. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! # terminal_file = "terminal.toml"   # optional precomputed ingredients
//!
//! [system]
//! a = [[0.0, 1.0], [-2.0, 0.0]]
//! b = [[0.0], [1.0]]
//! u_max = [8.0]
//!
//! [cost]
//! q = [[1.0, 0.0], [0.0, 1.0]]
//! r = [[0.5]]
//!
//! [horizon]
//! delta = 0.1
//! n_p = 80
//! patterns = 30
//!
//! [trigger]
//! beta = 1.0
//! gamma = 0.5
//!
//! [simulation]
//! x0 = [2.5, 0.0]
//! t_end = 40.0
//! # sample_resolution = 0.01
//!
//! [output]            # optional
//! trace = "trace.csv"
//! terminal = "terminal.toml"
//! report = "compare.csv"
//!
//! [terminal]          # optional inline ingredients, same schema as the
//! k = [[...]]         # file written by `stmpc synthesize`
//! p_f = [[...], [...]]
//! epsilon = 1.0
//! delta = 0.1
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::discretization::{CostWeights, LinearSystem};
use crate::error::{Error, Result};
use crate::simulator::SimulationConfig;
use crate::terminal::{TerminalIngredients, TerminalRecord};
use crate::trigger::TriggerParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub u_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSection {
    pub delta: f64,
    pub n_p: usize,
    pub patterns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub x0: Vec<f64>,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_resolution: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_file: Option<PathBuf>,
    pub system: SystemSection,
    pub cost: CostSection,
    pub horizon: HorizonSection,
    pub trigger: TriggerSection,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalRecord>,
}

/// File written by `synthesize`: the ingredients plus their verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalFile {
    pub terminal: TerminalRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationRecord {
    pub lyapunov_max_eig: f64,
    pub input_margin: f64,
    pub passed: bool,
}

pub fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Config(format!("{name} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Config(format!("{name} has an empty first row")));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{name} is ragged: row {i} has {} entries, row 0 has {ncols}",
            r.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn wrap<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) => Error::Config(msg),
        other => Error::Config(format!("[{section}] {other}")),
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // resolve relative terminal files against the config's directory
        if let (Some(tf), Some(dir)) = (&cfg.terminal_file, path.parent()) {
            if tf.is_relative() {
                cfg.terminal_file = Some(dir.join(tf));
            }
        }
        Ok(cfg)
    }

    pub fn system(&self) -> Result<LinearSystem> {
        let a = matrix_from_rows("system.a", &self.system.a)?;
        let b = matrix_from_rows("system.b", &self.system.b)?;
        wrap(
            "system",
            LinearSystem::new(a, b, DVector::from_vec(self.system.u_max.clone())),
        )
    }

    pub fn weights(&self) -> Result<CostWeights> {
        let q = matrix_from_rows("cost.q", &self.cost.q)?;
        let r = matrix_from_rows("cost.r", &self.cost.r)?;
        wrap("cost", CostWeights::new(q, r))
    }

    pub fn trigger_params(&self) -> Result<TriggerParams> {
        self.trigger_with_beta(self.trigger.beta)
    }

    pub fn trigger_with_beta(&self, beta: f64) -> Result<TriggerParams> {
        wrap("trigger", TriggerParams::new(beta, self.trigger.gamma))
    }

    /// Inline ingredients, or those from `terminal_file`; `None` if neither.
    pub fn terminal_ingredients(&self) -> Result<Option<TerminalIngredients>> {
        match (&self.terminal, &self.terminal_file) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give either an inline [terminal] table or terminal_file, not both".into(),
            )),
            (Some(rec), None) => Ok(Some(TerminalIngredients::try_from(rec)?)),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)?;
                let file: TerminalFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                Ok(Some(TerminalIngredients::try_from(&file.terminal)?))
            }
            (None, None) => Ok(None),
        }
    }

    /// Fully validated simulation setup.
    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        let sys = self.system()?;
        let weights = self.weights()?;
        wrap("cost", weights.check_against(&sys))?;
        let h = &self.horizon;
        if !(h.delta.is_finite() && h.delta > 0.0) {
            return Err(Error::Config(format!("horizon.delta must be positive, got {}", h.delta)));
        }
        if h.patterns == 0 || h.patterns >= h.n_p {
            return Err(Error::Config(format!(
                "need 1 <= patterns < n_p, got patterns = {}, n_p = {}",
                h.patterns, h.n_p
            )));
        }
        let s = &self.simulation;
        if s.x0.len() != sys.state_dim() {
            return Err(Error::Config(format!(
                "simulation.x0 has {} entries, the system has {} states",
                s.x0.len(),
                sys.state_dim()
            )));
        }
        if !(s.t_end.is_finite() && s.t_end > 0.0) {
            return Err(Error::Config(format!("simulation.t_end must be positive, got {}", s.t_end)));
        }
        if let Some(r) = s.sample_resolution {
            if r.is_nan() || r <= 0.0 || r > h.delta {
                return Err(Error::Config(format!(
                    "simulation.sample_resolution must lie in (0, delta], got {r}"
                )));
            }
        }
        Ok(SimulationConfig {
            sys,
            weights,
            trigger: self.trigger_params()?,
            delta: h.delta,
            horizon_steps: h.n_p,
            patterns: h.patterns,
            x0: DVector::from_vec(s.x0.clone()),
            t_end: s.t_end,
            sample_resolution: s.sample_resolution,
            terminal: self.terminal_ingredients()?,
        })
    }

    pub fn output(&self) -> OutputSection {
        self.output.clone().unwrap_or_default()
    }
}
