//! Self-triggered model predictive control for continuous-time linear
//! plants under zero-order hold.
//!
//! At every transmission the controller solves one optimal control
//! problem per sampling pattern, where pattern `i` holds the first input
//! for `iδ`, and picks the longest hold whose cost stays within `β` of the
//! shortest one while still decreasing the previous optimal cost.

pub mod cli;
pub mod config;
pub mod discretization;
pub mod error;
pub mod invariants;
pub mod linalg;
pub mod ocp;
pub mod oracle;
pub mod qp;
pub mod quadrature;
pub mod scenario;
pub mod simulator;
pub mod suite;
pub mod terminal;
pub mod trace;
pub mod trigger;

pub use discretization::{
    discretize, matrix_exponential, stage_cost, stage_cost_kernel, CostWeights, DiscretizationTable,
    LinearSystem,
};
pub use error::{Error, Result};
pub use ocp::{build_ocp, evaluate_cost, solve_all_patterns, solve_ocp, PatternSolution, SamplingPattern};
pub use simulator::{simulate, simulate_periodic, Mode, SimulationConfig, SimulationTrace, Simulator};
pub use terminal::{synthesize_terminal, verify_terminal, TerminalIngredients};
pub use trigger::{check_conditions, initialize, select_pattern, TriggerParams, TriggerState};
