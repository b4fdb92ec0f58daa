//! Pattern selection: pick the largest pattern `i` whose optimal cost is
//! within `β` of pattern 1 and decreases the previous selected cost by at
//! least `γ` times the stage cost incurred over the previous hold.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::discretization::{stage_cost, DiscretizationTable};
use crate::error::{Error, Result};
use crate::ocp::PatternSolution;

/// Absolute slack on both trigger conditions.
pub const CONDITION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    pub beta: f64,
    pub gamma: f64,
}

impl TriggerParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if beta.is_nan() || beta < 0.0 {
            return Err(Error::invalid(format!("β must be non-negative, got {beta}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("γ must lie in (0, 1], got {gamma}")));
        }
        Ok(Self { beta, gamma })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    /// Events processed so far (the index of the last selection).
    pub k: usize,
    pub prev_pattern: usize,
    /// `J*_{i_{k-1}}(x(t_{k-1}))`.
    pub prev_cost: f64,
    /// `F(x(t_{k-1}), u*_{i_{k-1}}(t_{k-1}), i_{k-1}δ)`.
    pub prev_decrement: f64,
}

/// Result of evaluating both conditions for one pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conditions {
    /// `J*_i ≤ J*_1 + β`
    pub cost_slack: bool,
    /// `J*_i ≤ J*_{prev} − γ·F_prev`
    pub decrease: bool,
}

impl Conditions {
    pub fn both(&self) -> bool {
        self.cost_slack && self.decrease
    }
}

fn decrement(
    table: &DiscretizationTable,
    x: &DVector<f64>,
    solution: &PatternSolution,
) -> Result<f64> {
    let u = solution
        .first_input()
        .ok_or_else(|| Error::invalid("selected pattern has no input sequence"))?;
    stage_cost(x, u, table.gamma(solution.pattern.index()))
}

/// Seeds the trigger from the pattern-1 solution at `x(t_0)`; always `i_0 = 1`.
pub fn initialize(
    table: &DiscretizationTable,
    x0: &DVector<f64>,
    first: &PatternSolution,
) -> Result<(usize, TriggerState)> {
    if first.pattern.index() != 1 {
        return Err(Error::invalid("initialization needs the pattern-1 solution"));
    }
    if !first.is_feasible() {
        return Err(Error::InitialInfeasibility {
            state: x0.iter().copied().collect(),
        });
    }
    let state = TriggerState {
        k: 0,
        prev_pattern: 1,
        prev_cost: first.j_star,
        prev_decrement: decrement(table, x0, first)?,
    };
    Ok((1, state))
}

/// Condition flags for pattern `i` (1-based). Infeasible patterns fail both.
pub fn check_conditions(
    i: usize,
    solutions: &[PatternSolution],
    state: &TriggerState,
    params: &TriggerParams,
) -> Conditions {
    let sol = &solutions[i - 1];
    let base = &solutions[0];
    if !sol.is_feasible() || !base.is_feasible() {
        return Conditions {
            cost_slack: false,
            decrease: false,
        };
    }
    Conditions {
        cost_slack: sol.j_star <= base.j_star + params.beta + CONDITION_SLACK,
        decrease: sol.j_star <= state.prev_cost - params.gamma * state.prev_decrement + CONDITION_SLACK,
    }
}

/// Picks `i_k = max{i : feasible, both conditions}` and returns the
/// updated state.
pub fn select_pattern(
    table: &DiscretizationTable,
    x: &DVector<f64>,
    t: f64,
    solutions: &[PatternSolution],
    state: &TriggerState,
    params: &TriggerParams,
) -> Result<(usize, TriggerState)> {
    let chosen = (1..=solutions.len())
        .rev()
        .find(|&i| check_conditions(i, solutions, state, params).both());
    let Some(i) = chosen else {
        let j1 = solutions.first().map(|s| s.j_star).unwrap_or(f64::NAN);
        return Err(Error::ContractViolation {
            k: state.k + 1,
            t,
            detail: format!(
                "J*_1 = {j1:.12e}, previous cost {:.12e}, previous decrement {:.12e}, γ = {}",
                state.prev_cost, state.prev_decrement, params.gamma
            ),
        });
    };
    let chosen_sol = &solutions[i - 1];
    Ok((
        i,
        TriggerState {
            k: state.k + 1,
            prev_pattern: i,
            prev_cost: chosen_sol.j_star,
            prev_decrement: decrement(table, x, chosen_sol)?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{SamplingPattern, SolveStatus};

    fn fake(costs: &[Option<f64>]) -> Vec<PatternSolution> {
        let n_p = costs.len() + 2;
        costs
            .iter()
            .enumerate()
            .map(|(idx, c)| PatternSolution {
                pattern: SamplingPattern::new(idx + 1, n_p).unwrap(),
                u_seq: vec![DVector::zeros(1); n_p - idx],
                x_seq: vec![],
                j_star: c.unwrap_or(f64::INFINITY),
                status: if c.is_some() { SolveStatus::Optimal } else { SolveStatus::Infeasible },
                kkt_residual: 0.0,
                terminal_multiplier: 0.0,
            })
            .collect()
    }

    fn state(prev_cost: f64, prev_decrement: f64) -> TriggerState {
        TriggerState {
            k: 3,
            prev_pattern: 1,
            prev_cost,
            prev_decrement,
        }
    }

    fn pick(sols: &[PatternSolution], st: &TriggerState, p: &TriggerParams) -> Option<usize> {
        (1..=sols.len()).rev().find(|&i| check_conditions(i, sols, st, p).both())
    }

    #[test]
    fn params_domain() {
        assert!(TriggerParams::new(0.0, 1.0).is_ok());
        assert!(TriggerParams::new(-1.0, 0.5).is_err());
        assert!(TriggerParams::new(1.0, 0.0).is_err());
        assert!(TriggerParams::new(1.0, 1.5).is_err());
    }

    #[test]
    fn zero_beta_forces_first_pattern() {
        let sols = fake(&[Some(1.0), Some(1.5), Some(2.0)]);
        let p = TriggerParams::new(0.0, 1.0).unwrap();
        assert_eq!(pick(&sols, &state(10.0, 1.0), &p), Some(1));
    }

    #[test]
    fn huge_beta_picks_last_pattern() {
        let sols = fake(&[Some(1.0), Some(1.5), Some(2.0)]);
        let p = TriggerParams::new(1e9, 0.5).unwrap();
        assert_eq!(pick(&sols, &state(10.0, 1.0), &p), Some(3));
    }

    #[test]
    fn infeasible_patterns_are_skipped() {
        let sols = fake(&[Some(1.0), Some(1.2), None]);
        let p = TriggerParams::new(1e9, 0.5).unwrap();
        assert_eq!(pick(&sols, &state(10.0, 1.0), &p), Some(2));
        let c = check_conditions(3, &sols, &state(10.0, 1.0), &p);
        assert!(!c.cost_slack && !c.decrease);
    }

    #[test]
    fn first_pattern_always_meets_cost_slack() {
        let sols = fake(&[Some(4.0), Some(5.0)]);
        for beta in [0.0, 0.3, 7.0] {
            let p = TriggerParams::new(beta, 0.5).unwrap();
            assert!(check_conditions(1, &sols, &state(0.0, 0.0), &p).cost_slack);
        }
    }

    #[test]
    fn zero_beta_boundary() {
        let sols = fake(&[Some(1.0), Some(1.0 + 5e-10), Some(1.0 + 1e-6)]);
        let p = TriggerParams::new(0.0, 0.5).unwrap();
        let st = state(10.0, 1.0);
        assert!(check_conditions(2, &sols, &st, &p).cost_slack);
        assert!(!check_conditions(3, &sols, &st, &p).cost_slack);
    }

    #[test]
    fn decrease_condition_binds() {
        let sols = fake(&[Some(1.0), Some(2.0), Some(3.0)]);
        let p = TriggerParams::new(1e9, 1.0).unwrap();
        // prev 4.5, decrement 2 → bound 2.5 admits patterns 1 and 2
        assert_eq!(pick(&sols, &state(4.5, 2.0), &p), Some(2));
    }

    #[test]
    fn no_admissible_pattern_is_a_contract_violation() {
        let sys = crate::discretization::LinearSystem::new(
            nalgebra::DMatrix::zeros(1, 1),
            nalgebra::DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let w = crate::discretization::CostWeights::new(
            nalgebra::DMatrix::identity(1, 1),
            nalgebra::DMatrix::identity(1, 1),
        )
        .unwrap();
        let table = DiscretizationTable::new(&sys, &w, 0.1, 4, 2).unwrap();
        let sols = fake(&[Some(3.0), Some(4.0)]);
        let p = TriggerParams::new(1.0, 1.0).unwrap();
        let err = select_pattern(&table, &DVector::zeros(1), 0.3, &sols, &state(2.0, 1.0), &p).unwrap_err();
        assert!(matches!(err, Error::ContractViolation { k: 4, .. }));
    }
}
