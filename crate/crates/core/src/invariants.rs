//! Runtime checks of the structural guarantees of the scheme: ordering of
//! optimal costs across patterns, the explicit feasible candidates used to
//! prove it, the shifted candidate that bounds the next pattern-1 cost, and
//! the decrease enforced by the trigger.

use nalgebra::DVector;

use crate::discretization::{stage_cost, DiscretizationTable};
use crate::error::Result;
use crate::linalg::rel_diff;
use crate::ocp::{evaluate_cost, rollout, PatternSolution, SamplingPattern};
use crate::simulator::StepRecord;
use crate::terminal::TerminalIngredients;
use crate::trigger::TriggerParams;

/// Slack used for all invariant assertions.
pub const INVARIANT_SLACK: f64 = 1e-6;
/// Constraint tolerance for explicitly constructed candidates.
pub const CANDIDATE_TOL: f64 = 1e-8;

/// Largest `J*_a − J*_b` over feasible `a < b`; non-positive when ordered.
pub fn cost_ordering_gap(solutions: &[PatternSolution]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let mut running_max = f64::NEG_INFINITY;
    for sol in solutions.iter().filter(|s| s.is_feasible()) {
        worst = worst.max(running_max - sol.j_star);
        running_max = running_max.max(sol.j_star);
    }
    if worst == f64::NEG_INFINITY {
        0.0
    } else {
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateCheck {
    pub feasible: bool,
    pub cost: f64,
    pub max_input_excess: f64,
    pub terminal_excess: f64,
}

fn check_candidate(
    table: &DiscretizationTable,
    terminal: &TerminalIngredients,
    pattern: &SamplingPattern,
    x0: &DVector<f64>,
    u_seq: &[DVector<f64>],
) -> Result<CandidateCheck> {
    let (states, _) = rollout(table, pattern, x0, u_seq)?;
    let u_max = &table.system().u_max;
    let max_input_excess = u_seq
        .iter()
        .flat_map(|u| u.iter().zip(u_max.iter()).map(|(v, b)| v.abs() - b))
        .fold(f64::NEG_INFINITY, f64::max);
    let terminal_excess = terminal.terminal_cost(states.last().expect("non-empty")) - terminal.epsilon;
    Ok(CandidateCheck {
        feasible: max_input_excess <= CANDIDATE_TOL && terminal_excess <= CANDIDATE_TOL,
        cost: evaluate_cost(table, &terminal.p_f, pattern, x0, u_seq)?,
        max_input_excess,
        terminal_excess,
    })
}

/// Candidate for pattern `i − 1` from the optimum of pattern `i`: the first
/// input is repeated once more, the tail is unchanged.
pub fn lengthened_candidate(sol: &PatternSolution) -> Vec<DVector<f64>> {
    let mut u = Vec::with_capacity(sol.u_seq.len() + 1);
    u.push(sol.u_seq[0].clone());
    u.extend(sol.u_seq.iter().cloned());
    u
}

/// Checks that each feasible pattern `i ≥ 2` yields a feasible candidate
/// for pattern `i − 1` with the same cost, and that the solver found
/// pattern `i − 1` feasible. Returns `(violations, worst cost mismatch)`.
pub fn check_feasibility_nesting(
    table: &DiscretizationTable,
    terminal: &TerminalIngredients,
    solutions: &[PatternSolution],
    x0: &DVector<f64>,
) -> Result<(usize, f64)> {
    let mut violations = 0;
    let mut worst = 0.0_f64;
    for pair in solutions.windows(2) {
        let (shorter, longer) = (&pair[0], &pair[1]);
        if !longer.is_feasible() {
            continue;
        }
        let cand = lengthened_candidate(longer);
        let check = check_candidate(table, terminal, &shorter.pattern, x0, &cand)?;
        let mismatch = rel_diff(check.cost, longer.j_star);
        worst = worst.max(mismatch);
        if !check.feasible || !shorter.is_feasible() || mismatch > INVARIANT_SLACK {
            violations += 1;
        }
    }
    Ok((violations, worst))
}

/// Pattern-1 candidate at `t_k` built from the optimum of pattern `i` at
/// `t_{k−1}`: the inputs after the first, then the local feedback for the
/// last `i` steps.
pub fn shifted_candidate(
    table: &DiscretizationTable,
    terminal: &TerminalIngredients,
    prev: &PatternSolution,
    x_now: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let n_p = table.horizon_steps();
    let mut u_seq: Vec<DVector<f64>> = prev.u_seq[1..].to_vec();
    let mut x = x_now.clone();
    for u in &u_seq {
        x = table.step(1, &x, u);
    }
    while u_seq.len() < n_p {
        let u = terminal.feedback(&x);
        x = table.step(1, &x, &u);
        u_seq.push(u);
    }
    u_seq
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftCheck {
    pub candidate: CandidateCheck,
    /// `J_1(x(t_k), ū_1) − (J*_i(x(t_{k−1})) − F(x(t_{k−1}), u*_i(t_{k−1}), iδ))`.
    pub bound_gap: f64,
}

pub fn check_shifted_decrease(
    table: &DiscretizationTable,
    terminal: &TerminalIngredients,
    prev_x: &DVector<f64>,
    prev: &PatternSolution,
    x_now: &DVector<f64>,
) -> Result<ShiftCheck> {
    let cand = shifted_candidate(table, terminal, prev, x_now);
    let pattern = SamplingPattern::new(1, table.horizon_steps())?;
    let candidate = check_candidate(table, terminal, &pattern, x_now, &cand)?;
    let applied = stage_cost(prev_x, &prev.u_seq[0], table.gamma(prev.pattern.index()))?;
    Ok(ShiftCheck {
        candidate,
        bound_gap: candidate.cost - (prev.j_star - applied),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolutionCheck {
    pub dynamics_residual: f64,
    pub input_excess: f64,
    pub terminal_excess: f64,
    pub cost_mismatch: f64,
}

impl SolutionCheck {
    pub fn passed(&self) -> bool {
        self.dynamics_residual <= 1e-9
            && self.input_excess <= CANDIDATE_TOL
            && self.terminal_excess <= CANDIDATE_TOL
            && self.cost_mismatch <= 1e-8
    }
}

/// Invariants of a feasible [`PatternSolution`] at `x0`.
pub fn check_solution(
    table: &DiscretizationTable,
    terminal: &TerminalIngredients,
    sol: &PatternSolution,
    x0: &DVector<f64>,
) -> Result<SolutionCheck> {
    if !sol.is_feasible() {
        return Ok(SolutionCheck::default());
    }
    let (states, _) = rollout(table, &sol.pattern, x0, &sol.u_seq)?;
    let dynamics_residual = states
        .iter()
        .zip(&sol.x_seq)
        .map(|(a, b)| (a - b).amax() / a.amax().max(1.0))
        .fold(0.0, f64::max);
    let cand = check_candidate(table, terminal, &sol.pattern, x0, &sol.u_seq)?;
    Ok(SolutionCheck {
        dynamics_residual,
        input_excess: cand.max_input_excess.max(0.0),
        terminal_excess: cand.terminal_excess.max(0.0),
        cost_mismatch: rel_diff(cand.cost, sol.j_star),
    })
}

/// Aggregated results of [`InvariantMonitor`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub events: usize,
    pub ordering_worst: f64,
    pub ordering_violations: usize,
    pub nesting_violations: usize,
    pub nesting_worst: f64,
    pub shift_worst_gap: f64,
    pub shift_violations: usize,
    pub shift_infeasible: usize,
    pub availability_violations: usize,
    pub decrease_worst: f64,
    pub decrease_violations: usize,
    pub solution_violations: usize,
    pub worst_kkt: f64,
}

impl MonitorReport {
    pub fn all_passed(&self) -> bool {
        self.ordering_violations == 0
            && self.nesting_violations == 0
            && self.shift_violations == 0
            && self.shift_infeasible == 0
            && self.availability_violations == 0
            && self.decrease_violations == 0
            && self.solution_violations == 0
    }
}

/// Observer for [`crate::simulator::Simulator::run_observed`] that checks
/// every event against the previous one.
pub struct InvariantMonitor<'a> {
    table: &'a DiscretizationTable,
    terminal: &'a TerminalIngredients,
    params: TriggerParams,
    prev: Option<(DVector<f64>, PatternSolution)>,
    report: MonitorReport,
}

impl<'a> InvariantMonitor<'a> {
    pub fn new(table: &'a DiscretizationTable, terminal: &'a TerminalIngredients, params: TriggerParams) -> Self {
        Self {
            table,
            terminal,
            params,
            prev: None,
            report: MonitorReport {
                events: 0,
                ordering_worst: f64::NEG_INFINITY,
                ordering_violations: 0,
                nesting_violations: 0,
                nesting_worst: 0.0,
                shift_worst_gap: f64::NEG_INFINITY,
                shift_violations: 0,
                shift_infeasible: 0,
                availability_violations: 0,
                decrease_worst: f64::NEG_INFINITY,
                decrease_violations: 0,
                solution_violations: 0,
                worst_kkt: 0.0,
            },
        }
    }

    pub fn observe(&mut self, rec: &StepRecord<'_>) -> Result<()> {
        let r = &mut self.report;
        r.events += 1;

        for sol in rec.solutions.iter().filter(|s| s.is_feasible()) {
            r.worst_kkt = r.worst_kkt.max(sol.kkt_residual);
            if !check_solution(self.table, self.terminal, sol, rec.x)?.passed() {
                r.solution_violations += 1;
            }
        }

        if rec.solutions.len() > 1 {
            let gap = cost_ordering_gap(rec.solutions);
            r.ordering_worst = r.ordering_worst.max(gap);
            if gap > INVARIANT_SLACK {
                r.ordering_violations += 1;
            }
            let (viol, worst) = check_feasibility_nesting(self.table, self.terminal, rec.solutions, rec.x)?;
            r.nesting_violations += viol;
            r.nesting_worst = r.nesting_worst.max(worst);
        }

        if let (Some((prev_x, prev_sol)), Some(before)) = (&self.prev, rec.state_before) {
            let shift = check_shifted_decrease(self.table, self.terminal, prev_x, prev_sol, rec.x)?;
            r.shift_worst_gap = r.shift_worst_gap.max(shift.bound_gap);
            if !shift.candidate.feasible {
                r.shift_infeasible += 1;
            }
            if shift.bound_gap > INVARIANT_SLACK {
                r.shift_violations += 1;
            }

            let bound = before.prev_cost - self.params.gamma * before.prev_decrement;
            let j1 = rec.solutions[0].j_star;
            if !rec.solutions[0].is_feasible() || j1 > bound + INVARIANT_SLACK {
                r.availability_violations += 1;
            }
            let drop = rec.state_after.prev_cost - bound;
            r.decrease_worst = r.decrease_worst.max(drop);
            if drop > INVARIANT_SLACK || rec.state_after.prev_cost > before.prev_cost + INVARIANT_SLACK {
                r.decrease_violations += 1;
            }
        }

        let chosen = rec.solutions[rec.selected - 1].clone();
        self.prev = Some((rec.x.clone(), chosen));
        Ok(())
    }

    pub fn report(&self) -> &MonitorReport {
        &self.report
    }

    pub fn into_report(self) -> MonitorReport {
        self.report
    }
}
