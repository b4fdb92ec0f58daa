//! Per-pattern finite-horizon optimal control problems.
//!
//! Pattern `i` holds its first input for `iδ` and every later input for
//! `δ`, so it has `N_i = N_p − i + 1` decision inputs and always spans the
//! full horizon `N_p·δ`. States are eliminated (condensed form) and the
//! problem becomes a box QP in the stacked inputs plus one ellipsoidal
//! terminal constraint.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::discretization::{stage_cost, DiscretizationTable};
use crate::error::{Error, Result};
use crate::linalg::{quad_form, symmetrize};
use crate::qp::{solve_qcqp, QcqpOutcome, QuadraticConstraint};
use crate::terminal::TerminalIngredients;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPattern {
    index: usize,
    horizon_steps: usize,
}

impl SamplingPattern {
    pub fn new(index: usize, horizon_steps: usize) -> Result<Self> {
        if index == 0 || index >= horizon_steps {
            return Err(Error::invalid(format!(
                "pattern index {index} must lie in 1..{horizon_steps}"
            )));
        }
        Ok(Self { index, horizon_steps })
    }

    /// Pattern number `i`; the first hold lasts `iδ`.
    pub fn index(&self) -> usize {
        self.index
    }

    /// `N_i = N_p − i + 1`.
    pub fn len(&self) -> usize {
        self.horizon_steps - self.index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Hold lengths in units of δ: `[i, 1, 1, …, 1]`, summing to `N_p`.
    pub fn steps(&self) -> Vec<usize> {
        let mut s = vec![1; self.len()];
        s[0] = self.index;
        s
    }

    pub fn intervals(&self, delta: f64) -> Vec<f64> {
        self.steps().into_iter().map(|k| k as f64 * delta).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct PatternSolution {
    pub pattern: SamplingPattern,
    /// `N_i` inputs; empty when infeasible.
    pub u_seq: Vec<DVector<f64>>,
    /// `N_i + 1` states from `x(t_k)` to the end of the horizon; empty when infeasible.
    pub x_seq: Vec<DVector<f64>>,
    /// Optimal cost, `+∞` when infeasible.
    pub j_star: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub terminal_multiplier: f64,
}

impl PatternSolution {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn cost(&self) -> Option<f64> {
        self.is_feasible().then_some(self.j_star)
    }

    /// The input that would be transmitted, `u*_i(t_k)`.
    pub fn first_input(&self) -> Option<&DVector<f64>> {
        self.u_seq.first()
    }
}

/// x0-independent condensed matrices for one pattern.
///
/// With `z` the stacked inputs: `x_j = S_x[j]·x0 + S_u[j]·z` and the cost is
/// `½zᵀHz + (G x0)ᵀz + x0ᵀC x0`.
#[derive(Debug, Clone)]
pub struct CondensedPattern {
    pub pattern: SamplingPattern,
    pub hessian: DMatrix<f64>,
    pub linear: DMatrix<f64>,
    pub constant: DMatrix<f64>,
    pub state_from_x0: Vec<DMatrix<f64>>,
    pub state_from_z: Vec<DMatrix<f64>>,
    /// `Ψᵀ P_f Ψ` with `Ψ = S_u[N]`.
    pub terminal_quad: DMatrix<f64>,
    /// `Ψᵀ P_f Φ_N`.
    pub terminal_cross: DMatrix<f64>,
    /// `Φ_Nᵀ P_f Φ_N`.
    pub terminal_const: DMatrix<f64>,
    pub epsilon: f64,
    pub u_max: DVector<f64>,
}

impl CondensedPattern {
    pub fn new(table: &DiscretizationTable, terminal: &TerminalIngredients, pattern: SamplingPattern) -> Result<Self> {
        let (n, m) = (table.state_dim(), table.input_dim());
        terminal.check_dims(n, m)?;
        if pattern.index() > table.patterns() || pattern.horizon_steps != table.horizon_steps() {
            return Err(Error::invalid(format!(
                "pattern {} is not covered by the table (M = {}, N_p = {})",
                pattern.index(),
                table.patterns(),
                table.horizon_steps()
            )));
        }
        let steps = pattern.steps();
        let len = steps.len();
        let dim = m * len;

        let mut sx = Vec::with_capacity(len + 1);
        let mut su = Vec::with_capacity(len + 1);
        sx.push(DMatrix::<f64>::identity(n, n));
        su.push(DMatrix::<f64>::zeros(n, dim));
        for (j, &mult) in steps.iter().enumerate() {
            let a = table.a(mult);
            let b = table.b(mult);
            let next_x = a * &sx[j];
            let mut next_u = a * &su[j];
            let mut col = next_u.view_mut((0, j * m), (n, m));
            col += b;
            sx.push(next_x);
            su.push(next_u);
        }

        let mut hessian = DMatrix::<f64>::zeros(dim, dim);
        let mut linear = DMatrix::<f64>::zeros(dim, n);
        let mut constant = DMatrix::<f64>::zeros(n, n);
        for (j, &mult) in steps.iter().enumerate() {
            let gamma = table.gamma(mult);
            // [x_j; u_j] = [S_x; 0] x0 + [S_u; E_j] z
            let mut d = DMatrix::<f64>::zeros(n + m, dim);
            d.view_mut((0, 0), (n, dim)).copy_from(&su[j]);
            d.view_mut((n, j * m), (m, m)).fill_with_identity();
            let mut c = DMatrix::<f64>::zeros(n + m, n);
            c.view_mut((0, 0), (n, n)).copy_from(&sx[j]);
            let gd = gamma * &d;
            hessian += d.transpose() * &gd * 2.0;
            linear += gd.transpose() * &c * 2.0;
            constant += c.transpose() * gamma * &c;
        }
        let psi = &su[len];
        let phi = &sx[len];
        let terminal_quad = symmetrize(&(psi.transpose() * &terminal.p_f * psi));
        let terminal_cross = psi.transpose() * &terminal.p_f * phi;
        let terminal_const = symmetrize(&(phi.transpose() * &terminal.p_f * phi));
        hessian += &terminal_quad * 2.0;
        linear += &terminal_cross * 2.0;
        constant += &terminal_const;

        Ok(Self {
            pattern,
            hessian: symmetrize(&hessian),
            linear,
            constant: symmetrize(&constant),
            state_from_x0: sx,
            state_from_z: su,
            terminal_quad,
            terminal_cross,
            terminal_const,
            epsilon: terminal.epsilon,
            u_max: table.system().u_max.clone(),
        })
    }

    pub fn instantiate(&self, x0: &DVector<f64>) -> Result<OcpData> {
        let n = self.constant.nrows();
        if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("x0 must be a finite {n}-vector")));
        }
        let m = self.u_max.len();
        let len = self.pattern.len();
        let hi = DVector::from_fn(m * len, |r, _| self.u_max[r % m]);
        Ok(OcpData {
            pattern: self.pattern.clone(),
            x0: x0.clone(),
            hessian: self.hessian.clone(),
            gradient: &self.linear * x0,
            constant: quad_form(&self.constant, x0),
            lower: -&hi,
            upper: hi,
            terminal: QuadraticConstraint {
                t: self.terminal_quad.clone(),
                lin: &self.terminal_cross * x0,
                offset: quad_form(&self.terminal_const, x0) - self.epsilon,
            },
            state_from_x0: self.state_from_x0.clone(),
            state_from_z: self.state_from_z.clone(),
            input_dim: m,
        })
    }
}

/// A condensed instance of the pattern-`i` problem at a given state.
#[derive(Debug, Clone)]
pub struct OcpData {
    pub pattern: SamplingPattern,
    pub x0: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// `x_Nᵀ P_f x_N − ε` as a function of `z`.
    pub terminal: QuadraticConstraint,
    state_from_x0: Vec<DMatrix<f64>>,
    state_from_z: Vec<DMatrix<f64>>,
    input_dim: usize,
}

impl OcpData {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * quad_form(&self.hessian, z) + self.gradient.dot(z) + self.constant
    }

    pub fn states(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        self.state_from_x0
            .iter()
            .zip(&self.state_from_z)
            .map(|(sx, su)| sx * &self.x0 + su * z)
            .collect()
    }

    pub fn split_inputs(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.input_dim;
        (0..z.len() / m).map(|j| z.rows(j * m, m).into_owned()).collect()
    }

    pub fn stack_inputs(&self, u_seq: &[DVector<f64>]) -> DVector<f64> {
        let m = self.input_dim;
        let mut z = DVector::zeros(m * u_seq.len());
        for (j, u) in u_seq.iter().enumerate() {
            z.rows_mut(j * m, m).copy_from(u);
        }
        z
    }
}

pub fn build_ocp(
    table: &DiscretizationTable,
    terminal: &TerminalIngredients,
    pattern: &SamplingPattern,
    x0: &DVector<f64>,
) -> Result<OcpData> {
    CondensedPattern::new(table, terminal, pattern.clone())?.instantiate(x0)
}

pub fn solve_ocp(data: &OcpData) -> Result<PatternSolution> {
    match solve_qcqp(&data.hessian, &data.gradient, &data.lower, &data.upper, &data.terminal)? {
        QcqpOutcome::Optimal {
            z,
            lambda,
            kkt_residual,
            ..
        } => Ok(PatternSolution {
            pattern: data.pattern.clone(),
            j_star: data.objective(&z),
            x_seq: data.states(&z),
            u_seq: data.split_inputs(&z),
            status: SolveStatus::Optimal,
            kkt_residual,
            terminal_multiplier: lambda,
        }),
        QcqpOutcome::Infeasible { .. } => Ok(PatternSolution {
            pattern: data.pattern.clone(),
            u_seq: Vec::new(),
            x_seq: Vec::new(),
            j_star: f64::INFINITY,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::NAN,
            terminal_multiplier: f64::NAN,
        }),
    }
}

/// Rolls the pattern forward with the tabulated discretizations and sums
/// `F` terms plus the terminal cost. Independent of the condensed matrices.
pub fn evaluate_cost(
    table: &DiscretizationTable,
    terminal_weight: &DMatrix<f64>,
    pattern: &SamplingPattern,
    x0: &DVector<f64>,
    u_seq: &[DVector<f64>],
) -> Result<f64> {
    let (x_seq, cost) = rollout(table, pattern, x0, u_seq)?;
    let last = x_seq.last().expect("rollout yields at least one state");
    Ok(cost + quad_form(terminal_weight, last))
}

/// State sequence and accumulated stage cost (without terminal term).
pub fn rollout(
    table: &DiscretizationTable,
    pattern: &SamplingPattern,
    x0: &DVector<f64>,
    u_seq: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, f64)> {
    if u_seq.len() != pattern.len() {
        return Err(Error::invalid(format!(
            "pattern {} expects {} inputs, got {}",
            pattern.index(),
            pattern.len(),
            u_seq.len()
        )));
    }
    if x0.len() != table.state_dim() || u_seq.iter().any(|u| u.len() != table.input_dim()) {
        return Err(Error::invalid("state or input dimension mismatch"));
    }
    let mut x = x0.clone();
    let mut states = vec![x.clone()];
    let mut cost = 0.0;
    for (mult, u) in pattern.steps().into_iter().zip(u_seq) {
        cost += stage_cost(&x, u, table.gamma(mult))?;
        x = table.step(mult, &x, u);
        states.push(x.clone());
    }
    Ok((states, cost))
}

/// Condensed problems for patterns `1..=M`, built once per configuration.
#[derive(Debug, Clone)]
pub struct PatternBank {
    patterns: Vec<CondensedPattern>,
}

impl PatternBank {
    pub fn new(table: &DiscretizationTable, terminal: &TerminalIngredients) -> Result<Self> {
        let patterns = (1..=table.patterns())
            .map(|i| CondensedPattern::new(table, terminal, SamplingPattern::new(i, table.horizon_steps())?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patterns })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn get(&self, index: usize) -> &CondensedPattern {
        &self.patterns[index - 1]
    }

    pub fn solve(&self, index: usize, x0: &DVector<f64>) -> Result<PatternSolution> {
        solve_ocp(&self.get(index).instantiate(x0)?)
    }

    /// Solves every pattern at `x0`, in parallel; results are in pattern order.
    pub fn solve_all(&self, x0: &DVector<f64>) -> Result<Vec<PatternSolution>> {
        self.patterns
            .par_iter()
            .map(|p| solve_ocp(&p.instantiate(x0)?))
            .collect()
    }
}

pub fn solve_all_patterns(
    table: &DiscretizationTable,
    terminal: &TerminalIngredients,
    x0: &DVector<f64>,
) -> Result<Vec<PatternSolution>> {
    PatternBank::new(table, terminal)?.solve_all(x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{CostWeights, LinearSystem};
    use crate::terminal::synthesize_terminal;

    fn integrator_setup(delta: f64, n_p: usize, m: usize) -> (DiscretizationTable, TerminalIngredients) {
        let sys = LinearSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let table = DiscretizationTable::new(&sys, &w, delta, n_p, m).unwrap();
        let term = synthesize_terminal(&table).unwrap();
        (table, term)
    }

    #[test]
    fn pattern_bookkeeping() {
        let p = SamplingPattern::new(3, 10).unwrap();
        assert_eq!(p.len(), 8);
        assert_eq!(p.steps().iter().sum::<usize>(), 10);
        assert_eq!(p.steps()[0], 3);
        assert!(p.steps()[1..].iter().all(|&s| s == 1));
        assert!(SamplingPattern::new(0, 10).is_err());
        assert!(SamplingPattern::new(10, 10).is_err());
    }

    #[test]
    fn dimensions_for_short_horizon() {
        let (table, term) = integrator_setup(1.0, 2, 1);
        let data = build_ocp(&table, &term, &SamplingPattern::new(1, 2).unwrap(), &DVector::from_element(1, 0.3)).unwrap();
        assert_eq!(data.hessian.shape(), (2, 2));
        assert_eq!(data.hessian, data.hessian.transpose());
        assert!(crate::linalg::min_eigenvalue(&data.hessian) > 0.0);
    }

    #[test]
    fn origin_is_free() {
        let (table, term) = integrator_setup(0.5, 4, 2);
        let x0 = DVector::zeros(1);
        let data = build_ocp(&table, &term, &SamplingPattern::new(2, 4).unwrap(), &x0).unwrap();
        assert_eq!(data.gradient.amax(), 0.0);
        let sol = solve_ocp(&data).unwrap();
        assert!(sol.is_feasible());
        assert_eq!(sol.j_star, 0.0);
        assert!(sol.u_seq.iter().all(|u| u.amax() == 0.0));
    }

    #[test]
    fn integrator_symbolic_assembly() {
        // δ = 1, N_p = 2, pattern 1: Γ = [[1, 1/2], [1/2, 4/3]], A = 1, B = 1.
        // x1 = x0 + u0, x2 = x0 + u0 + u1.
        let (table, term) = integrator_setup(1.0, 2, 1);
        let p = term.p_f[(0, 0)];
        let x0 = 0.7;
        let data = build_ocp(&table, &term, &SamplingPattern::new(1, 2).unwrap(), &DVector::from_element(1, x0)).unwrap();
        // J = x0² + x0 u0 + 4/3 u0² + (x0+u0)² + (x0+u0) u1 + 4/3 u1² + p (x0+u0+u1)²
        let h = [
            [2.0 * (4.0 / 3.0 + 1.0 + p), 1.0 + 2.0 * p],
            [1.0 + 2.0 * p, 2.0 * (4.0 / 3.0 + p)],
        ];
        let g = [x0 + 2.0 * x0 + 2.0 * p * x0, x0 + 2.0 * p * x0];
        let c = x0 * x0 * (2.0 + p);
        for i in 0..2 {
            for j in 0..2 {
                assert!((data.hessian[(i, j)] - h[i][j]).abs() < 1e-11, "H[{i}{j}]");
            }
            assert!((data.gradient[i] - g[i]).abs() < 1e-11, "g[{i}]");
        }
        assert!((data.constant - c).abs() < 1e-11);
    }

    #[test]
    fn objective_matches_rollout() {
        let (table, term) = integrator_setup(0.25, 6, 3);
        let pattern = SamplingPattern::new(3, 6).unwrap();
        let x0 = DVector::from_element(1, -1.3);
        let data = build_ocp(&table, &term, &pattern, &x0).unwrap();
        let u: Vec<DVector<f64>> = (0..pattern.len()).map(|j| DVector::from_element(1, 0.1 * j as f64 - 0.2)).collect();
        let direct = evaluate_cost(&table, &term.p_f, &pattern, &x0, &u).unwrap();
        let condensed = data.objective(&data.stack_inputs(&u));
        assert!((direct - condensed).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn evaluate_cost_rejects_wrong_length() {
        let (table, term) = integrator_setup(0.25, 6, 3);
        let pattern = SamplingPattern::new(2, 6).unwrap();
        let u = vec![DVector::zeros(1); 3];
        assert!(evaluate_cost(&table, &term.p_f, &pattern, &DVector::zeros(1), &u).is_err());
    }

    #[test]
    fn far_state_is_infeasible() {
        // 4 steps of δ = 0.25 with |u| ≤ 1 move the integrator by at most 1
        let (table, term) = integrator_setup(0.25, 4, 2);
        let sol = solve_ocp(
            &build_ocp(&table, &term, &SamplingPattern::new(1, 4).unwrap(), &DVector::from_element(1, 5.0)).unwrap(),
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.cost().is_none());
    }

    #[test]
    fn costs_increase_with_pattern() {
        let (table, term) = integrator_setup(0.25, 8, 4);
        let sols = solve_all_patterns(&table, &term, &DVector::from_element(1, 0.8)).unwrap();
        assert_eq!(sols.len(), 4);
        for w in sols.windows(2) {
            assert!(w[0].j_star <= w[1].j_star + 1e-9);
        }
    }
}
