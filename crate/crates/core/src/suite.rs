//! End-to-end invariant suite behind `stmpc verify`. Every check reports
//! its worst measured residual against a fixed tolerance.

use nalgebra::DVector;
use rand::Rng;

use crate::discretization::{discretize, matrix_exponential, stage_cost, DiscretizationTable};
use crate::error::Result;
use crate::invariants::InvariantMonitor;
use crate::linalg::{mat_rel_diff, min_eigenvalue, quad_form, rel_diff};
use crate::ocp::{evaluate_cost, SamplingPattern};
use crate::oracle::{corrected_trapezoid_kernel, integrate_lti, rk4_running_cost, taylor_exp};
use crate::simulator::{Mode, SimulationTrace, Simulator};
use crate::terminal::{gaussian, sample_terminal_conditions, verify_terminal};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &'static str, residual: f64, tolerance: f64) -> Self {
        Self {
            name,
            passed: residual <= tolerance,
            residual,
            tolerance,
            detail: String::new(),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {:<28} residual={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.residual,
            self.tolerance
        );
        if !self.detail.is_empty() {
            s.push_str("  ");
            s.push_str(&self.detail);
        }
        s
    }
}

fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * gaussian(rng))
}

fn oracle_checks<R: Rng>(table: &DiscretizationTable, rng: &mut R) -> Result<Vec<CheckResult>> {
    let sys = table.system();
    let weights = table.weights();
    let (n, m) = (table.state_dim(), table.input_dim());
    let delta = table.delta();
    let big_m = table.patterns();
    let mut out = Vec::new();

    // exponential against Taylor on a step with ‖At‖ ≤ 1
    let norm = sys.a.norm().max(1e-300);
    let t = delta.min(1.0 / norm);
    let exp_err = mat_rel_diff(&matrix_exponential(&sys.a, t)?, &taylor_exp(&sys.a, t));
    out.push(CheckResult::bound("matrix_exponential", exp_err, 1e-12));

    let mut disc_err = 0.0_f64;
    for mult in [1, big_m] {
        let h = mult as f64 * delta;
        let (a_h, b_h) = discretize(sys, h)?;
        for j in 0..n {
            let x0 = DVector::from_fn(n, |r, _| if r == j { 1.0 } else { 0.0 });
            let x = integrate_lti(&sys.a, &sys.b, &x0, &DVector::zeros(m), h, 1e-13);
            disc_err = disc_err.max((a_h.column(j) - &x).amax() / x.amax().max(1.0));
        }
        for j in 0..m {
            let u = DVector::from_fn(m, |r, _| if r == j { 1.0 } else { 0.0 });
            let x = integrate_lti(&sys.a, &sys.b, &DVector::zeros(n), &u, h, 1e-13);
            disc_err = disc_err.max((b_h.column(j) - &x).amax() / x.amax().max(1.0));
        }
    }
    out.push(CheckResult::bound("discretization_vs_ode", disc_err, 1e-8));

    let mut kernel_err = 0.0_f64;
    for mult in [1, big_m] {
        let oracle = corrected_trapezoid_kernel(sys, weights, mult as f64 * delta, 10_000);
        kernel_err = kernel_err.max(mat_rel_diff(table.gamma(mult), &oracle));
    }
    out.push(CheckResult::bound("kernel_vs_trapezoid", kernel_err, 1e-9));

    let mut semigroup = 0.0_f64;
    for mult in 2..=big_m {
        let a_comp = table.a(1) * table.a(mult - 1);
        let b_comp = table.a(1) * table.b(mult - 1) + table.b(1);
        semigroup = semigroup
            .max(mat_rel_diff(table.a(mult), &a_comp))
            .max(mat_rel_diff(table.b(mult), &b_comp));
    }
    out.push(CheckResult::bound("semigroup_identity", semigroup, 1e-10));

    let min_eig = (1..=big_m)
        .map(|i| min_eigenvalue(table.gamma(i)))
        .fold(f64::INFINITY, f64::min);
    out.push(
        CheckResult {
            name: "kernel_positive_definite",
            passed: min_eig > 1e-12,
            residual: -min_eig,
            tolerance: -1e-12,
            detail: String::new(),
        }
        .with_detail(format!("min eigenvalue {min_eig:.3e}")),
    );

    let mut split = 0.0_f64;
    for _ in 0..50 {
        let x = random_vec(rng, n, 1.0);
        let u = random_vec(rng, m, 1.0);
        let mult = rng.gen_range(2..=big_m.max(2)).min(big_m);
        if mult < 2 {
            break;
        }
        let whole = stage_cost(&x, &u, table.gamma(mult))?;
        let parts = stage_cost(&x, &u, table.gamma(1))? + stage_cost(&table.step(1, &x, &u), &u, table.gamma(mult - 1))?;
        split = split.max(rel_diff(whole, parts));
    }
    out.push(CheckResult::bound("cost_splitting", split, 1e-9));
    Ok(out)
}

fn ocp_checks<R: Rng>(sim: &Simulator, rng: &mut R) -> Result<Vec<CheckResult>> {
    let table = sim.table();
    let terminal = sim.terminal();
    let (n, m) = (table.state_dim(), table.input_dim());
    let x_scale = sim.config().x0.amax().max(0.1);
    let mut assembly = 0.0_f64;
    let mut continuous = 0.0_f64;
    for trial in 0..40 {
        let i = rng.gen_range(1..=table.patterns());
        let pattern = SamplingPattern::new(i, table.horizon_steps())?;
        let x0 = random_vec(rng, n, x_scale);
        let u_seq: Vec<DVector<f64>> = (0..pattern.len()).map(|_| random_vec(rng, m, 1.0)).collect();
        let data = sim.bank().get(i).instantiate(&x0)?;
        let reference = evaluate_cost(table, &terminal.p_f, &pattern, &x0, &u_seq)?;
        assembly = assembly.max(rel_diff(data.objective(&data.stack_inputs(&u_seq)), reference));

        if trial < 4 {
            let weights = table.weights();
            let mut x = x0.clone();
            let mut cost = 0.0;
            for (steps, u) in pattern.steps().into_iter().zip(&u_seq) {
                let h = steps as f64 * table.delta();
                let (x_next, c) = rk4_running_cost(table.system(), weights, &x, u, h, 200 * steps);
                cost += c;
                x = x_next;
            }
            let fine = cost + quad_form(&terminal.p_f, &x);
            continuous = continuous.max(rel_diff(fine, reference));
        }
    }
    Ok(vec![
        CheckResult::bound("condensed_assembly", assembly, 1e-9),
        CheckResult::bound("cost_vs_continuous", continuous, 1e-7),
    ])
}

/// Structural checks on a finished trace.
pub fn trace_checks(trace: &SimulationTrace) -> Vec<CheckResult> {
    let delta = trace.delta;
    let mut timing = 0.0_f64;
    for pair in trace.events.windows(2) {
        let expected = pair[0].t + pair[0].pattern as f64 * delta;
        timing = timing.max((pair[1].t - expected).abs());
        timing = timing.max((pair[0].interval - pair[0].pattern as f64 * delta).abs());
    }
    // u may only change at event times
    let mut hold_violations = 0usize;
    for pair in trace.samples.windows(2) {
        let at_event = trace.events.iter().any(|e| (e.t - pair[1].t).abs() < 1e-9 * delta);
        if !at_event && pair[0].u != pair[1].u && pair[1].t < trace.t_end - 1e-9 {
            hold_violations += 1;
        }
    }
    let counted = trace.events.iter().filter(|e| e.t < trace.t_end - 1e-12).count();
    vec![
        CheckResult::bound("event_timing", timing, 1e-9),
        CheckResult::bound("sample_and_hold", hold_violations as f64, 0.0),
        CheckResult::bound(
            "transmission_count",
            (counted as f64 - trace.transmissions as f64).abs(),
            0.0,
        ),
    ]
}

/// Runs the whole suite for one configured simulator.
pub fn run_suite<R: Rng>(sim: &Simulator, rng: &mut R) -> Result<Vec<CheckResult>> {
    let table = sim.table();
    let terminal = sim.terminal();
    let mut out = oracle_checks(table, rng)?;

    let report = verify_terminal(terminal, table);
    out.push(
        CheckResult {
            name: "terminal_lyapunov",
            passed: report.passed,
            residual: report.lyapunov_max_eig,
            tolerance: 1e-10,
            detail: String::new(),
        }
        .with_detail(format!(
            "input margin {:.3e}, closed-loop radius {:.6}",
            report.input_margin, report.closed_loop_radius
        )),
    );
    let sampled = sample_terminal_conditions(terminal, table, rng, 1000)?;
    out.push(CheckResult::bound("terminal_sampled_decrease", sampled.worst_decrease, 1e-9));
    out.push(CheckResult::bound(
        "terminal_sampled_inputs",
        sampled.worst_input_excess,
        1e-9,
    ));
    out.push(CheckResult::bound(
        "terminal_invariance",
        sampled.worst_invariance_excess,
        1e-9,
    ));

    out.extend(ocp_checks(sim, rng)?);

    let mut monitor = InvariantMonitor::new(table, terminal, sim.config().trigger);
    let mut segments: Vec<(DVector<f64>, DVector<f64>, usize)> = Vec::new();
    let trace = sim.run_observed(Mode::SelfTriggered, |rec| {
        segments.push((
            rec.x.clone(),
            rec.solutions[rec.selected - 1].u_seq[0].clone(),
            rec.selected,
        ));
        monitor.observe(rec)
    });
    let trace = match trace {
        Ok(t) => t,
        Err(e) => {
            out.push(CheckResult {
                name: "closed_loop_run",
                passed: false,
                residual: f64::INFINITY,
                tolerance: 0.0,
                detail: e.to_string(),
            });
            return Ok(out);
        }
    };
    let r = monitor.into_report();
    let events = format!("{} events", r.events);
    out.push(
        CheckResult::bound("cost_ordering", r.ordering_worst.max(0.0), 1e-6)
            .with_detail(format!("{} violations over {events}", r.ordering_violations)),
    );
    out.push(CheckResult {
        passed: r.nesting_violations == 0,
        ..CheckResult::bound("feasibility_nesting", r.nesting_worst, 1e-6)
    });
    out.push(CheckResult {
        passed: r.shift_violations == 0 && r.shift_infeasible == 0,
        ..CheckResult::bound("shifted_candidate", r.shift_worst_gap.max(0.0), 1e-6)
    }
    .with_detail(format!("{} infeasible candidates", r.shift_infeasible)));
    out.push(CheckResult::bound(
        "pattern1_availability",
        r.availability_violations as f64,
        0.0,
    ));
    out.push(CheckResult {
        passed: r.decrease_violations == 0,
        ..CheckResult::bound("cost_decrease", r.decrease_worst.max(0.0), 1e-6)
    });
    out.push(
        CheckResult {
            passed: r.solution_violations == 0 && r.worst_kkt <= 1e-8,
            ..CheckResult::bound("solution_invariants", r.worst_kkt, 1e-8)
        }
        .with_detail(format!("{} violating solutions", r.solution_violations)),
    );

    let sys = table.system();
    let mut propagation = 0.0_f64;
    for pair in segments.windows(2) {
        let (x, u, i) = &pair[0];
        let h = *i as f64 * table.delta();
        let reference = integrate_lti(&sys.a, &sys.b, x, u, h, 1e-13);
        propagation = propagation.max((&pair[1].0 - &reference).amax() / reference.amax().max(1.0));
    }
    out.push(CheckResult::bound("plant_propagation", propagation, 1e-8));
    out.extend(trace_checks(&trace));

    Ok(out)
}
