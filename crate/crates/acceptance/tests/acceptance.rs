//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process exits non-zero
//! if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stmpc::cli::{execute, Cli, Outcome};
use stmpc::discretization::{discretize, stage_cost_kernel, CostWeights, DiscretizationTable, LinearSystem};
use stmpc::invariants::InvariantMonitor;
use stmpc::ocp::{build_ocp, solve_ocp, SamplingPattern};
use stmpc::oracle::{corrected_trapezoid_kernel, integrate_lti, trapezoid_kernel};
use stmpc::scenario::{random_scenario, spring_mass};
use stmpc::simulator::{Mode, SimulationConfig, SimulationTrace, Simulator};
use stmpc::terminal::{sample_terminal_conditions, synthesize_terminal, verify_terminal, TerminalIngredients};
use stmpc::trigger::TriggerParams;
use stmpc_acceptance::IntegratorGrid;

const KERNEL_TOL: f64 = 1e-9;
const KERNEL_PANELS: usize = 10_000;
const KERNEL_BUDGET: Duration = Duration::from_secs(1);
const DISCRETIZATION_TOL: f64 = 1e-8;
const ODE_TOL: f64 = 1e-13;
const LYAPUNOV_TOL: f64 = 1e-10;
const SAMPLED_SLACK: f64 = 1e-9;
const SAMPLED_POINTS: usize = 1000;
const BRUTE_STEP: f64 = 1e-3;
const BRUTE_TOL: f64 = 1e-5;
const BRUTE_CASES: usize = 50;
const BRUTE_BUDGET: Duration = Duration::from_secs(10);
const INVARIANT_SLACK: f64 = 1e-6;
const RANDOM_SYSTEMS: usize = 100;
const CONVERGENCE_NORM: f64 = 0.05;
const CONVERGENCE_FROM: f64 = 35.0;
const PERIODIC_TRANSMISSIONS: usize = 400;
const COMPARE_BUDGET: Duration = Duration::from_secs(300);
const HORIZONS: [f64; 4] = [0.1, 0.5, 1.0, 3.0];

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn spring_mass_system() -> (LinearSystem, CostWeights) {
    let sys = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DVector::from_element(1, 8.0),
    )
    .unwrap();
    let weights = CostWeights::new(DMatrix::identity(2, 2), DMatrix::from_element(1, 1, 0.5)).unwrap();
    (sys, weights)
}

fn spring_mass_config(beta: f64) -> SimulationConfig {
    let mut cfg = spring_mass();
    cfg.trigger.beta = beta;
    cfg.simulation_config().unwrap()
}

fn kernel_oracle() -> Verdict {
    let (sys, w) = spring_mass_system();
    let mut worst: f64 = 0.0;
    let mut plain_worst: f64 = 0.0;
    let mut elapsed = Duration::ZERO;
    for h in HORIZONS {
        let start = Instant::now();
        let gamma = stage_cost_kernel(&sys, &w, h).unwrap();
        elapsed += start.elapsed();
        let oracle = corrected_trapezoid_kernel(&sys, &w, h, KERNEL_PANELS);
        worst = worst.max((&gamma - &oracle).amax());
        plain_worst = plain_worst.max((&gamma - trapezoid_kernel(&sys, &w, h, KERNEL_PANELS)).amax());
    }
    verdict(
        worst <= KERNEL_TOL && elapsed < KERNEL_BUDGET,
        format!(
            "max |Γ − endpoint-corrected trapezoid| = {worst:.3e} (tol {KERNEL_TOL:.0e}); \
             plain trapezoid differs by {plain_worst:.3e}; kernels computed in {:.3} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn discretization_oracle() -> Verdict {
    let (sys, _) = spring_mass_system();
    let mut worst: f64 = 0.0;
    for h in HORIZONS {
        let (a_h, b_h) = discretize(&sys, h).unwrap();
        let mut reference = DMatrix::zeros(2, 3);
        for j in 0..2 {
            let x0 = DVector::from_fn(2, |r, _| if r == j { 1.0 } else { 0.0 });
            let col = integrate_lti(&sys.a, &sys.b, &x0, &DVector::zeros(1), h, ODE_TOL);
            reference.set_column(j, &col);
        }
        let col = integrate_lti(&sys.a, &sys.b, &DVector::zeros(2), &DVector::from_element(1, 1.0), h, ODE_TOL);
        reference.set_column(2, &col);
        let mut ours = DMatrix::zeros(2, 3);
        ours.view_mut((0, 0), (2, 2)).copy_from(&a_h);
        ours.view_mut((0, 2), (2, 1)).copy_from(&b_h);
        worst = worst.max((&ours - &reference).amax() / reference.amax());
    }
    verdict(
        worst <= DISCRETIZATION_TOL,
        format!("max relative deviation from order-8 adaptive integration = {worst:.3e} (tol {DISCRETIZATION_TOL:.0e})"),
    )
}

fn terminal_verification() -> Verdict {
    let cfg = spring_mass_config(1.0);
    let table = DiscretizationTable::new(&cfg.sys, &cfg.weights, cfg.delta, cfg.horizon_steps, cfg.patterns).unwrap();
    let ing = synthesize_terminal(&table).unwrap();
    let report = verify_terminal(&ing, &table);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sampled = sample_terminal_conditions(&ing, &table, &mut rng, SAMPLED_POINTS).unwrap();
    let passed = report.passed
        && report.lyapunov_max_eig <= LYAPUNOV_TOL
        && report.input_margin >= -SAMPLED_SLACK
        && sampled.worst_decrease <= SAMPLED_SLACK
        && sampled.worst_input_excess <= SAMPLED_SLACK;
    verdict(
        passed,
        format!(
            "Lyapunov max eig {:.3e} (tol {LYAPUNOV_TOL:.0e}), relative input margin {:.3e}, \
             sampled decrease residual {:.3e} and input excess {:.3e} over {} points (slack {SAMPLED_SLACK:.0e})",
            report.lyapunov_max_eig,
            report.input_margin,
            sampled.worst_decrease,
            sampled.worst_input_excess,
            sampled.points
        ),
    )
}

fn brute_force_equivalence() -> Verdict {
    let start = Instant::now();
    let delta = 0.5;
    let sys = LinearSystem::new(
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, 1.0),
    )
    .unwrap();
    let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    let mut disagreements = 0usize;
    let mut cases = Vec::new();
    // N_p = 2 admits only pattern 1 since the pattern count stays below N_p
    for (horizon, patterns) in [(2usize, 1usize), (3, 2)] {
        let table = DiscretizationTable::new(&sys, &w, delta, horizon, patterns).unwrap();
        let terminal = synthesize_terminal(&table).unwrap();
        for pattern in 1..=patterns {
            cases.push((table.clone(), terminal.clone(), horizon, pattern));
        }
    }
    let mut per_case = Vec::new();
    for (table, terminal, horizon, pattern) in &cases {
        let oracle = IntegratorGrid {
            delta,
            p_f: terminal.p_f[(0, 0)],
            epsilon: terminal.epsilon,
            step: BRUTE_STEP,
        };
        let p = SamplingPattern::new(*pattern, *horizon).unwrap();
        let mut feasible = 0usize;
        let mut draws = 0usize;
        while feasible < BRUTE_CASES && draws < 10 * BRUTE_CASES {
            draws += 1;
            let x0: f64 = rng.gen_range(-2.0..=2.0);
            let sol = solve_ocp(&build_ocp(table, terminal, &p, &DVector::from_element(1, x0)).unwrap()).unwrap();
            let grid = oracle.minimum(*pattern, p.len(), x0);
            match (sol.cost(), grid) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a - b).abs());
                    feasible += 1;
                }
                (None, None) => {}
                _ => disagreements += 1,
            }
        }
        compared += feasible;
        per_case.push(format!("N_p={horizon},i={pattern}: {feasible}/{draws}"));
    }
    let elapsed = start.elapsed();
    let enough = per_case.len() == cases.len() && compared >= BRUTE_CASES * cases.len();
    verdict(
        worst <= BRUTE_TOL && disagreements == 0 && enough && elapsed < BRUTE_BUDGET,
        format!(
            "max |J* − grid minimum| = {worst:.3e} (tol {BRUTE_TOL:.0e}) over {compared} feasible x0 [{}], \
             {disagreements} feasibility disagreements, {:.2} s",
            per_case.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

struct MonitoredRun {
    trace: SimulationTrace,
    report: stmpc::invariants::MonitorReport,
}

fn monitored_run(cfg: SimulationConfig) -> MonitoredRun {
    let sim = Simulator::new(cfg).unwrap();
    let mut monitor = InvariantMonitor::new(sim.table(), sim.terminal(), sim.config().trigger);
    let trace = sim.run_observed(Mode::SelfTriggered, |rec| monitor.observe(rec)).unwrap();
    MonitoredRun {
        trace,
        report: monitor.into_report(),
    }
}

fn cost_ordering(run: &MonitoredRun) -> Verdict {
    let r = &run.report;
    verdict(
        r.ordering_violations == 0 && r.ordering_worst <= INVARIANT_SLACK,
        format!(
            "{} violations over {} events, worst J*_a − J*_b (a < b) = {:.3e} (slack {INVARIANT_SLACK:.0e})",
            r.ordering_violations, r.events, r.ordering_worst
        ),
    )
}

fn shifted_candidate(run: &MonitoredRun) -> Verdict {
    let r = &run.report;
    verdict(
        r.shift_violations == 0 && r.shift_infeasible == 0 && r.shift_worst_gap <= INVARIANT_SLACK,
        format!(
            "{} bound violations, {} infeasible candidates over {} events, worst gap {:.3e} (slack {INVARIANT_SLACK:.0e})",
            r.shift_violations,
            r.shift_infeasible,
            r.events.saturating_sub(1),
            r.shift_worst_gap
        ),
    )
}

/// Pattern 1 must satisfy both conditions at every event after the first.
fn first_pattern_available(trace: &SimulationTrace) -> bool {
    trace.events.iter().skip(1).all(|e| e.conditions[0].is_some_and(|c| c.both()))
}

fn always_feasible() -> Verdict {
    let mut failures = Vec::new();
    for beta in [1.0, 10.0] {
        match Simulator::new(spring_mass_config(beta)).unwrap().run(Mode::SelfTriggered) {
            Ok(t) if first_pattern_available(&t) => {}
            Ok(_) => failures.push(format!("spring-mass β={beta}: pattern 1 unavailable")),
            Err(e) => failures.push(format!("spring-mass β={beta}: {e}")),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut events = 0usize;
    for idx in 0..RANDOM_SYSTEMS {
        let scenario = random_scenario(&mut rng).unwrap();
        let beta = [0.0, 0.5, 1.0, 10.0][idx % 4];
        let gamma = rng.gen_range(0.05..=1.0);
        let cfg = scenario.simulation_config(TriggerParams::new(beta, gamma).unwrap());
        match Simulator::new(cfg).unwrap().run(Mode::SelfTriggered) {
            Ok(t) if first_pattern_available(&t) => events += t.events.len(),
            Ok(_) => failures.push(format!("random system {idx}: pattern 1 unavailable")),
            Err(e) => failures.push(format!("random system {idx}: {e}")),
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "2 spring-mass runs and {RANDOM_SYSTEMS} random systems ({events} events): {}",
            if failures.is_empty() {
                "no contract violations, pattern 1 admissible at every event".to_string()
            } else {
                failures.join("; ")
            }
        ),
    )
}

fn convergence(run: &MonitoredRun) -> Verdict {
    let selected: Vec<f64> = run
        .trace
        .events
        .iter()
        .map(|e| e.costs[e.pattern - 1].expect("selected pattern is feasible"))
        .collect();
    let worst_rise = selected
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let fine = {
        let mut cfg = spring_mass_config(1.0);
        cfg.sample_resolution = Some(0.01);
        Simulator::new(cfg).unwrap().run(Mode::SelfTriggered).unwrap()
    };
    let tail = fine.max_norm_after(CONVERGENCE_FROM);
    verdict(
        worst_rise <= 0.0 && run.report.decrease_violations == 0 && tail <= CONVERGENCE_NORM,
        format!(
            "largest step change of the selected optimal cost {worst_rise:.3e}, \
             max |x(t)| for t ≥ {CONVERGENCE_FROM} = {tail:.3e} (bound {CONVERGENCE_NORM})"
        ),
    )
}

fn trade_off() -> Verdict {
    let start = Instant::now();
    let periodic_sim = Simulator::new(spring_mass_config(1.0)).unwrap();
    let terminal: TerminalIngredients = periodic_sim.terminal().clone();
    let periodic = periodic_sim.run(Mode::Periodic).unwrap();
    let run = |beta: f64| {
        let mut cfg = spring_mass_config(beta);
        cfg.terminal = Some(terminal.clone());
        Simulator::new(cfg).unwrap().run(Mode::SelfTriggered).unwrap()
    };
    let (b1, b10) = (run(1.0), run(10.0));
    let elapsed = start.elapsed();
    let counts_ok = b10.transmissions < b1.transmissions
        && b1.transmissions < periodic.transmissions
        && periodic.transmissions == PERIODIC_TRANSMISSIONS;
    let costs_ok = periodic.cumulative_stage_cost <= b1.cumulative_stage_cost
        && b1.cumulative_stage_cost <= b10.cumulative_stage_cost;
    let early = b10.mean_interval(0.0, 20.0).unwrap();
    let late = b10.mean_interval(20.0, 40.0).unwrap();
    verdict(
        counts_ok && costs_ok && late >= early && elapsed < COMPARE_BUDGET,
        format!(
            "transmissions β=10 / β=1 / periodic = {} / {} / {} (need strict decrease, periodic {PERIODIC_TRANSMISSIONS}); \
             cumulative cost periodic / β=1 / β=10 = {:.6} / {:.6} / {:.6}; \
             β=10 mean interval [0,20) {early:.4} vs [20,40) {late:.4}; {:.2} s",
            b10.transmissions,
            b1.transmissions,
            periodic.transmissions,
            periodic.cumulative_stage_cost,
            b1.cumulative_stage_cost,
            b10.cumulative_stage_cost,
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("spring_mass.toml");
    let mut cfg = spring_mass();
    cfg.seed = 17;
    std::fs::write(&config, cfg.to_toml_string().unwrap()).unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("trace{run}.csv"));
        let cli = <Cli as clap::Parser>::try_parse_from([
            "stmpc".as_ref(),
            "simulate".as_ref(),
            "--mode".as_ref(),
            "self-triggered".as_ref(),
            "--seed".as_ref(),
            "17".as_ref(),
            "--config".as_ref(),
            config.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ])
        .unwrap();
        let outcome = execute(&cli, &mut std::io::sink()).unwrap();
        assert_eq!(outcome, Outcome::Success);
        outputs.push(std::fs::read(&out).unwrap());
    }
    verdict(
        !outputs[0].is_empty() && outputs[0] == outputs[1],
        format!("two simulate runs produced {} and {} bytes, identical: {}", outputs[0].len(), outputs[1].len(), outputs[0] == outputs[1]),
    )
}

fn main() -> ExitCode {
    let spring = monitored_run(spring_mass_config(1.0));
    let criteria: Vec<Criterion<'_>> = vec![
        ("kernel oracle", Box::new(kernel_oracle)),
        ("discretization oracle", Box::new(discretization_oracle)),
        ("terminal verification", Box::new(terminal_verification)),
        ("brute-force OCP equivalence", Box::new(brute_force_equivalence)),
        ("optimal cost ordering", Box::new(|| cost_ordering(&spring))),
        ("shifted candidate decrease", Box::new(|| shifted_candidate(&spring))),
        ("pattern 1 always admissible", Box::new(always_feasible)),
        ("cost decrease and convergence", Box::new(|| convergence(&spring))),
        ("transmission/performance trade-off", Box::new(trade_off)),
        ("deterministic CLI traces", Box::new(determinism)),
    ];
    let mut failed = 0;
    println!("running {} acceptance criteria", criteria.len());
    for (idx, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        if !v.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {}",
            idx + 1,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
