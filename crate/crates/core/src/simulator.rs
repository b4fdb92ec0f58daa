//! Closed-loop simulation of the self-triggered scheme and of the periodic
//! baseline. The plant is propagated with exact discretizations, so the
//! recorded states are the true sampled trajectory under zero-order hold.

use nalgebra::DVector;

use crate::discretization::{
    discretize, stage_cost, stage_cost_kernel, CostWeights, DiscretizationTable, LinearSystem,
};
use crate::error::{Error, Result};
use crate::ocp::{PatternBank, PatternSolution};
use crate::terminal::{synthesize_terminal, TerminalIngredients};
use crate::trigger::{check_conditions, initialize, select_pattern, Conditions, TriggerParams, TriggerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SelfTriggered,
    Periodic,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::SelfTriggered => "self-triggered",
            Mode::Periodic => "periodic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub sys: LinearSystem,
    pub weights: CostWeights,
    pub trigger: TriggerParams,
    pub delta: f64,
    pub horizon_steps: usize,
    pub patterns: usize,
    pub x0: DVector<f64>,
    pub t_end: f64,
    /// Trace grid spacing; must divide δ. Defaults to δ.
    pub sample_resolution: Option<f64>,
    /// Precomputed terminal ingredients; synthesized when absent.
    pub terminal: Option<TerminalIngredients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub k: usize,
    pub t: f64,
    pub pattern: usize,
    pub interval: f64,
    /// `J*_i(x(t_k))` for each pattern; `None` when infeasible or not solved.
    pub costs: Vec<Option<f64>>,
    /// Trigger conditions per pattern; `None` when not evaluated.
    pub conditions: Vec<Option<Conditions>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub mode: Mode,
    pub delta: f64,
    pub patterns: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub t_end: f64,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub transmissions: usize,
    /// `∫ xᵀQx + uᵀRu dt` over `[0, t_end]`.
    pub cumulative_stage_cost: f64,
}

impl SimulationTrace {
    /// Earliest sample time after which every sample satisfies `‖x‖ < threshold`.
    pub fn settling_time(&self, threshold: f64) -> Option<f64> {
        let mut settle = None;
        for s in self.samples.iter().rev() {
            if s.x.norm() < threshold {
                settle = Some(s.t);
            } else {
                break;
            }
        }
        settle
    }

    pub fn max_norm_after(&self, t: f64) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.t >= t - 1e-12)
            .map(|s| s.x.norm())
            .fold(0.0, f64::max)
    }

    /// Mean transmission interval over events with `t_k ∈ [from, to)`.
    pub fn mean_interval(&self, from: f64, to: f64) -> Option<f64> {
        let picked: Vec<f64> = self
            .events
            .iter()
            .filter(|e| e.t >= from - 1e-12 && e.t < to - 1e-12)
            .map(|e| e.interval)
            .collect();
        (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

/// What the observer sees at every event, before the plant moves.
pub struct StepRecord<'a> {
    pub k: usize,
    pub t: f64,
    pub x: &'a DVector<f64>,
    /// Pattern-1 only at `k = 0` or in periodic mode, otherwise all patterns.
    pub solutions: &'a [PatternSolution],
    pub selected: usize,
    pub state_before: Option<&'a TriggerState>,
    pub state_after: &'a TriggerState,
}

pub struct Simulator {
    config: SimulationConfig,
    table: DiscretizationTable,
    terminal: TerminalIngredients,
    bank: PatternBank,
    samples_per_step: usize,
    /// Exact `(A_h, B_h)` for `h = j·resolution`, `j = 1..=M·samples_per_step`.
    sub_steps: Vec<(nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>)>,
}

impl Simulator {
    pub fn new(config: SimulationConfig) -> Result<Self> {
        if !(config.t_end.is_finite() && config.t_end > 0.0) {
            return Err(Error::invalid(format!("t_end must be positive, got {}", config.t_end)));
        }
        if config.x0.len() != config.sys.state_dim() || config.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x0 must be a finite vector of the state dimension"));
        }
        let resolution = config.sample_resolution.unwrap_or(config.delta);
        if resolution.is_nan() || resolution <= 0.0 || resolution > config.delta * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "sample resolution must lie in (0, δ], got {resolution}"
            )));
        }
        let ratio = config.delta / resolution;
        let samples_per_step = ratio.round() as usize;
        if (ratio - samples_per_step as f64).abs() > 1e-9 * ratio {
            return Err(Error::invalid(format!(
                "sample resolution {resolution} must divide δ = {}",
                config.delta
            )));
        }
        let table = DiscretizationTable::new(
            &config.sys,
            &config.weights,
            config.delta,
            config.horizon_steps,
            config.patterns,
        )?;
        let terminal = match &config.terminal {
            Some(t) => {
                t.check_dims(table.state_dim(), table.input_dim())?;
                t.clone()
            }
            None => synthesize_terminal(&table)?,
        };
        let bank = PatternBank::new(&table, &terminal)?;
        let sub_steps = if samples_per_step == 1 {
            (1..=config.patterns)
                .map(|i| (table.a(i).clone(), table.b(i).clone()))
                .collect()
        } else {
            let h = config.delta / samples_per_step as f64;
            (1..=config.patterns * samples_per_step)
                .map(|j| discretize(&config.sys, j as f64 * h))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            config,
            table,
            terminal,
            bank,
            samples_per_step,
            sub_steps,
        })
    }

    pub fn table(&self) -> &DiscretizationTable {
        &self.table
    }

    pub fn terminal(&self) -> &TerminalIngredients {
        &self.terminal
    }

    pub fn bank(&self) -> &PatternBank {
        &self.bank
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn run(&self, mode: Mode) -> Result<SimulationTrace> {
        self.run_observed(mode, |_| Ok(()))
    }

    /// Runs the closed loop, calling `observer` at every event.
    pub fn run_observed<F>(&self, mode: Mode, mut observer: F) -> Result<SimulationTrace>
    where
        F: FnMut(&StepRecord<'_>) -> Result<()>,
    {
        let cfg = &self.config;
        let delta = cfg.delta;
        let big_m = cfg.patterns;
        let end_steps = (cfg.t_end / delta - 1e-9).ceil().max(1.0) as usize;
        let spr = self.samples_per_step;
        let resolution = delta / spr as f64;

        let mut x = cfg.x0.clone();
        let mut steps_elapsed = 0usize;
        let mut state: Option<TriggerState> = None;
        let mut samples = Vec::new();
        let mut events = Vec::new();
        let mut cumulative = 0.0;
        let mut last_u = DVector::zeros(cfg.sys.input_dim());

        while steps_elapsed < end_steps {
            let k = events.len();
            let t = steps_elapsed as f64 * delta;
            let first_event = state.is_none();
            let solutions = if first_event || mode == Mode::Periodic {
                vec![self.bank.solve(1, &x)?]
            } else {
                self.bank.solve_all(&x)?
            };

            let (selected, next_state, conditions) = match (&state, mode) {
                (None, _) => {
                    let (i, st) = initialize(&self.table, &x, &solutions[0])?;
                    (i, st, vec![None; big_m])
                }
                (Some(prev), Mode::Periodic) => {
                    if !solutions[0].is_feasible() {
                        return Err(Error::ContractViolation {
                            k,
                            t,
                            detail: "pattern 1 infeasible in periodic mode".into(),
                        });
                    }
                    let st = TriggerState {
                        k: prev.k + 1,
                        prev_pattern: 1,
                        prev_cost: solutions[0].j_star,
                        prev_decrement: stage_cost(&x, &solutions[0].u_seq[0], self.table.gamma(1))?,
                    };
                    (1, st, vec![None; big_m])
                }
                (Some(prev), Mode::SelfTriggered) => {
                    let conds: Vec<Option<Conditions>> = (1..=solutions.len())
                        .map(|i| Some(check_conditions(i, &solutions, prev, &cfg.trigger)))
                        .collect();
                    let (i, st) = select_pattern(&self.table, &x, t, &solutions, prev, &cfg.trigger)?;
                    (i, st, conds)
                }
            };

            observer(&StepRecord {
                k,
                t,
                x: &x,
                solutions: &solutions,
                selected,
                state_before: state.as_ref(),
                state_after: &next_state,
            })?;

            let mut costs = vec![None; big_m];
            for sol in &solutions {
                costs[sol.pattern.index() - 1] = sol.cost();
            }
            events.push(Event {
                k,
                t,
                pattern: selected,
                interval: selected as f64 * delta,
                costs,
                conditions,
            });

            let u = solutions[selected - 1].u_seq[0].clone();
            for j in 0..selected * spr {
                let xs = if j == 0 {
                    x.clone()
                } else {
                    let (a, b) = &self.sub_steps[j - 1];
                    a * &x + b * &u
                };
                samples.push(Sample {
                    t: (steps_elapsed * spr + j) as f64 * resolution,
                    x: xs,
                    u: u.clone(),
                });
            }

            let next_steps = steps_elapsed + selected;
            if next_steps as f64 * delta <= cfg.t_end * (1.0 + 1e-12) {
                cumulative += stage_cost(&x, &u, self.table.gamma(selected))?;
            } else {
                let partial = cfg.t_end - t;
                if partial > 0.0 {
                    let gamma = stage_cost_kernel(&cfg.sys, &cfg.weights, partial)?;
                    cumulative += stage_cost(&x, &u, &gamma)?;
                }
            }

            x = self.table.step(selected, &x, &u);
            steps_elapsed = next_steps;
            state = Some(next_state);
            last_u = u;
        }

        samples.push(Sample {
            t: (steps_elapsed * spr) as f64 * resolution,
            x,
            u: last_u,
        });

        Ok(SimulationTrace {
            mode,
            delta,
            patterns: big_m,
            state_dim: cfg.sys.state_dim(),
            input_dim: cfg.sys.input_dim(),
            t_end: cfg.t_end,
            transmissions: events.len(),
            samples,
            events,
            cumulative_stage_cost: cumulative,
        })
    }
}

pub fn simulate(config: SimulationConfig) -> Result<SimulationTrace> {
    Simulator::new(config)?.run(Mode::SelfTriggered)
}

pub fn simulate_periodic(config: SimulationConfig) -> Result<SimulationTrace> {
    Simulator::new(config)?.run(Mode::Periodic)
}
