//! Ready-made experiment setups and a generator of random stabilizable
//! test systems.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::config::{
    CostSection, ExperimentConfig, HorizonSection, SimulationSection, SystemSection, TriggerSection,
};
use crate::discretization::{CostWeights, DiscretizationTable, LinearSystem};
use crate::error::{Error, Result};
use crate::ocp::PatternBank;
use crate::simulator::SimulationConfig;
use crate::terminal::{gaussian, synthesize_terminal, TerminalIngredients};
use crate::trigger::TriggerParams;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Mass on a spring (stiffness 2, unit mass) driven by a bounded force.
pub fn spring_mass() -> ExperimentConfig {
    ExperimentConfig {
        seed: 0,
        terminal_file: None,
        system: SystemSection {
            a: vec![vec![0.0, 1.0], vec![-2.0, 0.0]],
            b: vec![vec![0.0], vec![1.0]],
            u_max: vec![8.0],
        },
        cost: CostSection {
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![0.5]],
        },
        horizon: HorizonSection {
            delta: 0.1,
            n_p: 80,
            patterns: 30,
        },
        trigger: TriggerSection { beta: 1.0, gamma: 0.5 },
        simulation: SimulationSection {
            x0: vec![2.5, 0.0],
            t_end: 40.0,
            sample_resolution: None,
        },
        output: None,
        terminal: None,
    }
}

/// Scalar integrator with unit weights and `|u| ≤ 1`.
pub fn integrator() -> ExperimentConfig {
    ExperimentConfig {
        seed: 0,
        terminal_file: None,
        system: SystemSection {
            a: vec![vec![0.0]],
            b: vec![vec![1.0]],
            u_max: vec![1.0],
        },
        cost: CostSection {
            q: vec![vec![1.0]],
            r: vec![vec![1.0]],
        },
        horizon: HorizonSection {
            delta: 0.1,
            n_p: 20,
            patterns: 5,
        },
        trigger: TriggerSection { beta: 1.0, gamma: 0.5 },
        simulation: SimulationSection {
            x0: vec![0.5],
            t_end: 4.0,
            sample_resolution: None,
        },
        output: None,
        terminal: None,
    }
}

/// A random plant together with a feasible initial state.
#[derive(Debug, Clone)]
pub struct RandomScenario {
    pub sys: LinearSystem,
    pub weights: CostWeights,
    pub delta: f64,
    pub horizon_steps: usize,
    pub patterns: usize,
    pub x0: DVector<f64>,
    pub t_end: f64,
    pub terminal: TerminalIngredients,
    pub eigenvalues: Vec<f64>,
}

impl RandomScenario {
    pub fn simulation_config(&self, trigger: TriggerParams) -> SimulationConfig {
        SimulationConfig {
            sys: self.sys.clone(),
            weights: self.weights.clone(),
            trigger,
            delta: self.delta,
            horizon_steps: self.horizon_steps,
            patterns: self.patterns,
            x0: self.x0.clone(),
            t_end: self.t_end,
            sample_resolution: None,
            terminal: Some(self.terminal.clone()),
        }
    }

    pub fn to_experiment(&self, trigger: TriggerParams) -> ExperimentConfig {
        ExperimentConfig {
            seed: 0,
            terminal_file: None,
            system: SystemSection {
                a: rows(&self.sys.a),
                b: rows(&self.sys.b),
                u_max: self.sys.u_max.iter().copied().collect(),
            },
            cost: CostSection {
                q: rows(&self.weights.q),
                r: rows(&self.weights.r),
            },
            horizon: HorizonSection {
                delta: self.delta,
                n_p: self.horizon_steps,
                patterns: self.patterns,
            },
            trigger: TriggerSection {
                beta: trigger.beta,
                gamma: trigger.gamma,
            },
            simulation: SimulationSection {
                x0: self.x0.iter().copied().collect(),
                t_end: self.t_end,
                sample_resolution: None,
            },
            output: None,
            terminal: Some((&self.terminal).into()),
        }
    }
}

fn gaussian_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gaussian(rng))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Smallest singular value of the controllability matrix relative to the largest.
fn controllability_margin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for j in 0..n {
        ctrb.view_mut((0, j * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    let sv = ctrb.svd(false, false).singular_values;
    sv.min() / sv.max().max(f64::MIN_POSITIVE)
}

/// Draws a controllable plant with `n ≤ 3` real eigenvalues in `[−2, 2]`,
/// synthesizes its terminal ingredients and halves a random initial state
/// until pattern 1 is feasible.
pub fn random_scenario<R: Rng>(rng: &mut R) -> Result<RandomScenario> {
    const DELTA: f64 = 0.1;
    const HORIZON: usize = 20;
    const PATTERNS: usize = 5;
    for _attempt in 0..200 {
        let n = rng.gen_range(1..=3usize);
        let m = rng.gen_range(1..=n.min(2));
        let eig: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..=2.0)).collect();
        let v = gaussian_matrix(rng, n, n);
        if condition_number(&v) > 50.0 {
            continue;
        }
        let Some(v_inv) = v.clone().try_inverse() else { continue };
        let a = &v * DMatrix::from_diagonal(&DVector::from_vec(eig.clone())) * v_inv;
        let b = gaussian_matrix(rng, n, m);
        if controllability_margin(&a, &b) < 1e-2 {
            continue;
        }
        let u_max = DVector::from_fn(m, |_, _| rng.gen_range(1.0..=5.0));
        let sys = LinearSystem::new(a, b, u_max)?;
        let r_scale = rng.gen_range(0.1..=1.0);
        let weights = CostWeights::new(DMatrix::identity(n, n), DMatrix::identity(m, m) * r_scale)?;
        let table = DiscretizationTable::new(&sys, &weights, DELTA, HORIZON, PATTERNS)?;
        let Ok(terminal) = synthesize_terminal(&table) else { continue };
        let bank = PatternBank::new(&table, &terminal)?;

        let dir = DVector::from_fn(n, |_, _| gaussian(rng));
        let norm = dir.norm();
        if norm < 1e-6 {
            continue;
        }
        let mut x0 = dir / norm * rng.gen_range(0.5..=3.0);
        let mut feasible = false;
        for _ in 0..40 {
            if bank.solve(1, &x0)?.is_feasible() {
                feasible = true;
                break;
            }
            x0 *= 0.5;
        }
        if !feasible {
            continue;
        }
        return Ok(RandomScenario {
            sys,
            weights,
            delta: DELTA,
            horizon_steps: HORIZON,
            patterns: PATTERNS,
            x0,
            t_end: 4.0,
            terminal,
            eigenvalues: eig,
        });
    }
    Err(Error::SynthesisFailure(
        "could not draw a well-conditioned controllable system".into(),
    ))
}
