//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when a verification or run fails, 2 on
//! invalid configuration or I/O problems.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, TerminalFile, VerificationRecord};
use crate::discretization::DiscretizationTable;
use crate::error::{Error, Result};
use crate::simulator::{Mode, Simulator};
use crate::suite::run_suite;
use crate::terminal::{sample_terminal_conditions, synthesize_terminal, verify_terminal};
use crate::trace::{comparison_text, write_comparison, write_trace, CompareRow};

/// Norm threshold used for settling times in comparison reports.
pub const SETTLING_THRESHOLD: f64 = 0.05;

#[derive(Debug, Parser)]
#[command(name = "stmpc", version, about = "Self-triggered MPC for sampled linear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output file; falls back to the config's [output] entry, then stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    SelfTriggered,
    Periodic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SelfTriggered => Mode::SelfTriggered,
            ModeArg::Periodic => Mode::Periodic,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute and verify the terminal feedback, weight and level.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Run the closed loop and write the trace CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "self-triggered")]
        mode: ModeArg,
    },
    /// Compare several β values against the periodic baseline.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated β values (at least two).
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        beta: Vec<f64>,
    },
    /// Run the invariant suite and print one line per check.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failed,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn synthesize(common: &Common, log: &mut dyn Write) -> Result<Outcome> {
    let cfg = load(common)?;
    let sim_cfg = cfg.simulation_config()?;
    let table = DiscretizationTable::new(
        &sim_cfg.sys,
        &sim_cfg.weights,
        sim_cfg.delta,
        sim_cfg.horizon_steps,
        sim_cfg.patterns,
    )?;
    let ing = synthesize_terminal(&table)?;
    let report = verify_terminal(&ing, &table);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampled = sample_terminal_conditions(&ing, &table, &mut rng, 1000)?;
    let sampled_ok = sampled.worst_decrease <= 1e-9 && sampled.worst_input_excess <= 1e-9;
    let passed = report.passed && sampled_ok;

    let file = TerminalFile {
        terminal: (&ing).into(),
        verification: Some(VerificationRecord {
            lyapunov_max_eig: report.lyapunov_max_eig,
            input_margin: report.input_margin,
            passed,
        }),
    };
    let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
    let out_path = common.out.clone().or(cfg.output().terminal);
    let mut out = open_output(out_path.as_deref())?;
    out.write_all(text.as_bytes())?;
    out.flush()?;

    writeln!(
        log,
        "{} terminal ingredients: lyapunov max eig {:.3e}, input margin {:.3e}, \
         sampled decrease {:.3e}, epsilon {:.6e}, closed-loop radius {:.6}",
        if passed { "PASS" } else { "FAIL" },
        report.lyapunov_max_eig,
        report.input_margin,
        sampled.worst_decrease,
        ing.epsilon,
        report.closed_loop_radius
    )?;
    Ok(if passed { Outcome::Success } else { Outcome::Failed })
}

fn simulate(common: &Common, mode: Mode, log: &mut dyn Write) -> Result<Outcome> {
    let cfg = load(common)?;
    let sim = Simulator::new(cfg.simulation_config()?)?;
    let trace = sim.run(mode)?;
    let out_path = common.out.clone().or(cfg.output().trace);
    let mut out = open_output(out_path.as_deref())?;
    write_trace(&trace, &mut out)?;
    out.flush()?;
    writeln!(
        log,
        "{}: {} transmissions, cumulative stage cost {:.10}",
        mode.label(),
        trace.transmissions,
        trace.cumulative_stage_cost
    )?;
    Ok(Outcome::Success)
}

pub fn compare_rows(cfg: &ExperimentConfig, betas: &[f64]) -> Result<Vec<CompareRow>> {
    let base = cfg.simulation_config()?;
    let first = Simulator::new(base.clone())?;
    let terminal = first.terminal().clone();
    let mut rows = Vec::with_capacity(betas.len() + 1);
    let periodic = first.run(Mode::Periodic)?;
    rows.push(CompareRow {
        label: "periodic".into(),
        beta: None,
        transmissions: periodic.transmissions,
        cumulative_stage_cost: periodic.cumulative_stage_cost,
        settling_time: periodic.settling_time(SETTLING_THRESHOLD),
    });
    for &beta in betas {
        let mut c = base.clone();
        c.trigger = cfg.trigger_with_beta(beta)?;
        c.terminal = Some(terminal.clone());
        let trace = Simulator::new(c)?.run(Mode::SelfTriggered)?;
        rows.push(CompareRow {
            label: format!("beta={beta}"),
            beta: Some(beta),
            transmissions: trace.transmissions,
            cumulative_stage_cost: trace.cumulative_stage_cost,
            settling_time: trace.settling_time(SETTLING_THRESHOLD),
        });
    }
    Ok(rows)
}

fn compare(common: &Common, betas: &[f64], log: &mut dyn Write) -> Result<Outcome> {
    if betas.len() < 2 {
        return Err(Error::Config("compare needs at least two β values".into()));
    }
    let cfg = load(common)?;
    let rows = compare_rows(&cfg, betas)?;
    let out_path = common.out.clone().or(cfg.output().report);
    let mut out = open_output(out_path.as_deref())?;
    write_comparison(&rows, &mut out)?;
    out.flush()?;
    log.write_all(comparison_text(&rows, SETTLING_THRESHOLD).as_bytes())?;
    Ok(Outcome::Success)
}

fn verify(common: &Common, log: &mut dyn Write) -> Result<Outcome> {
    let cfg = load(common)?;
    let sim = Simulator::new(cfg.simulation_config()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let results = run_suite(&sim, &mut rng)?;
    let mut text = String::new();
    for r in &results {
        text.push_str(&r.line());
        text.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    text.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    if let Some(path) = &common.out {
        std::fs::write(path, &text)?;
    }
    log.write_all(text.as_bytes())?;
    Ok(if failed == 0 { Outcome::Success } else { Outcome::Failed })
}

/// Executes a parsed command; progress and reports go to `log`.
pub fn execute(cli: &Cli, log: &mut dyn Write) -> Result<Outcome> {
    match &cli.command {
        Command::Synthesize { common } => synthesize(common, log),
        Command::Simulate { common, mode } => simulate(common, (*mode).into(), log),
        Command::Compare { common, beta } => compare(common, beta, log),
        Command::Verify { common } => verify(common, log),
    }
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Io(_) | Error::InvalidInput(_) => 2,
        _ => 1,
    }
}
