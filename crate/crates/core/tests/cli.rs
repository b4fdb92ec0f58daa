use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stmpc::config::{ExperimentConfig, TerminalFile};
use stmpc::scenario::{integrator, spring_mass};
use stmpc::trace::{events_header, read_trace_tables, samples_header, summary_header};

fn stmpc(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmpc"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

fn out_arg(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn synthesize_writes_verified_ingredients() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sm.toml", &spring_mass());
    let out = dir.path().join("terminal.toml");
    let res = stmpc(&["synthesize", "--out", &out_arg(&out)], &config);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let file: TerminalFile = toml::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(file.verification.unwrap().passed);
    assert!(file.terminal.epsilon > 0.0);

    let config = write_config(dir.path(), "int.toml", &integrator());
    assert!(stmpc(&["synthesize", "--out", &out_arg(&out)], &config).status.success());
}

#[test]
fn uncontrollable_unstable_plant_fails_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = integrator();
    cfg.system.a = vec![vec![1.0]];
    cfg.system.b = vec![vec![0.0]];
    let config = write_config(dir.path(), "bad.toml", &cfg);
    let res = stmpc(&["synthesize", "--out", &out_arg(&dir.path().join("t.toml"))], &config);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("stabilizable"));
}

#[test]
fn trace_has_the_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sm.toml", &spring_mass());
    let out = dir.path().join("trace.csv");
    let res = stmpc(&["simulate", "--out", &out_arg(&out)], &config);
    assert!(res.status.success());
    let tables = read_trace_tables(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(tables.samples[0], samples_header(2, 1));
    assert_eq!(tables.events[0], events_header(30));
    assert_eq!(tables.summary[0], summary_header());
    // the last hold is not truncated, so samples run to its end
    let last = tables.events.last().unwrap();
    let end = last[1].parse::<f64>().unwrap() + last[3].parse::<f64>().unwrap();
    assert_eq!(tables.samples.len(), 1 + (end / 0.1).round() as usize + 1);
    let transmissions: usize = tables.summary[1][1].parse().unwrap();
    assert_eq!(transmissions, tables.events.len() - 1);
    // intervals grow once the state is small
    let late = tables.events.iter().skip(1).filter(|r| r[1].parse::<f64>().unwrap() > 20.0);
    assert!(late.clone().count() > 0);
    assert!(late.map(|r| r[2].parse::<usize>().unwrap()).all(|i| i >= 2));
    // every real cell carries 12 significant digits
    let cell = &tables.samples[1][1];
    assert_eq!(cell.split('e').next().unwrap().trim_start_matches('-').len(), 13);
    // k = 0 solves only the first pattern
    assert!(tables.events[1][5..4 + 30].iter().all(|c| c.is_empty()));
}

#[test]
fn periodic_mode_transmits_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = integrator();
    cfg.simulation.x0 = vec![0.0];
    let config = write_config(dir.path(), "zero.toml", &cfg);
    let out = dir.path().join("trace.csv");
    let res = stmpc(&["simulate", "--mode", "periodic", "--out", &out_arg(&out)], &config);
    assert!(res.status.success());
    let tables = read_trace_tables(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(tables.summary[1][1], "40");
    assert!(tables.samples[1..].iter().all(|r| r[1..].iter().all(|c| c.parse::<f64>().unwrap() == 0.0)));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "int.toml", &integrator());
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("t{k}.csv"));
        assert!(stmpc(&["simulate", "--seed", "9", "--out", &out_arg(&out)], &config).status.success());
        bytes.push(std::fs::read(out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn compare_reports_baseline_and_each_beta() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "int.toml", &integrator());
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("cmp{k}.csv"));
        let res = stmpc(&["compare", "--beta", "0,1,10", "--out", &out_arg(&out)], &config);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        reports.push(std::fs::read_to_string(out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let lines: Vec<&str> = reports[0].lines().collect();
    assert_eq!(lines[0], "label,beta,transmissions,cumulative_stage_cost,settling_time");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("periodic,,40,"));

    let res = stmpc(&["compare", "--beta", "1"], &config);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn verify_passes_on_spring_mass() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sm.toml", &spring_mass());
    let res = stmpc(&["verify", "--seed", "3"], &config);
    let text = String::from_utf8_lossy(&res.stderr);
    assert!(res.status.success(), "{text}");
    assert!(text.contains("0 failed"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn invalid_gamma_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = integrator();
    cfg.trigger.gamma = 1.5;
    let config = write_config(dir.path(), "g.toml", &cfg);
    let res = stmpc(&["verify"], &config);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("γ"));
}

#[test]
fn inflated_terminal_level_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_config(dir.path(), "sm.toml", &spring_mass());
    let terminal = dir.path().join("terminal.toml");
    assert!(stmpc(&["synthesize", "--out", &out_arg(&terminal)], &base).status.success());
    let mut file: TerminalFile = toml::from_str(&std::fs::read_to_string(&terminal).unwrap()).unwrap();
    file.terminal.epsilon *= 100.0;
    let mut cfg = spring_mass();
    cfg.terminal = Some(file.terminal);
    cfg.simulation.t_end = 2.0;
    let config = write_config(dir.path(), "inflated.toml", &cfg);
    let res = stmpc(&["verify"], &config);
    assert_eq!(res.status.code(), Some(1));
    let text = String::from_utf8_lossy(&res.stderr);
    assert!(text.lines().any(|l| l.starts_with("FAIL terminal_lyapunov")), "{text}");
}

#[test]
fn unknown_keys_are_rejected_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = spring_mass().to_toml_string().unwrap().replace("[trigger]", "[trigger]\nsigma = 0.5");
    std::fs::write(&path, text).unwrap();
    let res = stmpc(&["simulate"], &path);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn terminal_file_reference_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_config(dir.path(), "sm.toml", &spring_mass());
    let terminal = dir.path().join("terminal.toml");
    assert!(stmpc(&["synthesize", "--out", &out_arg(&terminal)], &base).status.success());
    let mut cfg = spring_mass();
    cfg.terminal_file = Some(PathBuf::from("terminal.toml"));
    let config = write_config(dir.path(), "with_file.toml", &cfg);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(stmpc(&["simulate", "--out", &out_arg(&a)], &config).status.success());
    assert!(stmpc(&["simulate", "--out", &out_arg(&b)], &base).status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
