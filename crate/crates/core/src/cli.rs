//! Subcommand orchestration and exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{parse_config, ExperimentConfig};
use crate::diagnostics::{energy_identity_residual, gn_probe, poincare_probe};
use crate::error::{Error, Result};
use crate::flow::{step, FlowState, HaltReason};
use crate::output::{format_real, write_series, write_snapshot, Snapshot};
use crate::stability::analyze;

pub const USAGE: &str = "usage: sdflow <run|stability|identity|probe> --config <path> --out <dir>";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_GUARD: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Run,
    Stability,
    Identity,
    Probe,
}

impl Subcommand {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "run" => Some(Subcommand::Run),
            "stability" => Some(Subcommand::Stability),
            "identity" => Some(Subcommand::Identity),
            "probe" => Some(Subcommand::Probe),
            _ => None,
        }
    }
}

/// Parsed command line.
#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub subcommand: Subcommand,
    pub config: PathBuf,
    pub out: PathBuf,
}

pub fn parse_args(args: &[String]) -> Result<Invocation> {
    let mut it = args.iter();
    let name = it.next().ok_or_else(|| Error::config("missing subcommand"))?;
    let subcommand = Subcommand::parse(name).ok_or_else(|| Error::Config(format!("unknown subcommand {name:?}")))?;
    let (mut config, mut out) = (None, None);
    while let Some(flag) = it.next() {
        let value = it.next().ok_or_else(|| Error::Config(format!("{flag} needs a value")))?;
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value)),
            "--out" => out = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
    }
    Ok(Invocation {
        subcommand,
        config: config.ok_or_else(|| Error::config("missing --config"))?,
        out: out.ok_or_else(|| Error::config("missing --out"))?,
    })
}

/// Runs the command line and returns the exit code; messages go to `log`.
pub fn main_with_args(args: &[String], log: &mut dyn std::io::Write) -> i32 {
    let inv = match parse_args(args) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = writeln!(log, "{e}\n{USAGE}");
            return EXIT_CONFIG;
        }
    };
    let config = match fs::read_to_string(&inv.config).map_err(Error::from).and_then(|t| parse_config(&t)) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(log, "{}: {e}", inv.config.display());
            return EXIT_CONFIG;
        }
    };
    match dispatch(inv.subcommand, &config, &inv.out) {
        Ok(summary) => {
            let _ = write!(log, "{}", summary.message);
            summary.exit_code
        }
        Err(e @ Error::Config(_)) => {
            let _ = writeln!(log, "{e}");
            EXIT_CONFIG
        }
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            EXIT_CONFIG
        }
    }
}

pub struct Summary {
    pub exit_code: i32,
    pub message: String,
}

pub fn dispatch(subcommand: Subcommand, config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out)?;
    match subcommand {
        Subcommand::Run => run(config, out),
        Subcommand::Stability => stability(config, out),
        Subcommand::Identity => identity(config, out),
        Subcommand::Probe => probe(config, out),
    }
}

fn evolvable(config: &ExperimentConfig) -> Result<(FlowState, crate::flow::FlowConfig)> {
    match (config.initial_shape()?, &config.flow) {
        (Some(shape), Some(flow)) => Ok((FlowState::new(shape), flow.clone())),
        _ => Err(Error::config("cylinder surfaces support only the stability subcommand")),
    }
}

fn run(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let (initial, flow) = evolvable(config)?;
    let reference = config.flow_reference()?;
    let every = config.snapshot_every;
    let mut io_error = None;
    let outcome = crate::flow::run_flow(initial.shape, &flow, &reference, &config.diag, &mut |state, _| {
        if every > 0 && state.step % every == 0 && io_error.is_none() {
            let path = out.join(format!("snapshot_{:08}.txt", state.step));
            if let Err(e) = write_snapshot(&path, &Snapshot::from_state(state)) {
                io_error = Some(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    write_series(&out.join("series.csv"), &outcome.series, Some(&outcome.halt))?;
    write_snapshot(&out.join("snapshot_final.txt"), &Snapshot::from_state(&outcome.final_state))?;
    let exit_code = if matches!(outcome.halt, HaltReason::Guard(_)) { EXIT_GUARD } else { EXIT_OK };
    Ok(Summary {
        exit_code,
        message: format!(
            "halt_reason={} steps={} t={}\n",
            outcome.halt.label(),
            outcome.final_state.step,
            format_real(outcome.final_state.t)
        ),
    })
}

fn stability(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let report = analyze(&config.stability_reference()?)?;
    let surviving: Vec<String> = report.translations.surviving.iter().map(|i| i.to_string()).collect();
    let mut text = String::new();
    writeln!(text, "# sdflow-stability v1").unwrap();
    writeln!(text, "# sigma_min={}", format_real(report.sigma_min)).unwrap();
    writeln!(text, "# classification={}", report.classification.name()).unwrap();
    writeln!(text, "# translations={}", surviving.join(",")).unwrap();
    writeln!(text, "# zero_modes={}", report.zero_modes).unwrap();
    writeln!(text, "eigenvalue,multiplicity").unwrap();
    for c in &report.lowest {
        writeln!(text, "{},{}", format_real(c.value), c.multiplicity).unwrap();
    }
    fs::write(out.join("stability.csv"), text)?;
    write_snapshot(&out.join("eigenfield.txt"), &Snapshot::from_field(&report.eigenfield, 0.0))?;
    Ok(Summary {
        exit_code: EXIT_OK,
        message: format!(
            "sigma_min={} classification={}\n",
            format_real(report.sigma_min),
            report.classification.name()
        ),
    })
}

/// Residual of the Dirichlet-energy law after two steps, per step size.
pub fn identity_table(config: &ExperimentConfig) -> Result<Vec<(f64, f64)>> {
    let (initial, flow) = evolvable(config)?;
    config
        .identity_dts
        .iter()
        .map(|&dt| {
            let mut f = flow.clone();
            f.dt = dt;
            let s1 = step(&initial, &f)?.0;
            let s2 = step(&s1, &f)?.0;
            Ok((dt, energy_identity_residual(&[initial.clone(), s1, s2], dt)?))
        })
        .collect()
}

fn identity(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let table = identity_table(config)?;
    let mut text = String::from("# sdflow-identity v1\ndt,residual,ratio\n");
    for (i, (dt, r)) in table.iter().enumerate() {
        let ratio = if i == 0 { String::new() } else { format_real(table[i - 1].1 / r) };
        writeln!(text, "{},{},{}", format_real(*dt), format_real(*r), ratio).unwrap();
    }
    fs::write(out.join("identity.csv"), &text)?;
    Ok(Summary { exit_code: EXIT_OK, message: text })
}

fn probe(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let (initial, _) = evolvable(config)?;
    let cache = initial.geometry()?;
    let p = poincare_probe(&cache, config.probe_samples, config.seed)?;
    let gn = gn_probe(&cache, config.probe_samples, &config.gn, config.seed)?;
    let gn2 = gn_probe(&cache, 2 * config.probe_samples, &config.gn, config.seed)?;
    let stable = (gn2 - gn).abs() <= 0.2 * gn;
    let mut text = String::from("# sdflow-probe v1\nkey,value\n");
    writeln!(text, "poincare_worst_ratio,{}", format_real(p.worst_ratio)).unwrap();
    writeln!(text, "poincare_evaluated,{}", p.evaluated).unwrap();
    writeln!(text, "poincare_skipped,{}", p.skipped).unwrap();
    writeln!(text, "gn_worst_ratio,{}", format_real(gn)).unwrap();
    writeln!(text, "gn_worst_ratio_doubled,{}", format_real(gn2)).unwrap();
    writeln!(text, "gn_stable,{stable}").unwrap();
    fs::write(out.join("probe.csv"), &text)?;
    Ok(Summary { exit_code: EXIT_OK, message: text })
}
