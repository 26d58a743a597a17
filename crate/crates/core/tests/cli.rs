use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sdflow::output::{read_series, read_snapshot, SnapshotKind};

fn sdflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdflow")).args(args).output().unwrap()
}

fn with_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = sdflow(&["evolve", "--config", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("usage: sdflow"), "{}", stderr(&o));
    assert_eq!(sdflow(&[]).status.code(), Some(1));
    assert_eq!(sdflow(&["run", "--config"]).status.code(), Some(1));
}

#[test]
fn missing_or_invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = sdflow(&["run", "--config", "/nonexistent/cfg", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = with_config(dir.path(), "surface.kind = lamella\nflow.dt = -1\nsurface.colour = red\n");
    let o = sdflow(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    // Every problem is reported, not just the first.
    let msg = stderr(&o);
    assert!(msg.contains("flow.dt") && msg.contains("surface.colour"), "{msg}");
}

#[test]
fn run_converges_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(
        dir.path(),
        "surface.kind = lamella\nsurface.resolution = 16\nsurface.mode = 1,0 0.02\nflow.dt = 1e-2\noutput.snapshot_every = 100\n",
    );
    let out = dir.path().join("out");
    let o = sdflow(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("series.csv")).unwrap();
    assert!(text.starts_with(
        "# sdflow-series v1\nt,area,volume,dirichlet,hessian,lyapunov,sup_grad,D,pi_margin,fit_residual\n"
    ));
    assert!(text.trim_end().ends_with("# halt_reason=converged"));
    let series = read_series(&out.join("series.csv")).unwrap();
    assert_eq!(series.halt_reason.as_deref(), Some("converged"));
    let last = series.series.rows().last().unwrap().t;
    let snap = read_snapshot(&out.join("snapshot_final.txt")).unwrap();
    assert_eq!(snap.kind, SnapshotKind::Graph);
    assert_eq!(snap.dims, vec![16, 16]);
    assert_eq!(snap.t.to_bits(), last.to_bits());
    assert!(out.join("snapshot_00000000.txt").exists());
    assert!(out.join("snapshot_00000100.txt").exists());
}

#[test]
fn guard_halt_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(
        dir.path(),
        "surface.kind = lamella\nsurface.resolution = 16\nsurface.mode = 1,0 0.05\nflow.scheme = explicit_rk4\nflow.dt = 0.1\nflow.max_steps = 100\n",
    );
    let out = dir.path().join("out");
    let o = sdflow(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let series = read_series(&out.join("series.csv")).unwrap();
    assert!(series.halt_reason.unwrap().starts_with("guard_violation:"));
}

#[test]
fn stability_of_the_unit_circle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "surface.kind = circle\nsurface.radius = 1\nsurface.nodes = 128\n");
    let out = dir.path().join("out");
    let o = sdflow(&["stability", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("stability.csv")).unwrap();
    let sigma: f64 = text.lines().find_map(|l| l.strip_prefix("# sigma_min=")).unwrap().parse().unwrap();
    assert!((sigma - 3.0).abs() < 1e-6, "{sigma}");
    assert!(text.contains("# classification=strictly_stable"));
    assert!(text.contains("# zero_modes=2"));
    let field = read_snapshot(&out.join("eigenfield.txt")).unwrap();
    assert_eq!(field.kind, SnapshotKind::Field);
    assert_eq!(field.dims, vec![128]);
}

#[test]
fn identity_table_halves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(
        dir.path(),
        "surface.kind = lamella\nsurface.resolution = 32\nsurface.mode = 1,0 0.1\ndiag.identity_dts = 2e-5, 1e-5\n",
    );
    let out = dir.path().join("out");
    let o = sdflow(&["identity", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("identity.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let ratio: f64 = rows[1][2].parse().unwrap();
    assert!((ratio - 2.0).abs() < 0.5, "{ratio}");
}

#[test]
fn probe_reports_both_inequalities() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(dir.path(), "surface.kind = lamella\nsurface.resolution = 16\ndiag.samples = 20\n");
    let out = dir.path().join("out");
    let o = sdflow(&["probe", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("probe.csv")).unwrap();
    let get =
        |key: &str| -> String { text.lines().find_map(|l| l.strip_prefix(&format!("{key},"))).unwrap().to_string() };
    let poincare: f64 = get("poincare_worst_ratio").parse().unwrap();
    assert!((poincare - 1.0).abs() < 1e-2, "{poincare}");
    let gn: f64 = get("gn_worst_ratio").parse().unwrap();
    assert!(gn <= 1.0 + 1e-9, "{gn}");
}

#[test]
fn cylinder_only_supports_stability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_config(
        dir.path(),
        "surface.kind = cylinder\nsurface.radius = 1\nsurface.axis_period = pi\nsurface.resolution = 16,8\n",
    );
    let out = dir.path().join("out");
    assert_eq!(sdflow(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(1));
}
