use std::f64::consts::PI;

use sdflow::diagnostics::{DiagnosticsConfig, FlowReference};
use sdflow::flow::{run_flow, step, FlowConfig, FlowState, HaltReason, Scheme, Shape};
use sdflow::geometry::{curve_geometry, FourierMode, GraphSurface, ParametricCurve};
use sdflow::lattice::{make_grid, FlatTorus};
use sdflow::output::Snapshot;
use sdflow::GuardViolation;

fn lamella(n: usize, modes: &[FourierMode]) -> Shape {
    let grid = make_grid(FlatTorus::cube(2.0 * PI, 2).unwrap(), &[n, n]).unwrap();
    Shape::Graph(GraphSurface::perturbed(grid, 0.0, modes).unwrap())
}

fn advance(mut state: FlowState, cfg: &FlowConfig, steps: usize) -> FlowState {
    for _ in 0..steps {
        state = step(&state, cfg).unwrap().0;
    }
    state
}

fn heights(state: &FlowState) -> Vec<f64> {
    match &state.shape {
        Shape::Graph(s) => s.heights().values().to_vec(),
        Shape::Curve(c) => c.x().iter().chain(c.y()).copied().collect(),
    }
}

#[test]
fn schemes_agree_on_a_short_horizon() {
    let shape = lamella(16, &[FourierMode::new(vec![1, 1], 0.1, 0.2), FourierMode::new(vec![2, 0], 0.05, 0.0)]);
    let run = |scheme, dt: f64| {
        let mut cfg = FlowConfig::for_shape(&shape, scheme);
        cfg.dt = dt;
        heights(&advance(FlowState::new(shape.clone()), &cfg, (0.05 / dt).round() as usize))
    };
    let reference = run(Scheme::ExplicitRk4, 1e-4);
    let diff = |v: &[f64]| v.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (coarse, fine) = (diff(&run(Scheme::ImexStabilized, 1e-3)), diff(&run(Scheme::ImexStabilized, 5e-4)));
    // First order in time: halving dt halves the gap.
    assert!(coarse < 1e-3, "{coarse:e}");
    assert!((coarse / fine - 2.0).abs() < 0.3, "{coarse:e} {fine:e}");
}

#[test]
fn restart_from_snapshot_is_bit_identical() {
    let shape = lamella(16, &[FourierMode::new(vec![1, 0], 0.05, 0.0), FourierMode::new(vec![1, 2], 0.03, 1.0)]);
    let mut cfg = FlowConfig::for_shape(&shape, Scheme::ImexStabilized);
    cfg.stabilizer = Some(2.5);
    cfg.dt = 1e-2;
    let straight = advance(FlowState::new(shape.clone()), &cfg, 20);
    let half = advance(FlowState::new(shape), &cfg, 10);
    let text = Snapshot::from_state(&half).render();
    let restored = Snapshot::parse(&text).unwrap().to_state().unwrap();
    let resumed = advance(restored, &cfg, 10);
    assert_eq!(heights(&resumed), heights(&straight));
    assert_eq!(resumed.t.to_bits(), straight.t.to_bits());
}

#[test]
fn three_dimensional_lamella_decays() {
    let grid = make_grid(FlatTorus::cube(2.0 * PI, 3).unwrap(), &[8, 8, 8]).unwrap();
    let modes = [FourierMode::new(vec![1, 0, 0], 1e-3, 0.0)];
    let shape = Shape::Graph(GraphSurface::perturbed(grid, 0.5, &modes).unwrap());
    let v0 = shape.volume().unwrap();
    let mut cfg = FlowConfig::for_shape(&shape, Scheme::ImexStabilized);
    cfg.dt = 1e-3;
    let end = advance(FlowState::new(shape), &cfg, 500);
    // The single |k| = 1 mode decays like exp(-t) to leading order.
    let amp = heights(&end).iter().map(|h| (h - 0.5).abs()).fold(0.0, f64::max);
    let expected = 1e-3 * (-end.t).exp();
    assert!((amp / expected - 1.0).abs() < 1e-3, "{amp:e} vs {expected:e}");
    assert!((end.shape.volume().unwrap() - v0).abs() <= 1e-12 * (2.0 * PI).powi(3));
}

#[test]
fn unstable_explicit_run_halts_on_a_guard() {
    let shape = lamella(16, &[FourierMode::new(vec![1, 0], 0.05, 0.0)]);
    let mut cfg = FlowConfig::for_shape(&shape, Scheme::ExplicitRk4);
    cfg.dt = 1e-1;
    cfg.max_steps = 200;
    let out =
        run_flow(shape, &cfg, &FlowReference::Lamella { level: 0.0 }, &DiagnosticsConfig::default(), &mut |_, _| {})
            .unwrap();
    let HaltReason::Guard(violation) = &out.halt else { panic!("halt {:?}", out.halt) };
    assert!(out.halt.label().starts_with("guard_violation:"));
    assert!(!matches!(violation, GuardViolation::NodeCollision { .. }));
    // Step-level guards get one half-step retry; sampled bounds halt directly.
    assert!(out.retries <= 1);
    assert!(heights(&out.final_state).iter().all(|v| v.is_finite()));
}

#[test]
fn ellipse_keeps_area_and_loses_length() {
    let curve = ParametricCurve::ellipse([0.3, -0.2], 1.2, 0.8, 128).unwrap();
    let a0 = curve_geometry(&curve).unwrap().area;
    let shape = Shape::Curve(curve);
    let mut cfg = FlowConfig::for_shape(&shape, Scheme::ImexStabilized);
    cfg.dt = 1e-4;
    let mut state = FlowState::new(shape);
    let mut length = f64::INFINITY;
    for _ in 0..300 {
        let (next, report) = step(&state, &cfg).unwrap();
        assert!(report.area_after <= report.area_before + 1e-12 * report.area_before);
        state = next;
        let Shape::Curve(c) = &state.shape else { unreachable!() };
        let geo = curve_geometry(c).unwrap();
        assert!((geo.area - a0).abs() <= 1e-12 * a0, "{:e}", geo.area - a0);
        assert!(geo.length <= length);
        length = geo.length;
    }
}

#[test]
fn converged_lamella_series_is_consistent() {
    let shape = lamella(16, &[FourierMode::new(vec![1, 0], 0.02, 0.0), FourierMode::new(vec![1, 1], 0.02, 0.5)]);
    let mut cfg = FlowConfig::for_shape(&shape, Scheme::ImexStabilized);
    cfg.dt = 1e-2;
    cfg.sample_every = 5;
    let mut samples = 0;
    let out =
        run_flow(shape, &cfg, &FlowReference::Lamella { level: 0.0 }, &DiagnosticsConfig::default(), &mut |_, _| {
            samples += 1
        })
        .unwrap();
    assert_eq!(out.halt, HaltReason::Converged);
    assert_eq!(out.energy_increases, 0);
    assert_eq!(out.series.len(), samples);
    let rows = out.series.rows();
    assert!(rows.windows(2).all(|w| w[1].area <= w[0].area + 1e-12 * rows[0].area));
    assert!(rows.iter().all(|r| r.volume.abs() <= 1e-12));
    assert!(rows.last().unwrap().fit_residual <= 1e-8);
}
