//! Time integration of surface diffusion flow, `V = Delta_g H` along the
//! outer normal, for periodic graphs and closed plane curves.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use crate::diagnostics::{self, DiagnosticsConfig, EnergySeries, FlowReference, SeriesRow};
use crate::error::{Error, GuardViolation, Result};
use crate::geometry::{
    build_geometry, curve_geometry, enclosed_volume, unit_orders, CurveGeometry, GeometryCache, GraphSurface,
    ParametricCurve,
};
use crate::lattice::{pairwise_sum, solve_stabilized, ScalarField};

/// Smallest allowed distance between consecutive curve nodes.
pub const MIN_NODE_SPACING: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    ExplicitRk4,
    ImexStabilized,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::ExplicitRk4 => "explicit_rk4",
            Scheme::ImexStabilized => "imex_stabilized",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Stabilizer `A` of the IMEX splitting; `None` picks the default from the initial data.
    pub stabilizer: Option<f64>,
    pub volume_correction: bool,
    pub max_steps: usize,
    pub sample_every: usize,
    pub dealias: bool,
    /// Bound on `sup |grad f|` for graphs.
    pub c1_bound: f64,
    /// Bound on `Vol(F ^ E)`; `None` means `0.4 * min period` for graphs, unbounded for curves.
    pub volume_bound: Option<f64>,
    /// Bound on the Lyapunov energy; `None` means `1e6 * max(E(0), 1e-12)`.
    pub energy_bound: Option<f64>,
    /// Convergence threshold on the sup-distance to the fitted translate.
    pub tolerance: f64,
    /// Curves are resampled to uniform arclength every this many steps (0 disables).
    pub redistribute_every: usize,
}

impl FlowConfig {
    /// Defaults for `shape`: `dt = 1e-3 h^2` (IMEX) or `0.05 h^4` (explicit).
    pub fn for_shape(shape: &Shape, scheme: Scheme) -> Self {
        let h = match shape {
            Shape::Graph(s) => s.grid().min_spacing(),
            Shape::Curve(c) => {
                let len = curve_geometry(c).map(|g| g.length).unwrap_or(2.0 * PI);
                len / c.len() as f64
            }
        };
        let dt = match scheme {
            Scheme::ImexStabilized => 1e-3 * h * h,
            Scheme::ExplicitRk4 => 0.05 * h.powi(4),
        };
        Self {
            dt,
            scheme,
            stabilizer: None,
            volume_correction: true,
            max_steps: 10_000,
            sample_every: 1,
            dealias: true,
            c1_bound: 10.0,
            volume_bound: None,
            energy_bound: None,
            tolerance: 1e-9,
            redistribute_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("flow.dt = {} must be positive", self.dt));
        }
        if let Some(a) = self.stabilizer {
            if self.scheme == Scheme::ImexStabilized && !(a >= 1.0 && a.is_finite()) {
                problems.push(format!("flow.stabilizer = {a} must be >= 1 for imex"));
            }
        }
        if self.sample_every == 0 {
            problems.push("flow.sample_every must be >= 1".to_string());
        }
        if !(self.c1_bound > 0.0) {
            problems.push(format!("flow.c1_bound = {} must be positive", self.c1_bound));
        }
        if !(self.tolerance > 0.0) {
            problems.push(format!("flow.tolerance = {} must be positive", self.tolerance));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// The evolving hypersurface.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Graph(GraphSurface),
    Curve(ParametricCurve),
}

impl Shape {
    /// Enclosed volume (graphs) or area (curves).
    pub fn volume(&self) -> Result<f64> {
        match self {
            Shape::Graph(s) => Ok(enclosed_volume(s)),
            Shape::Curve(c) => Ok(curve_geometry(c)?.area),
        }
    }

    pub fn geometry(&self) -> Result<GeometryCache> {
        match self {
            Shape::Graph(s) => build_geometry(s),
            Shape::Curve(c) => Ok(curve_geometry(c)?.cache),
        }
    }

    /// Measure used to normalise volume drift: the base torus for graphs
    /// (at least the enclosed volume), the enclosed area for curves.
    pub fn volume_scale(&self) -> Result<f64> {
        Ok(match self {
            Shape::Graph(s) => s.grid().torus().measure().max(enclosed_volume(s).abs()),
            Shape::Curve(c) => curve_geometry(c)?.area.abs(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub step: usize,
    pub shape: Shape,
}

impl FlowState {
    pub fn new(shape: Shape) -> Self {
        Self { t: 0.0, step: 0, shape }
    }

    pub fn geometry(&self) -> Result<GeometryCache> {
        self.shape.geometry()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub volume_before: f64,
    pub volume_after: f64,
    pub area_before: f64,
    pub area_after: f64,
    pub sup_velocity: f64,
    /// Size of the volume restoration (constant shift or normal offset).
    pub correction_magnitude: f64,
}

/// Relative floor below which Fourier modes of `H` are dropped when filtering.
pub const NOISE_FLOOR: f64 = 1e-13;

/// `V = Delta_g H`, optionally filtered (two-thirds rule plus noise floor)
/// and with its mu-mean removed.
pub fn normal_velocity(cache: &GeometryCache, volume_correction: bool, dealias: bool) -> ScalarField {
    let grid = cache.grid();
    let d = cache.dim();
    let mut spec = grid.forward(cache.mean_curvature());
    if dealias {
        spec = spec.dealias().filter_noise(NOISE_FLOOR);
    }
    let grad: Vec<Vec<f64>> = (0..d).map(|i| spec.derivative(&unit_orders(d, i, 1))).collect();
    let mut v = cache.divergence_of_gradient(&grad);
    if volume_correction {
        let mean = cache.integrate(&v) / cache.area();
        for x in &mut v {
            *x -= mean;
        }
    }
    ScalarField::from_parts(grid.clone(), v)
}

/// Default stabilizer `1 + sup (1 + |grad f|^2)^2` for graphs, 2 for curves.
pub fn default_stabilizer(shape: &Shape) -> f64 {
    match shape {
        Shape::Graph(s) => {
            let g = s.sup_gradient();
            1.0 + (1.0 + g * g).powi(2)
        }
        Shape::Curve(_) => 2.0,
    }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `df/dt = sqrt(1 + |grad f|^2) V`, the vertical speed whose normal part is `V`.
fn graph_rate(surface: &GraphSurface, config: &FlowConfig) -> Result<(Vec<f64>, f64, GeometryCache)> {
    let cache = build_geometry(surface)?;
    let v = normal_velocity(&cache, config.volume_correction, config.dealias);
    let sup_v = sup_abs(v.values());
    let rate = v.values().iter().zip(cache.sqrt_det_g()).map(|(v, w)| v * w).collect();
    Ok((rate, sup_v, cache))
}

fn check_graph_guards(surface: &GraphSurface, config: &FlowConfig) -> Result<()> {
    if surface.heights().values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Guard(GuardViolation::NonFinite));
    }
    let g = surface.sup_gradient();
    if !g.is_finite() {
        return Err(Error::Guard(GuardViolation::NonFinite));
    }
    if g > config.c1_bound {
        return Err(Error::Guard(GuardViolation::GradientBound { sup_gradient: g, bound: config.c1_bound }));
    }
    Ok(())
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

/// Flat-measure area `int sqrt(1 + |grad f|^2) dx` without building the full cache.
fn graph_area(surface: &GraphSurface) -> f64 {
    let grid = surface.grid();
    let d = grid.dimension();
    let spec = grid.forward(surface.heights().values());
    let grads: Vec<Vec<f64>> = (0..d).map(|i| spec.derivative(&unit_orders(d, i, 1))).collect();
    let w: Vec<f64> = (0..grid.len()).map(|p| (1.0 + grads.iter().map(|g| g[p] * g[p]).sum::<f64>()).sqrt()).collect();
    pairwise_sum(&w) * grid.cell_measure()
}

/// Advances a graph state by one step of `config.dt`.
pub fn step_graph(state: &FlowState, config: &FlowConfig) -> Result<(FlowState, StepReport)> {
    let Shape::Graph(surface) = &state.shape else {
        return Err(Error::config("step_graph called on a curve state"));
    };
    check_graph_guards(surface, config)?;
    let dt = config.dt;
    let f = surface.heights().values();
    let (k1, sup_v, cache) = graph_rate(surface, config)?;
    let area_before = cache.area();
    let volume_before = enclosed_volume(surface);

    let mut next: Vec<f64> = match config.scheme {
        Scheme::ExplicitRk4 => {
            let stage = |vals: Vec<f64>| -> Result<Vec<f64>> {
                let s = surface.with_heights(vals).map_err(|_| Error::Guard(GuardViolation::NonFinite))?;
                Ok(graph_rate(&s, config)?.0)
            };
            let k2 = stage(axpy(f, 0.5 * dt, &k1))?;
            let k3 = stage(axpy(f, 0.5 * dt, &k2))?;
            let k4 = stage(axpy(f, dt, &k3))?;
            (0..f.len()).map(|p| f[p] + dt / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p])).collect()
        }
        Scheme::ImexStabilized => {
            let a = config.stabilizer.unwrap_or_else(|| default_stabilizer(&state.shape));
            let grid = surface.grid();
            let bilap = grid.forward(f).apply(|slot| {
                let l = grid.laplacian_symbol(slot);
                Complex::new(l * l, 0.0)
            });
            let rhs: Vec<f64> = (0..f.len()).map(|p| f[p] + dt * (k1[p] + a * bilap[p])).collect();
            if rhs.iter().any(|v| !v.is_finite()) {
                return Err(Error::Guard(GuardViolation::NonFinite));
            }
            solve_stabilized(&ScalarField::from_parts(grid.clone(), rhs), a, dt)?.into_values()
        }
    };
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Guard(GuardViolation::NonFinite));
    }
    // Products in the rate leak into the cut band, where the stabilized update
    // leaves them undamped; project them out so they cannot accumulate.
    if config.dealias {
        next = surface.grid().forward(&next).dealias().into_values();
    }
    let mut correction = 0.0;
    if config.volume_correction {
        let grid = surface.grid();
        let vol = pairwise_sum(&next) * grid.cell_measure();
        correction = (volume_before - vol) / grid.torus().measure();
        if correction != 0.0 {
            for v in &mut next {
                *v += correction;
            }
        }
    }
    let new_surface = surface.with_heights(next)?;
    check_graph_guards(&new_surface, config)?;
    let report = StepReport {
        volume_before,
        volume_after: enclosed_volume(&new_surface),
        area_before,
        area_after: graph_area(&new_surface),
        sup_velocity: sup_v,
        correction_magnitude: correction.abs(),
    };
    Ok((FlowState { t: state.t + dt, step: state.step + 1, shape: Shape::Graph(new_surface) }, report))
}

fn curve_rate(curve: &ParametricCurve, config: &FlowConfig) -> Result<(Vec<f64>, Vec<f64>, f64, CurveGeometry)> {
    let geo = curve_geometry(curve).map_err(curve_guard)?;
    let v = normal_velocity(&geo.cache, config.volume_correction, config.dealias);
    let vx = v.values().iter().zip(&geo.normal[0]).map(|(v, n)| v * n).collect();
    let vy = v.values().iter().zip(&geo.normal[1]).map(|(v, n)| v * n).collect();
    Ok((vx, vy, sup_abs(v.values()), geo))
}

fn curve_guard(e: Error) -> Error {
    match e {
        Error::Degenerate(_) => Error::Guard(GuardViolation::NodeCollision { spacing: 0.0 }),
        Error::NonFinite(_) => Error::Guard(GuardViolation::NonFinite),
        other => other,
    }
}

fn make_curve(template: &ParametricCurve, x: Vec<f64>, y: Vec<f64>) -> Result<ParametricCurve> {
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::Guard(GuardViolation::NonFinite));
    }
    let c = template.with_nodes(x, y).map_err(curve_guard)?;
    let spacing = c.min_spacing();
    if spacing < MIN_NODE_SPACING {
        return Err(Error::Guard(GuardViolation::NodeCollision { spacing }));
    }
    Ok(c)
}

/// Offsets the curve along its normal until the enclosed area equals `target`.
fn restore_area(curve: ParametricCurve, target: f64) -> Result<(ParametricCurve, f64)> {
    let mut curve = curve;
    let mut total = 0.0;
    for _ in 0..4 {
        let geo = curve_geometry(&curve).map_err(curve_guard)?;
        let delta = (target - geo.area) / geo.length;
        if delta.abs() <= 1e-16 * target.abs().max(1.0) {
            break;
        }
        total += delta;
        let x = curve.x().iter().zip(&geo.normal[0]).map(|(x, n)| x + delta * n).collect();
        let y = curve.y().iter().zip(&geo.normal[1]).map(|(y, n)| y + delta * n).collect();
        curve = make_curve(&curve, x, y)?;
    }
    Ok((curve, total))
}

/// Advances a curve state by one step of `config.dt`.
pub fn step_curve(state: &FlowState, config: &FlowConfig) -> Result<(FlowState, StepReport)> {
    let Shape::Curve(curve) = &state.shape else {
        return Err(Error::config("step_curve called on a graph state"));
    };
    let dt = config.dt;
    let spacing = curve.min_spacing();
    if spacing < MIN_NODE_SPACING {
        return Err(Error::Guard(GuardViolation::NodeCollision { spacing }));
    }
    let (vx, vy, sup_v, geo) = curve_rate(curve, config)?;
    let (x, y) = (curve.x(), curve.y());
    let (nx, ny) = match config.scheme {
        Scheme::ExplicitRk4 => {
            let stage = |sx: f64, kx: &[f64], ky: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
                let c = make_curve(curve, axpy(x, sx, kx), axpy(y, sx, ky))?;
                let (a, b, _, _) = curve_rate(&c, config)?;
                Ok((a, b))
            };
            let (k2x, k2y) = stage(0.5 * dt, &vx, &vy)?;
            let (k3x, k3y) = stage(0.5 * dt, &k2x, &k2y)?;
            let (k4x, k4y) = stage(dt, &k3x, &k3y)?;
            let comb = |b: &[f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| -> Vec<f64> {
                (0..b.len()).map(|p| b[p] + dt / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p])).collect()
            };
            (comb(x, &vx, &k2x, &k3x, &k4x), comb(y, &vy, &k2y, &k3y, &k4y))
        }
        Scheme::ImexStabilized => {
            // Stabilize with A (d/ds)^4 on the coordinates, d/ds ~ (2 pi / L) d/dtheta.
            let a = config.stabilizer.unwrap_or_else(|| default_stabilizer(&state.shape));
            let scale = (2.0 * PI / geo.length).powi(4);
            let grid = curve.grid();
            let solve = |base: &[f64], vel: &[f64]| -> Result<Vec<f64>> {
                let d4 = grid.forward(base).derivative(&[4]);
                let rhs: Vec<f64> = (0..base.len()).map(|p| base[p] + dt * (vel[p] + a * scale * d4[p])).collect();
                if rhs.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Guard(GuardViolation::NonFinite));
                }
                Ok(solve_stabilized(&ScalarField::from_parts(grid.clone(), rhs), a * scale, dt)?.into_values())
            };
            (solve(x, &vx)?, solve(y, &vy)?)
        }
    };
    let mut next = make_curve(curve, nx, ny)?;
    let step = state.step + 1;
    if config.redistribute_every > 0 && step % config.redistribute_every == 0 {
        next = resample_arclength(&next)?;
    }
    let mut correction = 0.0;
    if config.volume_correction {
        let (c, delta) = restore_area(next, geo.area)?;
        next = c;
        correction = delta.abs();
    }
    let after = curve_geometry(&next).map_err(curve_guard)?;
    let report = StepReport {
        volume_before: geo.area,
        volume_after: after.area,
        area_before: geo.length,
        area_after: after.length,
        sup_velocity: sup_v,
        correction_magnitude: correction,
    };
    Ok((FlowState { t: state.t + dt, step, shape: Shape::Curve(next) }, report))
}

/// One step of the scheme matching the state's shape.
pub fn step(state: &FlowState, config: &FlowConfig) -> Result<(FlowState, StepReport)> {
    match state.shape {
        Shape::Graph(_) => step_graph(state, config),
        Shape::Curve(_) => step_curve(state, config),
    }
}

/// Real trigonometric interpolant of periodic samples on `[0, 2 pi)`.
struct TrigInterpolant {
    coeffs: Vec<Complex<f64>>,
}

impl TrigInterpolant {
    fn new(curve: &ParametricCurve, values: &[f64]) -> Self {
        Self { coeffs: curve.grid().forward(values).coefficients().to_vec() }
    }

    /// Value and first derivative at `theta`.
    fn eval(&self, theta: f64) -> (f64, f64) {
        let m = self.coeffs.len();
        let half = m / 2;
        let mut value = self.coeffs[0].re;
        let mut deriv = 0.0;
        let step = Complex::from_polar(1.0, theta);
        let mut phase = step;
        for k in 1..half {
            let z = self.coeffs[k] * phase;
            value += 2.0 * z.re;
            deriv -= 2.0 * k as f64 * z.im;
            phase *= step;
        }
        let nyq = self.coeffs[half].re;
        value += nyq * (half as f64 * theta).cos();
        deriv -= nyq * half as f64 * (half as f64 * theta).sin();
        (value / m as f64, deriv / m as f64)
    }
}

/// Resamples the curve at nodes equally spaced in arclength, keeping node 0.
pub fn resample_arclength(curve: &ParametricCurve) -> Result<ParametricCurve> {
    let geo = curve_geometry(curve).map_err(curve_guard)?;
    let m = curve.len();
    let grid = curve.grid();
    // s(theta) = mean_speed * theta + P(theta), P periodic.
    let spec = grid.forward(&geo.speed);
    let mean_speed = spec.coefficients()[0].re / m as f64;
    let periodic: Vec<f64> = spec.apply(|slot| {
        let k = grid.wavenumber(0, slot[0]);
        if k == 0.0 || slot[0] == m / 2 {
            Complex::new(0.0, 0.0)
        } else {
            Complex::new(0.0, -1.0 / k)
        }
    });
    let p0 = periodic[0];
    let arc = TrigInterpolant::new(curve, &periodic);
    let speed = TrigInterpolant::new(curve, &geo.speed);
    let xs = TrigInterpolant::new(curve, curve.x());
    let ys = TrigInterpolant::new(curve, curve.y());
    let length = mean_speed * 2.0 * PI;
    let mut x = Vec::with_capacity(m);
    let mut y = Vec::with_capacity(m);
    for j in 0..m {
        let target = length * j as f64 / m as f64;
        let mut theta = grid.coordinate(j, 0);
        for _ in 0..20 {
            let s = mean_speed * theta + arc.eval(theta).0 - p0;
            let ds = speed.eval(theta).0;
            let delta = (s - target) / ds;
            theta -= delta;
            if delta.abs() < 1e-15 {
                break;
            }
        }
        x.push(xs.eval(theta).0);
        y.push(ys.eval(theta).0);
    }
    make_curve(curve, x, y)
}

/// Why [`run_flow`] stopped.
#[derive(Clone, Debug, PartialEq)]
pub enum HaltReason {
    Converged,
    MaxSteps,
    Guard(GuardViolation),
}

impl HaltReason {
    pub fn label(&self) -> String {
        match self {
            HaltReason::Converged => "converged".into(),
            HaltReason::MaxSteps => "max_steps".into(),
            HaltReason::Guard(g) => format!("guard_violation:{}", g.label()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub series: EnergySeries,
    pub halt: HaltReason,
    pub final_state: FlowState,
    /// Samples at which the Lyapunov energy grew by more than 1e-10 relative.
    pub energy_increases: usize,
    /// Steps that were retried at half step after a guard violation.
    pub retries: usize,
}

/// Sup-distance from the fitted translate of the reference.
pub fn convergence_distance(shape: &Shape) -> Result<f64> {
    Ok(match shape {
        Shape::Graph(s) => {
            let mean = s.heights().mean();
            s.heights().values().iter().fold(0.0, |m, v| m.max((v - mean).abs()))
        }
        Shape::Curve(c) => {
            let geo = curve_geometry(c)?;
            let r = (geo.area / PI).sqrt();
            (0..c.len())
                .map(|j| ((c.x()[j] - geo.centroid[0]).hypot(c.y()[j] - geo.centroid[1]) - r).abs())
                .fold(0.0, f64::max)
        }
    })
}

/// Integrates from `initial` until convergence, `max_steps`, or a guard breach,
/// sampling diagnostics every `sample_every` steps.
pub fn run_flow(
    initial: Shape,
    config: &FlowConfig,
    reference: &FlowReference,
    diag: &DiagnosticsConfig,
    on_sample: &mut dyn FnMut(&FlowState, &SeriesRow),
) -> Result<RunOutcome> {
    config.validate()?;
    diag.validate()?;
    let mut config = config.clone();
    if config.stabilizer.is_none() {
        config.stabilizer = Some(default_stabilizer(&initial));
    }
    let volume_bound = config.volume_bound.or(match &initial {
        Shape::Graph(s) => Some(0.4 * s.grid().torus().side_lengths().iter().copied().fold(f64::INFINITY, f64::min)),
        Shape::Curve(_) => None,
    });
    let mut state = FlowState::new(initial);
    let mut series = EnergySeries::new(matches!(state.shape, Shape::Curve(_)));

    let first = diagnostics::series_row(&state, reference, diag)?;
    let energy_bound = config.energy_bound.unwrap_or(1e6 * first.lyapunov.max(1e-12));
    on_sample(&state, &first);
    let mut last_energy = first.lyapunov;
    series.push(first)?;
    let mut energy_increases = 0;
    let mut retries = 0;

    let finish = |series, halt, state, energy_increases, retries| {
        Ok(RunOutcome { series, halt, final_state: state, energy_increases, retries })
    };

    if convergence_distance(&state.shape)? < config.tolerance {
        return finish(series, HaltReason::Converged, state, energy_increases, retries);
    }

    for _ in 0..config.max_steps {
        let next = match step(&state, &config) {
            Ok((s, _)) => s,
            Err(Error::Guard(first_violation)) => {
                // Single retry at half step, then halt.
                retries += 1;
                let mut half = config.clone();
                half.dt = 0.5 * config.dt;
                let retried = step(&state, &half).and_then(|(s, _)| step(&s, &half));
                match retried {
                    Ok((mut s, _)) => {
                        s.step = state.step + 1;
                        s.t = state.t + config.dt;
                        s
                    }
                    Err(Error::Guard(_)) => {
                        return finish(series, HaltReason::Guard(first_violation), state, energy_increases, retries)
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        state = next;
        let converged = convergence_distance(&state.shape)? < config.tolerance;
        if state.step % config.sample_every == 0 || converged {
            let row = diagnostics::series_row(&state, reference, diag)?;
            if row.lyapunov > last_energy * (1.0 + 1e-10) {
                energy_increases += 1;
            }
            last_energy = row.lyapunov;
            let violation = if !row.lyapunov.is_finite() {
                Some(GuardViolation::NonFinite)
            } else if row.lyapunov > energy_bound {
                Some(GuardViolation::EnergyBound { energy: row.lyapunov, bound: energy_bound })
            } else {
                volume_bound.and_then(|bound| {
                    (row.volume_distance > bound)
                        .then_some(GuardViolation::VolumeDistance { distance: row.volume_distance, bound })
                })
            };
            on_sample(&state, &row);
            series.push(row)?;
            if let Some(v) = violation {
                return finish(series, HaltReason::Guard(v), state, energy_increases, retries);
            }
        }
        if converged {
            return finish(series, HaltReason::Converged, state, energy_increases, retries);
        }
    }
    finish(series, HaltReason::MaxSteps, state, energy_increases, retries)
}
