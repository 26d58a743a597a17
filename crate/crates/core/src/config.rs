//! Line-oriented `key = value` experiment configuration.
//!
//! ```text
//! # lamella with two modes
//! surface.kind = lamella
//! surface.dims = 2
//! surface.periods = 2pi
//! surface.resolution = 32
//! surface.mode = 1,0 0.05
//! surface.mode = 1,1 0.05 0.3
//! flow.scheme = imex
//! flow.max_steps = 5000
//! ```
//!
//! Reals accept a trailing `pi` (`2pi`, `0.5pi`, `pi`). List values are comma
//! separated; a single value is repeated across axes. Each `surface.mode` line
//! adds one mode: wavenumbers (graphs) or order (curves), amplitude, optional phase.

use std::f64::consts::PI;

use crate::diagnostics::{DiagnosticsConfig, FlowReference, GnExponents};
use crate::error::{Error, Result};
use crate::flow::{default_stabilizer, FlowConfig, Scheme, Shape};
use crate::geometry::{curve_geometry, Ambient, FourierMode, GraphSurface, ParametricCurve, RadialMode};
use crate::lattice::{make_grid, Backend, FlatTorus};
use crate::stability::ReferenceSurface;

#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceSpec {
    Lamella {
        periods: Vec<f64>,
        resolution: Vec<usize>,
        level: f64,
        modes: Vec<FourierMode>,
        backend: Backend,
    },
    Curve {
        center: [f64; 2],
        radius: f64,
        /// Semi-axes; `None` means a circle of `radius`.
        axes: Option<[f64; 2]>,
        nodes: usize,
        modes: Vec<RadialMode>,
        ambient: Ambient,
    },
    Cylinder {
        radius: f64,
        axis_period: f64,
        resolution: [usize; 2],
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub surface: SurfaceSpec,
    /// Fully resolved; `None` when the surface cannot be evolved (cylinders).
    pub flow: Option<FlowConfig>,
    pub diag: DiagnosticsConfig,
    pub seed: u64,
    /// Step sizes of the identity subcommand, largest first.
    pub identity_dts: Vec<f64>,
    pub probe_samples: usize,
    pub gn: GnExponents,
    /// Write a snapshot every this many steps (0: final state only).
    pub snapshot_every: usize,
}

const KEYS: &[&str] = &[
    "surface.kind",
    "surface.dims",
    "surface.periods",
    "surface.resolution",
    "surface.level",
    "surface.mode",
    "surface.backend",
    "surface.center",
    "surface.radius",
    "surface.axes",
    "surface.nodes",
    "surface.ambient",
    "surface.axis_period",
    "flow.dt",
    "flow.scheme",
    "flow.stabilizer",
    "flow.volume_correction",
    "flow.max_steps",
    "flow.sample_every",
    "flow.dealias",
    "flow.c1_bound",
    "flow.volume_bound",
    "flow.energy_bound",
    "flow.tolerance",
    "flow.redistribute_every",
    "diag.k",
    "diag.sigma",
    "diag.background_factor",
    "diag.seed",
    "diag.identity_dts",
    "diag.samples",
    "diag.gn",
    "output.snapshot_every",
];

/// Parses a real, allowing a trailing `pi` factor.
pub fn parse_real(text: &str) -> Result<f64> {
    let t = text.trim();
    let value = if let Some(head) = t.strip_suffix("pi") {
        let head = head.trim().trim_end_matches('*');
        let factor = match head {
            "" => 1.0,
            "-" => -1.0,
            h => h.parse::<f64>().map_err(|_| Error::Parse(format!("not a real: {text:?}")))?,
        };
        factor * PI
    } else {
        t.parse::<f64>().map_err(|_| Error::Parse(format!("not a real: {text:?}")))?
    };
    if !value.is_finite() {
        return Err(Error::Parse(format!("nonfinite real: {text:?}")));
    }
    Ok(value)
}

fn parse_list<T>(text: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    text.split(',').map(|s| f(s.trim())).collect()
}

fn parse_usize(text: &str) -> Result<usize> {
    text.trim().parse::<usize>().map_err(|_| Error::Parse(format!("not a nonnegative integer: {text:?}")))
}

fn parse_bool(text: &str) -> Result<bool> {
    match text.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(Error::Parse(format!("not a flag: {other:?}"))),
    }
}

/// Expands a one-element list to `len` copies.
fn per_axis<T: Clone>(values: Vec<T>, len: usize, key: &str) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0].clone(); len]),
        n if n == len => Ok(values),
        n => Err(Error::Config(format!("{key}: expected 1 or {len} values, got {n}"))),
    }
}

struct Entries {
    entries: Vec<(usize, String, String)>,
    errors: Vec<String>,
}

impl Entries {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str())
    }

    fn all(&self, key: &str) -> Vec<(usize, &str)> {
        self.entries.iter().filter(|(_, k, _)| k == key).map(|(l, _, v)| (*l, v.as_str())).collect()
    }

    fn parsed<T>(&mut self, key: &str, f: impl Fn(&str) -> Result<T>) -> Option<T> {
        let v = self.get(key)?.to_string();
        match f(&v) {
            Ok(x) => Some(x),
            Err(e) => {
                self.errors.push(format!("{key}: {e}"));
                None
            }
        }
    }
}

fn tokenize(text: &str) -> Entries {
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errors.push(format!("line {}: expected key = value", n + 1));
            continue;
        };
        let k = k.trim().to_string();
        if !KEYS.contains(&k.as_str()) {
            errors.push(format!("line {}: unknown key {k:?}", n + 1));
            continue;
        }
        entries.push((n + 1, k, v.trim().to_string()));
    }
    Entries { entries, errors }
}

fn parse_scheme(text: &str) -> Result<Scheme> {
    match text.trim() {
        "imex" | "imex_stabilized" => Ok(Scheme::ImexStabilized),
        "rk4" | "explicit_rk4" => Ok(Scheme::ExplicitRk4),
        other => Err(Error::Parse(format!("unknown scheme {other:?}"))),
    }
}

fn parse_backend(text: &str) -> Result<Backend> {
    match text.trim() {
        "spectral" => Ok(Backend::Spectral),
        "finite_difference" | "fd" => Ok(Backend::FiniteDifference),
        other => Err(Error::Parse(format!("unknown backend {other:?}"))),
    }
}

/// Mode line: `wavenumbers amplitude [phase]`.
fn parse_mode_fields(text: &str) -> Result<(Vec<i64>, f64, f64)> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(Error::Parse(format!("mode needs `wavenumbers amplitude [phase]`, got {text:?}")));
    }
    let k = parse_list(parts[0], |s| {
        s.parse::<i64>().map_err(|_| Error::Parse(format!("not an integer wavenumber: {s:?}")))
    })?;
    let amplitude = parse_real(parts[1])?;
    let phase = parts.get(2).map(|p| parse_real(p)).transpose()?.unwrap_or(0.0);
    Ok((k, amplitude, phase))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut e = tokenize(text);
    let kind = e.get("surface.kind").unwrap_or("lamella").to_string();
    let dealias = e.parsed("flow.dealias", parse_bool).unwrap_or(true);
    let surface = match kind.as_str() {
        "lamella" => parse_lamella(&mut e, dealias),
        "curve" | "circle" | "ellipse" => parse_curve(&mut e, dealias),
        "cylinder" => parse_cylinder(&mut e),
        other => {
            e.errors.push(format!("surface.kind: unknown kind {other:?} (lamella, curve, cylinder)"));
            None
        }
    };
    let mut diag = DiagnosticsConfig::default();
    if let Some(k) = e.parsed("diag.k", parse_real) {
        diag.k = k;
    }
    diag.sigma = e.parsed("diag.sigma", parse_real);
    if let Some(b) = e.parsed("diag.background_factor", parse_usize) {
        diag.background_factor = b;
    }
    if let Err(err) = diag.validate() {
        e.errors.push(err.to_string());
    }
    let seed = e.parsed("diag.seed", |s| s.trim().parse::<u64>().map_err(|_| Error::Parse(format!("bad seed {s:?}"))));
    let identity_dts = e.parsed("diag.identity_dts", |s| parse_list(s, parse_real)).unwrap_or_else(|| vec![1e-5, 5e-6]);
    if identity_dts.iter().any(|d| !(*d > 0.0)) {
        e.errors.push("diag.identity_dts: step sizes must be positive".into());
    }
    let probe_samples = e.parsed("diag.samples", parse_usize).unwrap_or(50);
    let gn = e
        .parsed("diag.gn", |s| {
            let v = parse_list(s, parse_real)?;
            if v.len() != 6 || v[0] < 0.0 || v[1] < 0.0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
                return Err(Error::Parse("expected j,m,p,r,q,theta with integer j, m".into()));
            }
            Ok(GnExponents { j: v[0] as u32, m: v[1] as u32, p: v[2], r: v[3], q: v[4], theta: v[5] })
        })
        .unwrap_or(GnExponents { j: 1, m: 2, p: 2.0, r: 2.0, q: 2.0, theta: 0.5 });
    let snapshot_every = e.parsed("output.snapshot_every", parse_usize).unwrap_or(0);

    let mut flow = None;
    if let Some(surface) = &surface {
        match initial_shape(surface) {
            Ok(Some(shape)) => flow = parse_flow(&mut e, &shape, dealias),
            Ok(None) => {}
            Err(err) => e.errors.push(err.to_string()),
        }
        if let (SurfaceSpec::Lamella { resolution, .. }, Some(_)) = (surface, &flow) {
            if let Err(err) = gn.validate(resolution.len()) {
                e.errors.push(format!("diag.gn: {err}"));
            }
        }
    }
    if !e.errors.is_empty() {
        return Err(Error::Config(e.errors.join("; ")));
    }
    Ok(ExperimentConfig {
        surface: surface.expect("errors reported above"),
        flow,
        diag,
        seed: seed.unwrap_or(0),
        identity_dts,
        probe_samples,
        gn,
        snapshot_every,
    })
}

fn parse_lamella(e: &mut Entries, dealias: bool) -> Option<SurfaceSpec> {
    let periods = e.parsed("surface.periods", |s| parse_list(s, parse_real)).unwrap_or_else(|| vec![2.0 * PI]);
    let resolution = e.parsed("surface.resolution", |s| parse_list(s, parse_usize)).unwrap_or_else(|| vec![32]);
    let dim = e.parsed("surface.dims", parse_usize).unwrap_or(2);
    if dim == 0 {
        e.errors.push("surface.dims must be >= 1".into());
        return None;
    }
    let periods = per_axis(periods, dim, "surface.periods").map_err(|err| e.errors.push(err.to_string())).ok()?;
    let resolution =
        per_axis(resolution, dim, "surface.resolution").map_err(|err| e.errors.push(err.to_string())).ok()?;
    let level = e.parsed("surface.level", parse_real).unwrap_or(0.0);
    let backend = e.parsed("surface.backend", parse_backend).unwrap_or(Backend::Spectral);
    let mut modes = Vec::new();
    for (line, text) in e.all("surface.mode").into_iter().map(|(l, t)| (l, t.to_string())).collect::<Vec<_>>() {
        match parse_mode_fields(&text) {
            Ok((k, amplitude, phase)) => {
                if k.len() != dim {
                    e.errors.push(format!("line {line}: mode {text:?} needs {dim} wavenumbers"));
                    continue;
                }
                if dealias {
                    if let Some(axis) = (0..dim).find(|&a| 3 * k[a].unsigned_abs() as usize >= resolution[a]) {
                        e.errors.push(format!(
                            "line {line}: mode {text:?} has wavenumber {} >= N/3 = {} on axis {axis} with dealiasing on",
                            k[axis],
                            resolution[axis] as f64 / 3.0
                        ));
                        continue;
                    }
                }
                modes.push(FourierMode::new(k, amplitude, phase));
            }
            Err(err) => e.errors.push(format!("line {line}: {err}")),
        }
    }
    Some(SurfaceSpec::Lamella { periods, resolution, level, modes, backend })
}

fn parse_curve(e: &mut Entries, dealias: bool) -> Option<SurfaceSpec> {
    let center = e
        .parsed("surface.center", |s| {
            let v = parse_list(s, parse_real)?;
            <[f64; 2]>::try_from(v).map_err(|_| Error::Parse("center needs two values".into()))
        })
        .unwrap_or([0.0, 0.0]);
    let radius = e.parsed("surface.radius", parse_real).unwrap_or(1.0);
    let axes = e.parsed("surface.axes", |s| {
        let v = parse_list(s, parse_real)?;
        <[f64; 2]>::try_from(v).map_err(|_| Error::Parse("axes needs two values".into()))
    });
    let nodes = e.parsed("surface.nodes", parse_usize).unwrap_or(256);
    if nodes % 2 == 1 || nodes < 16 {
        e.errors.push(format!("surface.nodes = {nodes} must be even and >= 16"));
    }
    let ambient = match e.get("surface.ambient").unwrap_or("plane").trim().to_string().as_str() {
        "plane" => Ambient::Plane,
        "torus" => {
            let p = e.parsed("surface.periods", |s| parse_list(s, parse_real)).unwrap_or_else(|| vec![2.0 * PI]);
            match per_axis(p, 2, "surface.periods") {
                Ok(p) => Ambient::Torus([p[0], p[1]]),
                Err(err) => {
                    e.errors.push(err.to_string());
                    Ambient::Plane
                }
            }
        }
        other => {
            e.errors.push(format!("surface.ambient: unknown ambient {other:?}"));
            Ambient::Plane
        }
    };
    let mut modes = Vec::new();
    for (line, text) in e.all("surface.mode").into_iter().map(|(l, t)| (l, t.to_string())).collect::<Vec<_>>() {
        match parse_mode_fields(&text) {
            Ok((k, amplitude, phase)) if k.len() == 1 && k[0] >= 0 => {
                if dealias && 3 * k[0] as usize >= nodes {
                    e.errors.push(format!("line {line}: mode {text:?} has order >= nodes/3 with dealiasing on"));
                    continue;
                }
                modes.push(RadialMode { order: k[0] as u32, amplitude, phase });
            }
            Ok(_) => e.errors.push(format!("line {line}: curve mode {text:?} needs one nonnegative order")),
            Err(err) => e.errors.push(format!("line {line}: {err}")),
        }
    }
    if axes.is_some() && !modes.is_empty() {
        e.errors.push("surface.axes and surface.mode cannot be combined".into());
    }
    Some(SurfaceSpec::Curve { center, radius, axes, nodes, modes, ambient })
}

fn parse_cylinder(e: &mut Entries) -> Option<SurfaceSpec> {
    let radius = e.parsed("surface.radius", parse_real).unwrap_or(1.0);
    let axis_period = e.parsed("surface.axis_period", parse_real).unwrap_or(PI);
    let res = e.parsed("surface.resolution", |s| parse_list(s, parse_usize)).unwrap_or_else(|| vec![32, 16]);
    let res = per_axis(res, 2, "surface.resolution").map_err(|err| e.errors.push(err.to_string())).ok()?;
    Some(SurfaceSpec::Cylinder { radius, axis_period, resolution: [res[0], res[1]] })
}

fn parse_flow(e: &mut Entries, shape: &Shape, dealias: bool) -> Option<FlowConfig> {
    let scheme = e.parsed("flow.scheme", parse_scheme).unwrap_or(Scheme::ImexStabilized);
    let mut f = FlowConfig::for_shape(shape, scheme);
    f.dealias = dealias;
    if let Some(v) = e.parsed("flow.dt", parse_real) {
        f.dt = v;
    }
    f.stabilizer = Some(e.parsed("flow.stabilizer", parse_real).unwrap_or_else(|| default_stabilizer(shape)));
    if let Some(v) = e.parsed("flow.volume_correction", parse_bool) {
        f.volume_correction = v;
    }
    if let Some(v) = e.parsed("flow.max_steps", parse_usize) {
        f.max_steps = v;
    }
    if let Some(v) = e.parsed("flow.sample_every", parse_usize) {
        f.sample_every = v;
    }
    if let Some(v) = e.parsed("flow.c1_bound", parse_real) {
        f.c1_bound = v;
    }
    f.volume_bound = e.parsed("flow.volume_bound", parse_real);
    f.energy_bound = e.parsed("flow.energy_bound", parse_real);
    if let Some(v) = e.parsed("flow.tolerance", parse_real) {
        f.tolerance = v;
    }
    if let Some(v) = e.parsed("flow.redistribute_every", parse_usize) {
        f.redistribute_every = v;
    }
    match f.validate() {
        Ok(()) => Some(f),
        Err(err) => {
            e.errors.push(err.to_string());
            None
        }
    }
}

/// The initial shape of an evolvable surface, `None` for cylinders.
pub fn initial_shape(surface: &SurfaceSpec) -> Result<Option<Shape>> {
    Ok(match surface {
        SurfaceSpec::Lamella { periods, resolution, level, modes, backend } => {
            let grid = make_grid(FlatTorus::new(periods.clone())?, resolution)?.with_backend(*backend);
            Some(Shape::Graph(GraphSurface::perturbed(grid, *level, modes)?))
        }
        SurfaceSpec::Curve { center, radius, axes, nodes, modes, ambient } => {
            let c = match axes {
                Some([a, b]) => ParametricCurve::ellipse(*center, *a, *b, *nodes)?,
                None => ParametricCurve::radial(*center, *radius, modes, *nodes)?,
            };
            Some(Shape::Curve(c.with_ambient(ambient.clone())))
        }
        SurfaceSpec::Cylinder { .. } => None,
    })
}

impl ExperimentConfig {
    pub fn initial_shape(&self) -> Result<Option<Shape>> {
        initial_shape(&self.surface)
    }

    /// Flow reference: the unperturbed level, or the circle of equal area
    /// centred at the initial centroid.
    pub fn flow_reference(&self) -> Result<FlowReference> {
        match (&self.surface, self.initial_shape()?) {
            (SurfaceSpec::Lamella { level, .. }, _) => Ok(FlowReference::Lamella { level: *level }),
            (SurfaceSpec::Curve { .. }, Some(Shape::Curve(c))) => {
                let geo = curve_geometry(&c)?;
                Ok(FlowReference::Circle { center: geo.centroid, radius: (geo.area / PI).sqrt() })
            }
            _ => Err(Error::config("cylinder surfaces support only the stability subcommand")),
        }
    }

    /// Surface analysed by the stability subcommand.
    pub fn stability_reference(&self) -> Result<ReferenceSurface> {
        Ok(match &self.surface {
            SurfaceSpec::Lamella { modes, .. } => match self.initial_shape()? {
                Some(Shape::Graph(s)) if !modes.is_empty() => ReferenceSurface::Graph(s),
                Some(Shape::Graph(s)) => ReferenceSurface::Lamella(s.grid().clone()),
                _ => unreachable!("lamella specs build graphs"),
            },
            SurfaceSpec::Curve { radius, nodes, axes: None, modes, .. } if modes.is_empty() => {
                ReferenceSurface::Circle { radius: *radius, nodes: *nodes }
            }
            SurfaceSpec::Curve { .. } => {
                return Err(Error::config("stability of curves is defined for circles only"));
            }
            SurfaceSpec::Cylinder { radius, axis_period, resolution } => {
                ReferenceSurface::Cylinder { radius: *radius, axis_period: *axis_period, resolution: *resolution }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_lamella_defaults() {
        let c = parse_config("surface.kind = lamella\nsurface.resolution = 16\n").unwrap();
        let f = c.flow.unwrap();
        assert_eq!(f.scheme, Scheme::ImexStabilized);
        assert_eq!(f.stabilizer, Some(2.0));
        let h = 2.0 * PI / 16.0;
        assert!((f.dt - 1e-3 * h * h).abs() < 1e-18);
        assert_eq!(c.diag.k, 4.0);
    }

    #[test]
    fn pi_suffix() {
        assert_eq!(parse_real("2pi").unwrap(), 2.0 * PI);
        assert_eq!(parse_real("pi").unwrap(), PI);
        assert_eq!(parse_real("-0.5pi").unwrap(), -0.5 * PI);
        assert!(parse_real("twopi").is_err());
    }

    #[test]
    fn high_mode_rejected_by_name() {
        let err = parse_config("surface.resolution = 16\nsurface.mode = 6,0 0.01\n").unwrap_err().to_string();
        assert!(err.contains("6,0 0.01"), "{err}");
    }

    #[test]
    fn odd_curve_nodes_rejected() {
        let err = parse_config("surface.kind = curve\nsurface.nodes = 65\n").unwrap_err().to_string();
        assert!(err.contains("surface.nodes"), "{err}");
    }

    #[test]
    fn every_problem_is_listed() {
        let err = parse_config("surface.colour = red\nflow.dt = -1\ndiag.k = 1\n").unwrap_err().to_string();
        assert!(err.contains("surface.colour") && err.contains("flow.dt") && err.contains("diag.k"), "{err}");
    }

    #[test]
    fn repeated_modes_accumulate() {
        let c = parse_config("surface.mode = 1,0 0.05\nsurface.mode = 1,1 0.05 pi\n").unwrap();
        let SurfaceSpec::Lamella { modes, .. } = c.surface else { panic!() };
        assert_eq!(modes.len(), 2);
        assert_eq!(modes[1].phase, PI);
    }
}
