//! Energies, identities, distance functionals, coercivity margins and
//! inequality probes evaluated along a flow.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{FlowState, Shape};
use crate::geometry::{
    covariant_hessian, curve_geometry, enclosed_volume, CurveGeometry, GeometryCache, GraphSurface, ParametricCurve,
};
use crate::lattice::{pairwise_sum, FlatTorus, ScalarField};
use crate::stability::{lamella_sigma_min, quadratic_form};

/// The critical set a run is measured against.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowReference {
    /// Flat face `{x_n = level}`.
    Lamella {
        level: f64,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
    },
}

impl FlowReference {
    /// Minimal Jacobi eigenvalue on the complement of translations.
    pub fn sigma_min(&self, torus: Option<&FlatTorus>) -> Result<f64> {
        match (self, torus) {
            (FlowReference::Lamella { .. }, Some(t)) => Ok(lamella_sigma_min(t)),
            (FlowReference::Circle { radius, .. }, _) => Ok(3.0 / (radius * radius)),
            (FlowReference::Lamella { .. }, None) => Err(Error::config("lamella reference needs a torus")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsConfig {
    /// Weight of the Dirichlet term in the Lyapunov energy; must exceed 2.
    pub k: f64,
    /// Coercivity constant; `None` uses the reference's `sigma_min`.
    pub sigma: Option<f64>,
    /// Background cells per curve node along each axis for curve distances.
    pub background_factor: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { k: 4.0, sigma: None, background_factor: 4 }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 2.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("diag.k = {} must be > 2", self.k)));
        }
        if self.background_factor == 0 {
            return Err(Error::config("diag.background_factor must be >= 1"));
        }
        Ok(())
    }
}

/// One sample of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub area: f64,
    pub volume: f64,
    pub dirichlet: f64,
    pub hessian: f64,
    pub lyapunov: f64,
    pub sup_grad: f64,
    pub distance: f64,
    pub pi_margin: f64,
    pub fit_residual: f64,
    /// Isoperimetric deficit, curves only.
    pub deficit: Option<f64>,
    /// `Vol(F ^ E)`, used by the volume-distance guard; not written to series files.
    pub volume_distance: f64,
}

pub const SERIES_COLUMNS: [&str; 10] =
    ["t", "area", "volume", "dirichlet", "hessian", "lyapunov", "sup_grad", "D", "pi_margin", "fit_residual"];

impl SeriesRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        Some(match column {
            "t" => self.t,
            "area" => self.area,
            "volume" => self.volume,
            "dirichlet" => self.dirichlet,
            "hessian" => self.hessian,
            "lyapunov" => self.lyapunov,
            "sup_grad" => self.sup_grad,
            "D" => self.distance,
            "pi_margin" => self.pi_margin,
            "fit_residual" => self.fit_residual,
            "deficit" => return self.deficit,
            _ => return None,
        })
    }
}

/// Time-indexed diagnostics rows with strictly increasing `t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergySeries {
    curve: bool,
    rows: Vec<SeriesRow>,
}

impl EnergySeries {
    pub fn new(curve: bool) -> Self {
        Self { curve, rows: Vec::new() }
    }

    pub fn is_curve(&self) -> bool {
        self.curve
    }

    pub fn rows(&self) -> &[SeriesRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: SeriesRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(Error::config(format!("series time {} does not exceed {}", row.t, last.t)));
            }
        }
        if self.curve != row.deficit.is_some() {
            return Err(Error::config("deficit column must be present exactly for curve series"));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Column names in file order.
    pub fn columns(&self) -> Vec<&'static str> {
        let mut c = SERIES_COLUMNS.to_vec();
        if self.curve {
            c.push("deficit");
        }
        c
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.get(name)).collect()
    }

    /// [`exp_rate_fit`] of `column` over rows with `t` in `[t0, t1]`.
    pub fn rate_fit(&self, column: &str, t0: f64, t1: f64) -> Result<RateFit> {
        let values = self.column(column).ok_or_else(|| Error::Config(format!("unknown column {column}")))?;
        let (ts, vs): (Vec<f64>, Vec<f64>) =
            self.rows.iter().zip(values).filter(|(r, _)| r.t >= t0 && r.t <= t1).map(|(r, v)| (r.t, v)).unzip();
        exp_rate_fit(&ts, &vs)
    }
}

/// `|grad H|^2`, `Delta H` and the Hessian of `H` from one set of transforms.
struct CurvatureDerivatives {
    grad: Vec<Vec<f64>>,
    grad_norm2: Vec<f64>,
    laplacian: Vec<f64>,
    hessian_norm2: Vec<f64>,
}

fn curvature_derivatives(cache: &GeometryCache) -> CurvatureDerivatives {
    let h = cache.mean_curvature_field();
    let grad = cache.gradient(h.values());
    let grad_norm2 = cache.covector_dot(&grad, &grad);
    let laplacian = cache.divergence_of_gradient(&grad);
    let hessian_norm2 = covariant_hessian(cache, &h).expect("same grid").norm2(cache);
    CurvatureDerivatives { grad, grad_norm2, laplacian, hessian_norm2 }
}

/// `int |grad H|^2 dmu`.
pub fn dirichlet_energy(cache: &GeometryCache) -> f64 {
    let h = cache.mean_curvature();
    cache.integrate(&cache.gradient_norm2(h))
}

/// `int |nabla^2 H|^2 dmu`, fully contracted with the inverse metric.
pub fn hessian_energy(cache: &GeometryCache) -> f64 {
    let h = cache.mean_curvature_field();
    let norm2 = covariant_hessian(cache, &h).expect("same grid").norm2(cache);
    cache.integrate(&norm2)
}

/// `hessian + K * dirichlet`.
pub fn lyapunov_energy(cache: &GeometryCache, k: f64) -> Result<f64> {
    if !(k > 2.0) {
        return Err(Error::Config(format!("Lyapunov weight K = {k} must exceed 2")));
    }
    Ok(hessian_energy(cache) + k * dirichlet_energy(cache))
}

/// Whether [`order_energy`] is the exact top-order quantity or the order-2 proxy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnergyOrder {
    Exact,
    Proxy,
}

/// `int |nabla^(n-2) H|^2 dmu` for a hypersurface of dimension `n - 1`;
/// orders above 2 fall back to the Hessian energy and are flagged.
pub fn order_energy(cache: &GeometryCache) -> (f64, EnergyOrder) {
    match cache.dim() + 1 {
        2 => {
            let h = cache.mean_curvature();
            let sq: Vec<f64> = h.iter().map(|v| v * v).collect();
            (cache.integrate(&sq), EnergyOrder::Exact)
        }
        3 => (dirichlet_energy(cache), EnergyOrder::Exact),
        4 => (hessian_energy(cache), EnergyOrder::Exact),
        _ => (hessian_energy(cache), EnergyOrder::Proxy),
    }
}

/// Right side of the Dirichlet-energy evolution law:
/// `-2 Pi(Delta H) + int H Delta H |grad H|^2 - 2 int h^ij d_i H d_j H Delta H`.
pub fn dirichlet_rate(cache: &GeometryCache) -> f64 {
    let cd = curvature_derivatives(cache);
    let d = cache.dim();
    let h = cache.mean_curvature();
    let lap = ScalarField::from_parts(cache.grid().clone(), cd.laplacian.clone());
    let pi = quadratic_form(cache, &lap).expect("same grid");
    let cubic: Vec<f64> = (0..cache.len()).map(|p| h[p] * cd.laplacian[p] * cd.grad_norm2[p]).collect();
    let second: Vec<f64> = (0..cache.len())
        .map(|p| {
            let raised: Vec<f64> =
                (0..d).map(|i| (0..d).map(|j| cache.metric_inv(i, j)[p] * cd.grad[j][p]).sum()).collect();
            let mut b = 0.0;
            for i in 0..d {
                for j in 0..d {
                    b += cache.second_form(i, j)[p] * raised[i] * raised[j];
                }
            }
            b * cd.laplacian[p]
        })
        .collect();
    -2.0 * pi + cache.integrate(&cubic) - 2.0 * cache.integrate(&second)
}

/// Relative mismatch between the central difference of the Dirichlet energy
/// over three consecutive states and [`dirichlet_rate`] at the middle one.
pub fn energy_identity_residual(window: &[FlowState], dt: f64) -> Result<f64> {
    if window.len() < 3 {
        return Err(Error::InsufficientSamples(format!("identity needs 3 states, got {}", window.len())));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt = {dt} must be positive")));
    }
    let e0 = dirichlet_energy(&window[0].geometry()?);
    let e2 = dirichlet_energy(&window[2].geometry()?);
    let rhs = dirichlet_rate(&window[1].geometry()?);
    let lhs = (e2 - e0) / (2.0 * dt);
    let scale = lhs.abs().max(rhs.abs());
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale })
}

/// `Pi(Delta H) - sigma * ||grad H||^2`.
pub fn pi_coercivity_margin(cache: &GeometryCache, sigma: f64) -> f64 {
    let cd = curvature_derivatives(cache);
    coercivity_from(cache, &cd, sigma)
}

fn coercivity_from(cache: &GeometryCache, cd: &CurvatureDerivatives, sigma: f64) -> f64 {
    let lap = ScalarField::from_parts(cache.grid().clone(), cd.laplacian.clone());
    quadratic_form(cache, &lap).expect("same grid") - sigma * cache.integrate(&cd.grad_norm2)
}

/// Translation fitted to the reference and the `L^2` size of what remains.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslateFit {
    /// Vertical offset (one component) for lamellae, centre shift for circles.
    pub shift: Vec<f64>,
    pub residual: f64,
}

fn lamella_fit(surface: &GraphSurface, level: f64) -> TranslateFit {
    let mean = surface.heights().mean();
    let dev: Vec<f64> = surface.heights().values().iter().map(|v| (v - mean).powi(2)).collect();
    let residual = (pairwise_sum(&dev) * surface.grid().cell_measure()).sqrt();
    TranslateFit { shift: vec![mean - level], residual }
}

fn circle_fit(curve: &ParametricCurve, geo: &CurveGeometry, center: [f64; 2], radius: f64) -> TranslateFit {
    let c = geo.centroid;
    let dev: Vec<f64> =
        (0..curve.len()).map(|j| ((curve.x()[j] - c[0]).hypot(curve.y()[j] - c[1]) - radius).powi(2)).collect();
    let residual = geo.cache.integrate(&dev).sqrt();
    TranslateFit { shift: vec![c[0] - center[0], c[1] - center[1]], residual }
}

pub fn translate_fit(shape: &Shape, reference: &FlowReference) -> Result<TranslateFit> {
    match (shape, reference) {
        (Shape::Graph(s), FlowReference::Lamella { level }) => Ok(lamella_fit(s, *level)),
        (Shape::Curve(c), FlowReference::Circle { center, radius }) => {
            Ok(circle_fit(c, &curve_geometry(c)?, *center, *radius))
        }
        _ => Err(reference_mismatch()),
    }
}

fn reference_mismatch() -> Error {
    Error::config("reference kind does not match the surface kind")
}

/// `D = int_{F ^ E} dist(x, boundary E) dx`.
pub fn distance_functional(shape: &Shape, reference: &FlowReference, diag: &DiagnosticsConfig) -> Result<f64> {
    Ok(distance_and_volume(shape, reference, diag)?.0)
}

/// `D` and `Vol(F ^ E)` together.
pub fn distance_and_volume(shape: &Shape, reference: &FlowReference, diag: &DiagnosticsConfig) -> Result<(f64, f64)> {
    match (shape, reference) {
        (Shape::Graph(s), FlowReference::Lamella { level }) => {
            let cell = s.grid().cell_measure();
            let sq: Vec<f64> = s.heights().values().iter().map(|v| 0.5 * (v - level).powi(2)).collect();
            let ab: Vec<f64> = s.heights().values().iter().map(|v| (v - level).abs()).collect();
            Ok((pairwise_sum(&sq) * cell, pairwise_sum(&ab) * cell))
        }
        (Shape::Curve(c), FlowReference::Circle { center, radius }) => {
            Ok(curve_circle_distance(c, *center, *radius, diag.background_factor))
        }
        _ => Err(reference_mismatch()),
    }
}

/// Scanline membership on a background grid with `factor * m` cells across the
/// bounding box; the curve is taken as the polygon through its nodes.
fn curve_circle_distance(curve: &ParametricCurve, center: [f64; 2], radius: f64, factor: usize) -> (f64, f64) {
    let (x, y) = (curve.x(), curve.y());
    let m = curve.len();
    let fold = |v: &[f64], init: f64, f: fn(f64, f64) -> f64| v.iter().copied().fold(init, f);
    let x0 = fold(x, center[0] - radius, f64::min);
    let x1 = fold(x, center[0] + radius, f64::max);
    let y0 = fold(y, center[1] - radius, f64::min);
    let y1 = fold(y, center[1] + radius, f64::max);
    let cells = factor * m;
    let h = (x1 - x0).max(y1 - y0) / cells as f64;
    let (x0, y0) = (x0 - 2.0 * h, y0 - 2.0 * h);
    let nx = ((x1 - x0) / h).ceil() as usize + 2;
    let ny = ((y1 - y0) / h).ceil() as usize + 2;
    let mut dist_rows = Vec::with_capacity(ny);
    let mut count_rows = Vec::with_capacity(ny);
    let mut crossings: Vec<(f64, u8)> = Vec::new();
    for r in 0..ny {
        let yc = y0 + (r as f64 + 0.5) * h;
        crossings.clear();
        for j in 0..m {
            let k = (j + 1) % m;
            if (y[j] <= yc) != (y[k] <= yc) {
                crossings.push((x[j] + (yc - y[j]) * (x[k] - x[j]) / (y[k] - y[j]), 0));
            }
        }
        let dy = yc - center[1];
        if dy.abs() < radius {
            let w = (radius * radius - dy * dy).sqrt();
            crossings.push((center[0] - w, 1));
            crossings.push((center[0] + w, 1));
        }
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut parity = [false, false];
        let mut row_dist = Vec::new();
        let mut row_count = 0usize;
        for w in 0..crossings.len() {
            parity[crossings[w].1 as usize] ^= true;
            if parity[0] != parity[1] && w + 1 < crossings.len() {
                let (a, b) = (crossings[w].0, crossings[w + 1].0);
                let first = ((a - x0) / h - 0.5).ceil().max(0.0) as usize;
                let mut col = first;
                loop {
                    let xc = x0 + (col as f64 + 0.5) * h;
                    if xc >= b || col >= nx {
                        break;
                    }
                    row_dist.push(((xc - center[0]).hypot(dy) - radius).abs());
                    row_count += 1;
                    col += 1;
                }
            }
        }
        dist_rows.push(pairwise_sum(&row_dist));
        count_rows.push(row_count as f64);
    }
    (pairwise_sum(&dist_rows) * h * h, pairwise_sum(&count_rows) * h * h)
}

/// `L^2 / (4 pi A) - 1`.
pub fn isoperimetric_deficit(geo: &CurveGeometry) -> f64 {
    geo.length * geo.length / (4.0 * PI * geo.area) - 1.0
}

/// Full diagnostics row for a state.
pub fn series_row(state: &FlowState, reference: &FlowReference, diag: &DiagnosticsConfig) -> Result<SeriesRow> {
    let (cache, area, volume, sup_grad, fit, deficit, torus) = match (&state.shape, reference) {
        (Shape::Graph(s), FlowReference::Lamella { level }) => {
            let cache = crate::geometry::build_geometry(s)?;
            let area = cache.area();
            (cache, area, enclosed_volume(s), s.sup_gradient(), lamella_fit(s, *level), None, Some(s.grid().torus()))
        }
        (Shape::Curve(c), FlowReference::Circle { center, radius }) => {
            let geo = curve_geometry(c)?;
            let fit = circle_fit(c, &geo, *center, *radius);
            let deficit = isoperimetric_deficit(&geo);
            let CurveGeometry { cache, length, area, .. } = geo;
            let sup = cache.gradient_norm2(cache.mean_curvature()).iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
            (cache, length, area, sup, fit, Some(deficit), None)
        }
        _ => return Err(reference_mismatch()),
    };
    let sigma = match diag.sigma {
        Some(s) => s,
        None => reference.sigma_min(torus)?,
    };
    let cd = curvature_derivatives(&cache);
    let dirichlet = cache.integrate(&cd.grad_norm2);
    let hessian = cache.integrate(&cd.hessian_norm2);
    let (distance, volume_distance) = distance_and_volume(&state.shape, reference, diag)?;
    Ok(SeriesRow {
        t: state.t,
        area,
        volume,
        dirichlet,
        hessian,
        lyapunov: hessian + diag.k * dirichlet,
        sup_grad,
        distance,
        pi_margin: coercivity_from(&cache, &cd, sigma),
        fit_residual: fit.residual,
        deficit,
        volume_distance,
    })
}

/// Exponential decay rate from a least-squares line through `ln(values)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    /// Coefficient of determination of the log-linear fit.
    pub quality: f64,
    pub samples: usize,
}

pub fn exp_rate_fit(ts: &[f64], values: &[f64]) -> Result<RateFit> {
    if ts.len() != values.len() {
        return Err(Error::config("time and value columns differ in length"));
    }
    if ts.len() < 10 {
        return Err(Error::InsufficientSamples(format!("rate fit needs 10 samples, got {}", ts.len())));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Config(format!("rate fit needs positive values, found {v}")));
    }
    let n = ts.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let tm = pairwise_sum(ts) / n;
    let lm = pairwise_sum(&logs) / n;
    let stt: Vec<f64> = ts.iter().map(|t| (t - tm).powi(2)).collect();
    let stl: Vec<f64> = ts.iter().zip(&logs).map(|(t, l)| (t - tm) * (l - lm)).collect();
    let stt = pairwise_sum(&stt);
    if stt == 0.0 {
        return Err(Error::InsufficientSamples("rate fit needs distinct times".into()));
    }
    let slope = pairwise_sum(&stl) / stt;
    let res: Vec<f64> = ts.iter().zip(&logs).map(|(t, l)| (l - lm - slope * (t - tm)).powi(2)).collect();
    let tot: Vec<f64> = logs.iter().map(|l| (l - lm).powi(2)).collect();
    let (res, tot) = (pairwise_sum(&res), pairwise_sum(&tot));
    let quality = if tot == 0.0 { 1.0 } else { 1.0 - res / tot };
    Ok(RateFit { rate: -slope, quality, samples: ts.len() })
}

/// Random band-limited field: a few sine modes with wavenumbers up to `kmax`.
fn random_field(cache: &GeometryCache, rng: &mut ChaCha8Rng, kmax: i64) -> ScalarField {
    let grid = cache.grid().clone();
    let d = grid.dimension();
    let lengths = grid.torus().side_lengths().to_vec();
    let terms: Vec<(Vec<i64>, f64, f64)> = (0..rng.random_range(1..=6))
        .map(|_| {
            let k: Vec<i64> = loop {
                let k: Vec<i64> = (0..d).map(|_| rng.random_range(-kmax..=kmax)).collect();
                if k.iter().any(|v| *v != 0) {
                    break k;
                }
            };
            (k, rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    ScalarField::from_fn(grid, |x| {
        terms
            .iter()
            .map(|(k, a, ph)| {
                let arg: f64 = (0..d).map(|i| 2.0 * PI * k[i] as f64 * x[i] / lengths[i]).sum();
                a * (arg + ph).sin()
            })
            .sum()
    })
}

fn probe_kmax(cache: &GeometryCache) -> i64 {
    let n = cache.grid().resolution().iter().copied().min().unwrap_or(8) as i64;
    (n / 3 - 1).clamp(1, 6)
}

fn first_modes(cache: &GeometryCache) -> Vec<ScalarField> {
    let grid = cache.grid().clone();
    let lengths = grid.torus().side_lengths().to_vec();
    (0..grid.dimension())
        .map(|axis| {
            let l = lengths[axis];
            ScalarField::from_fn(grid.clone(), move |x| (2.0 * PI * x[axis] / l).sin())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoincareReport {
    /// Largest `||u - mean u|| / ||grad u||` over evaluated samples.
    pub worst_ratio: f64,
    pub evaluated: usize,
    /// Samples with vanishing gradient, excluded from the ratio.
    pub skipped: usize,
}

fn l2_norm(cache: &GeometryCache, u: &[f64]) -> f64 {
    let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
    cache.integrate(&sq).sqrt()
}

/// Ratio for one field, `None` when its gradient vanishes.
pub fn poincare_ratio(cache: &GeometryCache, u: &ScalarField) -> Result<Option<f64>> {
    if u.grid() != cache.grid() {
        return Err(Error::GridMismatch);
    }
    let grad = cache.integrate(&cache.gradient_norm2(u.values())).sqrt();
    let scale = u.sup_norm().max(1.0);
    if grad <= 1e-12 * scale {
        return Ok(None);
    }
    let mean = cache.integrate(u.values()) / cache.area();
    let centered: Vec<f64> = u.values().iter().map(|v| v - mean).collect();
    Ok(Some(l2_norm(cache, &centered) / grad))
}

/// Poincare ratio over the first Fourier mode of each axis, a constant
/// (always skipped) and `samples` random band-limited fields.
pub fn poincare_probe(cache: &GeometryCache, samples: usize, seed: u64) -> Result<PoincareReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = probe_kmax(cache);
    let mut fields = first_modes(cache);
    fields.push(ScalarField::constant(cache.grid().clone(), 1.0));
    fields.extend((0..samples).map(|_| random_field(cache, &mut rng, kmax)));
    let mut report = PoincareReport { worst_ratio: 0.0, evaluated: 0, skipped: 0 };
    for u in &fields {
        match poincare_ratio(cache, u)? {
            Some(r) => {
                report.worst_ratio = report.worst_ratio.max(r);
                report.evaluated += 1;
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}

/// Exponents of a Gagliardo-Nirenberg inequality
/// `||nabla^j u||_p <= C ||nabla^m u||_r^theta ||u||_q^(1-theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnExponents {
    pub j: u32,
    pub m: u32,
    pub p: f64,
    pub r: f64,
    pub q: f64,
    pub theta: f64,
}

impl GnExponents {
    /// Checks `j < m <= 2`, `theta in [j/m, 1)` and the scaling condition in dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.j < self.m && self.m <= 2) {
            problems.push(format!("need j < m <= 2, got j = {}, m = {}", self.j, self.m));
        }
        for (name, v) in [("p", self.p), ("r", self.r), ("q", self.q)] {
            if !(v >= 1.0) {
                problems.push(format!("{name} = {v} must be >= 1"));
            }
        }
        let lo = self.j as f64 / self.m.max(1) as f64;
        if !(self.theta >= lo && self.theta < 1.0) {
            problems.push(format!("theta = {} outside [{lo}, 1)", self.theta));
        }
        let d = d as f64;
        let rhs = self.j as f64 / d + self.theta * (1.0 / self.r - self.m as f64 / d) + (1.0 - self.theta) / self.q;
        if (1.0 / self.p - rhs).abs() > 1e-12 {
            problems.push(format!("incompatible exponents: 1/p = {} but scaling gives {rhs}", 1.0 / self.p));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

fn lp_norm(cache: &GeometryCache, pointwise: &[f64], p: f64) -> f64 {
    let pow: Vec<f64> = pointwise.iter().map(|v| v.abs().powf(p)).collect();
    cache.integrate(&pow).powf(1.0 / p)
}

/// `|nabla^k u|` per node for `k <= 2`.
fn derivative_magnitude(cache: &GeometryCache, u: &ScalarField, k: u32) -> Result<Vec<f64>> {
    Ok(match k {
        0 => u.values().iter().map(|v| v.abs()).collect(),
        1 => cache.gradient_norm2(u.values()).iter().map(|v| v.sqrt()).collect(),
        _ => covariant_hessian(cache, u)?.norm2(cache).iter().map(|v| v.max(0.0).sqrt()).collect(),
    })
}

/// GN quotient of a single field; `None` when the denominator vanishes.
pub fn gn_ratio(cache: &GeometryCache, u: &ScalarField, e: &GnExponents) -> Result<Option<f64>> {
    e.validate(cache.dim())?;
    let num = lp_norm(cache, &derivative_magnitude(cache, u, e.j)?, e.p);
    let top = lp_norm(cache, &derivative_magnitude(cache, u, e.m)?, e.r);
    let low = lp_norm(cache, &derivative_magnitude(cache, u, 0)?, e.q);
    let den = top.powf(e.theta) * low.powf(1.0 - e.theta);
    Ok((den > 0.0).then(|| num / den))
}

/// Largest GN quotient over the first modes and `samples` random fields.
pub fn gn_probe(cache: &GeometryCache, samples: usize, exponents: &GnExponents, seed: u64) -> Result<f64> {
    exponents.validate(cache.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = probe_kmax(cache);
    let mut worst: f64 = 0.0;
    let mut fields = first_modes(cache);
    fields.extend((0..samples).map(|_| random_field(cache, &mut rng, kmax)));
    for u in &fields {
        if let Some(r) = gn_ratio(cache, u, exponents)? {
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, FourierMode};
    use crate::lattice::make_grid;

    fn graph(n: usize, level: f64, modes: &[FourierMode]) -> GraphSurface {
        let grid = make_grid(FlatTorus::cube(2.0 * PI, 2).unwrap(), &[n, n]).unwrap();
        GraphSurface::perturbed(grid, level, modes).unwrap()
    }

    #[test]
    fn flat_energies_vanish() {
        let c = build_geometry(&graph(16, 0.4, &[])).unwrap();
        assert!(dirichlet_energy(&c).abs() <= 1e-14);
        assert!(hessian_energy(&c).abs() <= 1e-14);
        assert_eq!(lyapunov_energy(&c, 4.0).unwrap(), 0.0);
        assert!(lyapunov_energy(&c, 2.0).is_err());
        assert_eq!(pi_coercivity_margin(&c, 1.0), 0.0);
    }

    #[test]
    fn small_sine_energies() {
        let eps = 1e-3;
        let c = build_geometry(&graph(32, 0.0, &[FourierMode::new(vec![1, 0], eps, 0.0)])).unwrap();
        let oracle = 2.0 * PI * PI * eps * eps;
        assert!((dirichlet_energy(&c) - oracle).abs() <= 10.0 * oracle * eps * eps);
        assert!((hessian_energy(&c) - oracle).abs() <= 10.0 * oracle * eps * eps);
        let e = lyapunov_energy(&c, 4.0).unwrap();
        assert!((e - 5.0 * oracle).abs() <= 50.0 * oracle * eps * eps);
        let f = hessian_energy(&c) + dirichlet_energy(&c);
        assert!(f <= e && e <= 4.0 * f);
    }

    #[test]
    fn distance_closed_forms() {
        let diag = DiagnosticsConfig::default();
        let reference = FlowReference::Lamella { level: 0.7 };
        let a = 0.3;
        let shifted = Shape::Graph(graph(16, 0.7 + a, &[]));
        let d = distance_functional(&shifted, &reference, &diag).unwrap();
        assert!((d - 2.0 * PI * PI * a * a).abs() <= 1e-12);
        let sine = Shape::Graph(graph(16, 0.7, &[FourierMode::new(vec![1, 0], a, 0.0)]));
        let d = distance_functional(&sine, &reference, &diag).unwrap();
        assert!((d - a * a * PI * PI).abs() <= 1e-12);
        assert!(distance_functional(&shifted, &FlowReference::Circle { center: [0.0; 2], radius: 1.0 }, &diag).is_err());
    }

    #[test]
    fn curve_distance_of_shifted_circle() {
        let s = 0.01;
        let c = ParametricCurve::circle([s, 0.0], 1.0, 256).unwrap();
        let (d, vol) = curve_circle_distance(&c, [0.0, 0.0], 1.0, 4);
        // Symmetric difference area to first order: int |s cos t| dt = 4 s.
        assert!((vol - 4.0 * s).abs() < 0.02 * 4.0 * s, "vol {vol}");
        // Distance integral to leading order: int (s cos t)^2 / 2 dt = pi s^2 / 2.
        assert!((d - PI * s * s / 2.0).abs() < 0.05 * PI * s * s / 2.0, "d {d}");
    }

    #[test]
    fn circle_fit_recovers_shift() {
        let c = ParametricCurve::circle([0.3, -0.2], 1.0, 64).unwrap();
        let fit = translate_fit(&Shape::Curve(c), &FlowReference::Circle { center: [0.0, 0.0], radius: 1.0 }).unwrap();
        assert!((fit.shift[0] - 0.3).abs() < 1e-12 && (fit.shift[1] + 0.2).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn rate_fit_of_exponential() {
        let ts: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
        let vs: Vec<f64> = ts.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let fit = exp_rate_fit(&ts, &vs).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-12 && (fit.quality - 1.0).abs() < 1e-12);
        assert!(exp_rate_fit(&ts[..5], &vs[..5]).is_err());
        let mut bad = vs.clone();
        bad[3] = 0.0;
        assert!(exp_rate_fit(&ts, &bad).is_err());
    }

    #[test]
    fn gn_compatibility() {
        let ok = GnExponents { j: 1, m: 2, p: 2.0, r: 2.0, q: 2.0, theta: 0.5 };
        assert!(ok.validate(2).is_ok());
        let bad = GnExponents { p: 3.0, ..ok };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn series_rejects_nonincreasing_time() {
        let row = SeriesRow {
            t: 1.0,
            area: 0.0,
            volume: 0.0,
            dirichlet: 0.0,
            hessian: 0.0,
            lyapunov: 0.0,
            sup_grad: 0.0,
            distance: 0.0,
            pi_margin: 0.0,
            fit_residual: 0.0,
            deficit: None,
            volume_distance: 0.0,
        };
        let mut s = EnergySeries::new(false);
        s.push(row.clone()).unwrap();
        assert!(s.push(row).is_err());
    }
}
