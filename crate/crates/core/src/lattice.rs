//! Flat tori, uniform periodic grids and Fourier calculus on them.
//!
//! Fields are stored row-major with the last axis varying fastest. All
//! derivatives are evaluated as multipliers on the discrete Fourier transform;
//! the finite-difference backend uses the symbols of the centred second-order
//! stencils, so both backends share one code path.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Lines are transformed in parallel only above this many nodes.
const PARALLEL_THRESHOLD: usize = 4096;

/// Rectangular flat torus `R^d / (L_1 Z x ... x L_d Z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatTorus {
    side_lengths: Vec<f64>,
}

impl FlatTorus {
    pub fn new(side_lengths: Vec<f64>) -> Result<Self> {
        if side_lengths.is_empty() {
            return Err(Error::config("torus needs at least one axis"));
        }
        if let Some(l) = side_lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::config(format!("torus side length {l} must be positive")));
        }
        Ok(Self { side_lengths })
    }

    /// Square torus of side `length` in `dim` dimensions.
    pub fn cube(length: f64, dim: usize) -> Result<Self> {
        Self::new(vec![length; dim])
    }

    pub fn dimension(&self) -> usize {
        self.side_lengths.len()
    }

    pub fn side_lengths(&self) -> &[f64] {
        &self.side_lengths
    }

    /// Lebesgue measure of the fundamental cell.
    pub fn measure(&self) -> f64 {
        self.side_lengths.iter().product()
    }
}

/// Differentiation backend of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Spectral,
    /// Centred second-order differences, for cross-validation.
    FiniteDifference,
}

struct Plans {
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

/// Uniform periodic grid on a flat torus. Cheap to clone: FFT plans are shared.
#[derive(Clone)]
pub struct PeriodicGrid {
    torus: FlatTorus,
    resolution: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    backend: Backend,
    plans: Arc<Plans>,
}

impl fmt::Debug for PeriodicGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicGrid")
            .field("side_lengths", &self.torus.side_lengths)
            .field("resolution", &self.resolution)
            .field("backend", &self.backend)
            .finish()
    }
}

impl PartialEq for PeriodicGrid {
    fn eq(&self, other: &Self) -> bool {
        self.torus == other.torus && self.resolution == other.resolution && self.backend == other.backend
    }
}

/// Builds a grid with `resolutions[i]` nodes along axis `i`.
///
/// Every resolution must be even and at least 8.
pub fn make_grid(torus: FlatTorus, resolutions: &[usize]) -> Result<PeriodicGrid> {
    if resolutions.len() != torus.dimension() {
        return Err(Error::config(format!(
            "{} resolutions given for a {}-dimensional torus",
            resolutions.len(),
            torus.dimension()
        )));
    }
    for (axis, &n) in resolutions.iter().enumerate() {
        if n < 8 || n % 2 != 0 {
            return Err(Error::config(format!("resolution {n} on axis {axis} must be even and >= 8")));
        }
    }
    let spacing = torus.side_lengths().iter().zip(resolutions).map(|(l, &n)| l / n as f64).collect();
    let mut strides = vec![1; resolutions.len()];
    for axis in (0..resolutions.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * resolutions[axis + 1];
    }
    let mut planner = FftPlanner::new();
    let plans = Plans {
        forward: resolutions.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
        inverse: resolutions.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
    };
    Ok(PeriodicGrid {
        torus,
        resolution: resolutions.to_vec(),
        spacing,
        strides,
        backend: Backend::Spectral,
        plans: Arc::new(plans),
    })
}

impl PeriodicGrid {
    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn torus(&self) -> &FlatTorus {
        &self.torus
    }

    pub fn dimension(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Measure of one grid cell, the quadrature weight of a node.
    pub fn cell_measure(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Integer index of `node` along `axis`.
    pub fn index_along(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.resolution[axis]
    }

    pub fn coordinate(&self, node: usize, axis: usize) -> f64 {
        self.index_along(node, axis) as f64 * self.spacing[axis]
    }

    pub fn coordinates(&self, node: usize) -> Vec<f64> {
        (0..self.dimension()).map(|a| self.coordinate(node, a)).collect()
    }

    /// Signed wavenumber index of FFT slot `j` on `axis`, in `-N/2+1 ..= N/2`.
    pub fn wavenumber_index(&self, axis: usize, j: usize) -> i64 {
        let n = self.resolution[axis];
        if j <= n / 2 {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    pub fn wavenumber(&self, axis: usize, j: usize) -> f64 {
        self.wavenumber_index(axis, j) as f64 * 2.0 * PI / self.torus.side_lengths()[axis]
    }

    fn is_nyquist(&self, axis: usize, j: usize) -> bool {
        j == self.resolution[axis] / 2
    }

    /// Fourier multiplier of `d^order/dx_axis^order` at slot `j`.
    pub fn derivative_symbol(&self, axis: usize, j: usize, order: u32) -> Complex<f64> {
        if order == 0 {
            return Complex::new(1.0, 0.0);
        }
        let k = self.wavenumber(axis, j);
        match self.backend {
            Backend::Spectral => {
                if order % 2 == 1 && self.is_nyquist(axis, j) {
                    return Complex::new(0.0, 0.0);
                }
                Complex::new(0.0, k).powu(order)
            }
            Backend::FiniteDifference => {
                let h = self.spacing[axis];
                let first = Complex::new(0.0, (k * h).sin() / h);
                let second = -4.0 * (0.5 * k * h).sin().powi(2) / (h * h);
                let second = Complex::new(second, 0.0);
                match order {
                    1 => first,
                    2 => second,
                    3 => first * second,
                    4 => second * second,
                    _ => second.powu(order / 2) * if order % 2 == 1 { first } else { 1.0.into() },
                }
            }
        }
    }

    /// Multiplier of the flat Laplacian at the Fourier slot with per-axis indices `slot`.
    pub fn laplacian_symbol(&self, slot: &[usize]) -> f64 {
        slot.iter().enumerate().map(|(axis, &j)| self.derivative_symbol(axis, j, 2).re).sum()
    }

    /// Forward transform of real nodal values.
    pub fn forward(&self, values: &[f64]) -> Spectrum<'_> {
        assert_eq!(values.len(), self.len(), "value count does not match grid");
        // The mean goes straight into the DC slot so constants carry no
        // round-off into the other modes.
        let mean = pairwise_sum(values) / values.len() as f64;
        let mut coeffs: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        for axis in 0..self.dimension() {
            self.transform_axis(&mut coeffs, axis, &self.plans.forward[axis]);
        }
        coeffs[0] = Complex::new(mean * values.len() as f64, 0.0);
        Spectrum { grid: self, coeffs }
    }

    fn transform_axis(&self, data: &mut [Complex<f64>], axis: usize, plan: &Arc<dyn Fft<f64>>) {
        let n = self.resolution[axis];
        let stride = self.strides[axis];
        if stride == 1 {
            if data.len() >= PARALLEL_THRESHOLD {
                data.par_chunks_mut(n).for_each(|line| plan.process(line));
            } else {
                plan.process(data);
            }
            return;
        }
        // Gather strided lines into contiguous storage, transform, scatter back.
        let lines = data.len() / n;
        let block = stride * n;
        let line_start = |line: usize| (line / stride) * block + line % stride;
        let mut buffer = vec![Complex::new(0.0, 0.0); data.len()];
        for line in 0..lines {
            let start = line_start(line);
            for (k, slot) in buffer[line * n..(line + 1) * n].iter_mut().enumerate() {
                *slot = data[start + k * stride];
            }
        }
        if data.len() >= PARALLEL_THRESHOLD {
            buffer.par_chunks_mut(n).for_each(|line| plan.process(line));
        } else {
            plan.process(&mut buffer);
        }
        for line in 0..lines {
            let start = line_start(line);
            for (k, value) in buffer[line * n..(line + 1) * n].iter().enumerate() {
                data[start + k * stride] = *value;
            }
        }
    }

    fn inverse_real(&self, mut coeffs: Vec<Complex<f64>>) -> Vec<f64> {
        for axis in 0..self.dimension() {
            self.transform_axis(&mut coeffs, axis, &self.plans.inverse[axis]);
        }
        let scale = 1.0 / self.len() as f64;
        coeffs.into_iter().map(|c| c.re * scale).collect()
    }

    /// Per-axis FFT slot indices of linear coefficient index `idx`.
    pub fn slot(&self, idx: usize, out: &mut [usize]) {
        for (axis, o) in out.iter_mut().enumerate() {
            *o = self.index_along(idx, axis);
        }
    }
}

/// Fourier coefficients of a real field, tied to its grid.
#[derive(Clone)]
pub struct Spectrum<'g> {
    grid: &'g PeriodicGrid,
    coeffs: Vec<Complex<f64>>,
}

impl<'g> Spectrum<'g> {
    pub fn grid(&self) -> &'g PeriodicGrid {
        self.grid
    }

    pub fn coefficients(&self) -> &[Complex<f64>] {
        &self.coeffs
    }

    /// Applies a Fourier multiplier given per slot and returns nodal values.
    pub fn apply<F>(&self, symbol: F) -> Vec<f64>
    where
        F: Fn(&[usize]) -> Complex<f64>,
    {
        let mut slot = vec![0; self.grid.dimension()];
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                self.grid.slot(idx, &mut slot);
                c * symbol(&slot)
            })
            .collect();
        self.grid.inverse_real(coeffs)
    }

    /// Mixed partial derivative with `orders[axis]` derivatives along each axis.
    pub fn derivative(&self, orders: &[u32]) -> Vec<f64> {
        let grid = self.grid;
        self.apply(|slot| {
            slot.iter()
                .zip(orders)
                .enumerate()
                .fold(Complex::new(1.0, 0.0), |acc, (axis, (&j, &o))| acc * grid.derivative_symbol(axis, j, o))
        })
    }

    /// Zeroes every mode with |index| > N/3 on some axis (two-thirds rule).
    pub fn dealias(mut self) -> Self {
        let grid = self.grid;
        let mut slot = vec![0; grid.dimension()];
        for (idx, c) in self.coeffs.iter_mut().enumerate() {
            grid.slot(idx, &mut slot);
            let cut = slot
                .iter()
                .enumerate()
                .any(|(axis, &j)| grid.wavenumber_index(axis, j).unsigned_abs() as usize * 3 > grid.resolution[axis]);
            if cut {
                *c = Complex::new(0.0, 0.0);
            }
        }
        self
    }

    /// Zeroes modes whose magnitude is below `relative` times the largest one,
    /// so round-off is not amplified by later differentiation.
    pub fn filter_noise(mut self, relative: f64) -> Self {
        let floor = relative * self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        for c in &mut self.coeffs {
            if c.norm() < floor {
                *c = Complex::new(0.0, 0.0);
            }
        }
        self
    }

    pub fn into_values(self) -> Vec<f64> {
        self.grid.inverse_real(self.coeffs)
    }
}

/// Real-valued field on a periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::config(format!("field has {} values, grid has {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: PeriodicGrid, value: f64) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    /// Samples `f` at node coordinates.
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|node| f(&grid.coordinates(node))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// Flat integral over the torus.
    pub fn integral(&self) -> f64 {
        pairwise_sum(&self.values) * self.grid.cell_measure()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub(crate) fn from_parts(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }
}

/// Derivative of `field` of the given order along one axis.
pub fn spectral_derivative(field: &ScalarField, axis: usize, order: u32) -> Result<ScalarField> {
    let grid = field.grid();
    if axis >= grid.dimension() {
        return Err(Error::config(format!("axis {axis} out of range for dimension {}", grid.dimension())));
    }
    if !(1..=4).contains(&order) {
        return Err(Error::config(format!("derivative order {order} outside 1..=4")));
    }
    let mut orders = vec![0; grid.dimension()];
    orders[axis] = order;
    let values = grid.forward(field.values()).derivative(&orders);
    Ok(ScalarField::from_parts(grid.clone(), values))
}

/// Solves `u + a dt Lap^2 u = rhs` mode by mode.
pub fn solve_stabilized(rhs: &ScalarField, stabilizer: f64, dt: f64) -> Result<ScalarField> {
    if !(stabilizer > 0.0 && stabilizer.is_finite()) {
        return Err(Error::config(format!("stabilizer {stabilizer} must be positive")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("time step {dt} must be positive")));
    }
    if rhs.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stabilized solve right-hand side"));
    }
    let grid = rhs.grid();
    let values = grid.forward(rhs.values()).apply(|slot| {
        let lap = grid.laplacian_symbol(slot);
        Complex::new(1.0 / (1.0 + stabilizer * dt * lap * lap), 0.0)
    });
    Ok(ScalarField::from_parts(grid.clone(), values))
}

/// Sum with a fixed pairwise association order, independent of threading.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of elementwise products.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let products: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    pairwise_sum(&products)
}
