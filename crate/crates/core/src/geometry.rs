//! First- and second-order geometry of periodic graphs, closed curves and
//! other embedded charts over a periodic parameter grid.
//!
//! Sign conventions: the unit normal is the outer normal of the enclosed set
//! (for a graph `x_n = f(x)` the set is the subgraph, so the normal points up),
//! `h_ij = -<d_ij phi | nu>` and `H = g^ij h_ij`, which makes round spheres and
//! circles positively curved.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{make_grid, pairwise_sum, FlatTorus, PeriodicGrid, ScalarField};

/// Smallest admissible `det g`.
pub const MIN_METRIC_DET: f64 = 1e-10;

/// One Fourier mode `amplitude * sin(sum_i k_i 2 pi x_i / L_i + phase)` of a height field.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMode {
    pub wavenumbers: Vec<i64>,
    pub amplitude: f64,
    pub phase: f64,
}

impl FourierMode {
    pub fn new(wavenumbers: Vec<i64>, amplitude: f64, phase: f64) -> Self {
        Self { wavenumbers, amplitude, phase }
    }

    pub fn eval(&self, torus: &FlatTorus, x: &[f64]) -> f64 {
        let arg: f64 = self
            .wavenumbers
            .iter()
            .zip(x)
            .zip(torus.side_lengths())
            .map(|((&k, &xi), &l)| k as f64 * 2.0 * PI * xi / l)
            .sum();
        self.amplitude * (arg + self.phase).sin()
    }
}

/// Graph `{(x, f(x))}` over a flat torus, perturbing the lamella at `reference_height`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSurface {
    heights: ScalarField,
    reference_height: f64,
}

impl GraphSurface {
    pub fn new(heights: ScalarField, reference_height: f64) -> Result<Self> {
        if !reference_height.is_finite() {
            return Err(Error::NonFinite("reference height"));
        }
        if heights.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("graph heights"));
        }
        Ok(Self { heights, reference_height })
    }

    /// The flat lamella face `f = level`.
    pub fn flat(grid: PeriodicGrid, level: f64) -> Self {
        Self { heights: ScalarField::constant(grid, level), reference_height: level }
    }

    /// Lamella at `level` plus a sum of Fourier modes.
    pub fn perturbed(grid: PeriodicGrid, level: f64, modes: &[FourierMode]) -> Result<Self> {
        for mode in modes {
            if mode.wavenumbers.len() != grid.dimension() {
                return Err(Error::config(format!(
                    "mode {:?} has {} wavenumbers for a {}-dimensional grid",
                    mode.wavenumbers,
                    mode.wavenumbers.len(),
                    grid.dimension()
                )));
            }
        }
        let torus = grid.torus().clone();
        let heights = ScalarField::from_fn(grid, |x| level + modes.iter().map(|m| m.eval(&torus, x)).sum::<f64>());
        Self::new(heights, level)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.heights.grid()
    }

    pub fn heights(&self) -> &ScalarField {
        &self.heights
    }

    pub fn reference_height(&self) -> f64 {
        self.reference_height
    }

    /// Ambient dimension `n = d + 1`.
    pub fn ambient_dimension(&self) -> usize {
        self.grid().dimension() + 1
    }

    pub fn with_heights(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(ScalarField::new(self.grid().clone(), values)?, self.reference_height)
    }

    /// `sup |grad f|` over the nodes.
    pub fn sup_gradient(&self) -> f64 {
        let grid = self.grid();
        let spec = grid.forward(&centered(self.heights.values()));
        let d = grid.dimension();
        let grads: Vec<Vec<f64>> = (0..d).map(|i| spec.derivative(&unit_orders(d, i, 1))).collect();
        (0..grid.len()).map(|node| grads.iter().map(|g| g[node] * g[node]).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

/// Volume below the graph in one fundamental cell: the flat integral of `f`.
pub fn enclosed_volume(surface: &GraphSurface) -> f64 {
    surface.heights().integral()
}

/// Subtracts the (pairwise) mean; derivatives are taken of the centred field.
pub(crate) fn centered(values: &[f64]) -> Vec<f64> {
    let mean = pairwise_sum(values) / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

pub(crate) fn unit_orders(dim: usize, axis: usize, order: u32) -> Vec<u32> {
    let mut o = vec![0; dim];
    o[axis] = order;
    o
}

pub(crate) fn pair_orders(dim: usize, i: usize, j: usize) -> Vec<u32> {
    let mut o = vec![0; dim];
    o[i] += 1;
    o[j] += 1;
    o
}

/// Nodewise geometry of an embedded chart. Immutable once built.
#[derive(Clone, Debug)]
pub struct GeometryCache {
    grid: PeriodicGrid,
    dim: usize,
    ambient: usize,
    tangents: Vec<Vec<f64>>,
    metric: Vec<Vec<f64>>,
    metric_inv: Vec<Vec<f64>>,
    sqrt_det: Vec<f64>,
    normal: Vec<Vec<f64>>,
    christoffel: Vec<Vec<f64>>,
    second_form: Vec<Vec<f64>>,
    mean_curvature: Vec<f64>,
    second_form_norm2: Vec<f64>,
}

/// Symmetric 2-tensor field, components indexed `[i * d + j][node]`.
#[derive(Clone, Debug)]
pub struct TensorField {
    dim: usize,
    components: Vec<Vec<f64>>,
}

impl TensorField {
    pub fn component(&self, i: usize, j: usize) -> &[f64] {
        &self.components[i * self.dim + j]
    }

    /// `g^ij T_ij` per node.
    pub fn trace(&self, cache: &GeometryCache) -> Vec<f64> {
        let d = self.dim;
        (0..cache.len())
            .map(|node| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += cache.metric_inv(i, j)[node] * self.component(i, j)[node];
                    }
                }
                s
            })
            .collect()
    }

    /// `g^ik g^jl T_ij T_kl` per node.
    pub fn norm2(&self, cache: &GeometryCache) -> Vec<f64> {
        let d = self.dim;
        (0..cache.len())
            .map(|node| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        for k in 0..d {
                            for l in 0..d {
                                s += cache.metric_inv(i, k)[node]
                                    * cache.metric_inv(j, l)[node]
                                    * self.component(i, j)[node]
                                    * self.component(k, l)[node];
                            }
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Largest `|T_ij - T_ji|` over nodes and index pairs.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                for (a, b) in self.component(i, j).iter().zip(self.component(j, i)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }
}

/// Cholesky factorisation of a small SPD matrix in place; returns `det`.
fn cholesky_inverse(a: &[f64], d: usize, inv: &mut [f64]) -> Option<f64> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    let det = (0..d).map(|i| l[i * d + i]).product::<f64>().powi(2);
    // Invert via forward/back substitution on unit vectors.
    for col in 0..d {
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= l[k * d + i] * inv[k * d + col];
            }
            inv[i * d + col] = s / l[i * d + i];
        }
    }
    Some(det)
}

impl GeometryCache {
    /// Builds the cache from the first and second parameter derivatives of
    /// the embedding and its outer unit normal.
    ///
    /// `tangents[i * n + a]` is `d_i phi^a`, `second[(i * d + j) * n + a]` is
    /// `d_i d_j phi^a`, `normal[a]` is `nu^a`, all per node.
    pub fn from_embedding(
        grid: PeriodicGrid,
        tangents: Vec<Vec<f64>>,
        second: &[Vec<f64>],
        normal: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = grid.dimension();
        let n = normal.len();
        let len = grid.len();
        assert_eq!(tangents.len(), d * n);
        assert_eq!(second.len(), d * d * n);
        let finite = |fields: &[Vec<f64>]| fields.iter().all(|f| f.iter().all(|v| v.is_finite()));
        if !finite(&tangents) || !finite(second) || !finite(&normal) {
            return Err(Error::NonFinite("embedding derivatives"));
        }

        // Per-node record: g, g^-1, sqrt det, Gamma, h, H, |B|^2.
        let rec = 2 * d * d + 1 + d * d * d + d * d + 2;
        let mut records = vec![0.0; len * rec];
        let failures: Vec<(usize, f64)> = records
            .par_chunks_mut(rec)
            .enumerate()
            .filter_map(|(node, out)| {
                let (g, rest) = out.split_at_mut(d * d);
                let (ginv, rest) = rest.split_at_mut(d * d);
                let (sq, rest) = rest.split_at_mut(1);
                let (gamma, rest) = rest.split_at_mut(d * d * d);
                let (h, rest) = rest.split_at_mut(d * d);
                for i in 0..d {
                    for j in 0..d {
                        g[i * d + j] = (0..n).map(|a| tangents[i * n + a][node] * tangents[j * n + a][node]).sum();
                    }
                }
                let det = match cholesky_inverse(g, d, ginv) {
                    Some(det) if det >= MIN_METRIC_DET => det,
                    Some(det) => return Some((node, det)),
                    None => return Some((node, 0.0)),
                };
                sq[0] = det.sqrt();
                let mut proj = vec![0.0; d];
                for i in 0..d {
                    for j in 0..d {
                        let s = &second[(i * d + j) * n..(i * d + j + 1) * n];
                        h[i * d + j] = -(0..n).map(|a| s[a][node] * normal[a][node]).sum::<f64>();
                        for (l, p) in proj.iter_mut().enumerate() {
                            *p = (0..n).map(|a| s[a][node] * tangents[l * n + a][node]).sum();
                        }
                        for k in 0..d {
                            gamma[(k * d + i) * d + j] = (0..d).map(|l| ginv[k * d + l] * proj[l]).sum();
                        }
                    }
                }
                let mut mean = 0.0;
                let mut norm2 = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        mean += ginv[i * d + j] * h[i * d + j];
                        for k in 0..d {
                            for l in 0..d {
                                norm2 += h[i * d + j] * h[k * d + l] * ginv[i * d + k] * ginv[j * d + l];
                            }
                        }
                    }
                }
                rest[0] = mean;
                rest[1] = norm2;
                None
            })
            .collect();
        if let Some(&(node, det)) = failures.first() {
            return Err(Error::Degenerate(format!("det g = {det:e} at node {node}")));
        }

        let column = |offset: usize| -> Vec<f64> { (0..len).map(|node| records[node * rec + offset]).collect() };
        let metric = (0..d * d).map(column).collect();
        let metric_inv = (0..d * d).map(|c| column(d * d + c)).collect();
        let sqrt_det = column(2 * d * d);
        let base = 2 * d * d + 1;
        let christoffel = (0..d * d * d).map(|c| column(base + c)).collect();
        let base = base + d * d * d;
        let second_form = (0..d * d).map(|c| column(base + c)).collect();
        let mean_curvature = column(base + d * d);
        let second_form_norm2 = column(base + d * d + 1);
        Ok(Self {
            grid,
            dim: d,
            ambient: n,
            tangents,
            metric,
            metric_inv,
            sqrt_det,
            normal,
            christoffel,
            second_form,
            mean_curvature,
            second_form_norm2,
        })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    /// Intrinsic dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Ambient dimension `n`.
    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn metric(&self, i: usize, j: usize) -> &[f64] {
        &self.metric[i * self.dim + j]
    }

    pub fn metric_inv(&self, i: usize, j: usize) -> &[f64] {
        &self.metric_inv[i * self.dim + j]
    }

    pub fn sqrt_det_g(&self) -> &[f64] {
        &self.sqrt_det
    }

    pub fn normal(&self, a: usize) -> &[f64] {
        &self.normal[a]
    }

    /// `d_i phi^a`.
    pub fn tangent(&self, i: usize, a: usize) -> &[f64] {
        &self.tangents[i * self.ambient + a]
    }

    /// `Gamma^k_ij`.
    pub fn christoffel(&self, k: usize, i: usize, j: usize) -> &[f64] {
        &self.christoffel[(k * self.dim + i) * self.dim + j]
    }

    pub fn second_form(&self, i: usize, j: usize) -> &[f64] {
        &self.second_form[i * self.dim + j]
    }

    pub fn mean_curvature(&self) -> &[f64] {
        &self.mean_curvature
    }

    pub fn second_form_norm2(&self) -> &[f64] {
        &self.second_form_norm2
    }

    pub fn mean_curvature_field(&self) -> ScalarField {
        ScalarField::from_parts(self.grid.clone(), self.mean_curvature.clone())
    }

    /// Quadrature weights `sqrt(det g) * cell measure`.
    pub fn weights(&self) -> Vec<f64> {
        let cell = self.grid.cell_measure();
        self.sqrt_det.iter().map(|s| s * cell).collect()
    }

    /// Total area `int dmu`.
    pub fn area(&self) -> f64 {
        pairwise_sum(&self.sqrt_det) * self.grid.cell_measure()
    }

    /// `int u dmu` for nodal values.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        let products: Vec<f64> = u.iter().zip(&self.sqrt_det).map(|(a, b)| a * b).collect();
        pairwise_sum(&products) * self.grid.cell_measure()
    }

    /// Coordinate partials `d_i u`.
    pub fn gradient(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let spec = self.grid.forward(u);
        (0..self.dim).map(|i| spec.derivative(&unit_orders(self.dim, i, 1))).collect()
    }

    /// `g^ij a_i b_j` per node for covectors given by coordinate components.
    pub fn covector_dot(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
        let d = self.dim;
        (0..self.len())
            .map(|node| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += self.metric_inv(i, j)[node] * a[i][node] * b[j][node];
                    }
                }
                s
            })
            .collect()
    }

    /// `|grad u|^2_g` per node.
    pub fn gradient_norm2(&self, u: &[f64]) -> Vec<f64> {
        let grad = self.gradient(u);
        self.covector_dot(&grad, &grad)
    }

    /// `(1/sqrt g) d_i (sqrt g g^ij grad_j)` for a covector field given in coordinates.
    pub(crate) fn divergence_of_gradient(&self, grad: &[Vec<f64>]) -> Vec<f64> {
        let d = self.dim;
        let len = self.len();
        let mut out = vec![0.0; len];
        for i in 0..d {
            let flux: Vec<f64> = (0..len)
                .map(|node| {
                    let s: f64 = (0..d).map(|j| self.metric_inv(i, j)[node] * grad[j][node]).sum();
                    self.sqrt_det[node] * s
                })
                .collect();
            let div = self.grid.forward(&flux).derivative(&unit_orders(d, i, 1));
            for (o, v) in out.iter_mut().zip(div) {
                *o += v;
            }
        }
        for (o, s) in out.iter_mut().zip(&self.sqrt_det) {
            *o /= s;
        }
        out
    }

    fn check_grid(&self, u: &ScalarField) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `Delta phi` applied to each ambient coordinate of the embedding.
    pub fn immersion_laplacian(&self) -> Vec<Vec<f64>> {
        (0..self.ambient)
            .map(|a| {
                let grad: Vec<Vec<f64>> = (0..self.dim).map(|i| self.tangent(i, a).to_vec()).collect();
                self.divergence_of_gradient(&grad)
            })
            .collect()
    }

    /// `|grad nu|^2 = g^ij <d_i nu | d_j nu>` per node.
    pub fn normal_gradient_norm2(&self) -> Vec<f64> {
        let grads: Vec<Vec<Vec<f64>>> = (0..self.ambient).map(|a| self.gradient(&self.normal[a])).collect();
        let mut out = vec![0.0; self.len()];
        for g in &grads {
            for (o, v) in out.iter_mut().zip(self.covector_dot(g, g)) {
                *o += v;
            }
        }
        out
    }
}

/// Geometry of a graph surface.
pub fn build_geometry(surface: &GraphSurface) -> Result<GeometryCache> {
    let grid = surface.grid().clone();
    let d = grid.dimension();
    let n = d + 1;
    let len = grid.len();
    let spec = grid.forward(&centered(surface.heights().values()));
    let grads: Vec<Vec<f64>> = (0..d).map(|i| spec.derivative(&unit_orders(d, i, 1))).collect();
    let mut second = vec![vec![0.0; len]; d * d * n];
    for i in 0..d {
        for j in i..d {
            let q = spec.derivative(&pair_orders(d, i, j));
            second[(j * d + i) * n + d] = q.clone();
            second[(i * d + j) * n + d] = q;
        }
    }
    let mut tangents = vec![vec![0.0; len]; d * n];
    for i in 0..d {
        tangents[i * n + i] = vec![1.0; len];
        tangents[i * n + d] = grads[i].clone();
    }
    let w: Vec<f64> =
        (0..len).map(|node| (1.0 + grads.iter().map(|g| g[node] * g[node]).sum::<f64>()).sqrt()).collect();
    let mut normal: Vec<Vec<f64>> = grads.iter().map(|g| g.iter().zip(&w).map(|(p, w)| -p / w).collect()).collect();
    normal.push(w.iter().map(|w| 1.0 / w).collect());
    GeometryCache::from_embedding(grid, tangents, &second, normal)
}

/// `Delta_g u = (1/sqrt g) d_i (sqrt g g^ij d_j u)`.
pub fn laplace_beltrami(cache: &GeometryCache, u: &ScalarField) -> Result<ScalarField> {
    cache.check_grid(u)?;
    let grad = cache.gradient(u.values());
    Ok(ScalarField::from_parts(cache.grid.clone(), cache.divergence_of_gradient(&grad)))
}

/// `nabla^2_ij u = d_i d_j u - Gamma^k_ij d_k u`.
pub fn covariant_hessian(cache: &GeometryCache, u: &ScalarField) -> Result<TensorField> {
    cache.check_grid(u)?;
    let d = cache.dim;
    let spec = cache.grid.forward(u.values());
    let grad: Vec<Vec<f64>> = (0..d).map(|i| spec.derivative(&unit_orders(d, i, 1))).collect();
    let mut components = vec![Vec::new(); d * d];
    for i in 0..d {
        for j in i..d {
            let mut c = spec.derivative(&pair_orders(d, i, j));
            for (node, v) in c.iter_mut().enumerate() {
                for (k, gk) in grad.iter().enumerate() {
                    *v -= cache.christoffel(k, i, j)[node] * gk[node];
                }
            }
            components[j * d + i] = c.clone();
            components[i * d + j] = c;
        }
    }
    Ok(TensorField { dim: d, components })
}

/// `int u dmu` by pairwise-summed lattice quadrature.
pub fn surface_integral(cache: &GeometryCache, u: &ScalarField) -> Result<f64> {
    cache.check_grid(u)?;
    Ok(cache.integrate(u.values()))
}

/// Gauss curvature from the metric alone (Brioschi formula); two-dimensional charts only.
pub fn intrinsic_gauss_curvature(cache: &GeometryCache) -> Result<Vec<f64>> {
    if cache.dim != 2 {
        return Err(Error::config("Brioschi formula needs a two-dimensional chart"));
    }
    let grid = &cache.grid;
    let (e, f, g) = (cache.metric(0, 0), cache.metric(0, 1), cache.metric(1, 1));
    let (se, sf, sg) = (grid.forward(e), grid.forward(f), grid.forward(g));
    let (e_u, e_v, e_vv) = (se.derivative(&[1, 0]), se.derivative(&[0, 1]), se.derivative(&[0, 2]));
    let (f_u, f_v, f_uv) = (sf.derivative(&[1, 0]), sf.derivative(&[0, 1]), sf.derivative(&[1, 1]));
    let (g_u, g_v, g_uu) = (sg.derivative(&[1, 0]), sg.derivative(&[0, 1]), sg.derivative(&[2, 0]));
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    Ok((0..cache.len())
        .map(|p| {
            let (ee, ff, gg) = (e[p], f[p], g[p]);
            let m1 = [
                [-0.5 * e_vv[p] + f_uv[p] - 0.5 * g_uu[p], 0.5 * e_u[p], f_u[p] - 0.5 * e_v[p]],
                [f_v[p] - 0.5 * g_u[p], ee, ff],
                [0.5 * g_v[p], ff, gg],
            ];
            let m2 = [[0.0, 0.5 * e_v[p], 0.5 * g_u[p]], [0.5 * e_v[p], ee, ff], [0.5 * g_u[p], ff, gg]];
            (det3(m1) - det3(m2)) / (ee * gg - ff * ff).powi(2)
        })
        .collect())
}

/// `det h / det g`, the Gauss curvature from the second fundamental form.
pub fn extrinsic_gauss_curvature(cache: &GeometryCache) -> Result<Vec<f64>> {
    if cache.dim != 2 {
        return Err(Error::config("Gauss curvature comparison needs a two-dimensional chart"));
    }
    Ok((0..cache.len())
        .map(|p| {
            let deth = cache.second_form(0, 0)[p] * cache.second_form(1, 1)[p]
                - cache.second_form(0, 1)[p] * cache.second_form(1, 0)[p];
            deth / cache.sqrt_det[p].powi(2)
        })
        .collect())
}

/// Whether a curve lives in the plane or in a flat 2-torus.
#[derive(Clone, Debug, PartialEq)]
pub enum Ambient {
    Plane,
    Torus([f64; 2]),
}

/// A radial perturbation `R * amplitude * cos(order * theta + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialMode {
    pub order: u32,
    pub amplitude: f64,
    pub phase: f64,
}

/// Closed, positively oriented curve sampled at `m` uniform parameter nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricCurve {
    grid: PeriodicGrid,
    x: Vec<f64>,
    y: Vec<f64>,
    ambient: Ambient,
}

fn parameter_grid(m: usize) -> Result<PeriodicGrid> {
    if m < 16 || m % 2 != 0 {
        return Err(Error::config(format!("curve node count {m} must be even and >= 16")));
    }
    make_grid(FlatTorus::new(vec![2.0 * PI])?, &[m])
}

impl ParametricCurve {
    pub fn new(x: Vec<f64>, y: Vec<f64>, ambient: Ambient) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::config("curve coordinate arrays differ in length"));
        }
        let grid = parameter_grid(x.len())?;
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve nodes"));
        }
        let m = x.len();
        for j in 0..m {
            let k = (j + 1) % m;
            if x[j] == x[k] && y[j] == y[k] {
                return Err(Error::Degenerate(format!("nodes {j} and {k} coincide")));
            }
        }
        let curve = Self { grid, x, y, ambient };
        if curve.polygon_area() <= 0.0 {
            return Err(Error::Degenerate("curve is not positively oriented".into()));
        }
        Ok(curve)
    }

    pub fn circle(center: [f64; 2], radius: f64, m: usize) -> Result<Self> {
        Self::radial(center, radius, &[], m)
    }

    /// `r(theta) = R (1 + sum a cos(m theta + phase))` about `center`.
    pub fn radial(center: [f64; 2], radius: f64, modes: &[RadialMode], m: usize) -> Result<Self> {
        let grid = parameter_grid(m)?;
        let (mut x, mut y) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for j in 0..m {
            let t = grid.coordinate(j, 0);
            let r = radius
                * (1.0 + modes.iter().map(|md| md.amplitude * (md.order as f64 * t + md.phase).cos()).sum::<f64>());
            x.push(center[0] + r * t.cos());
            y.push(center[1] + r * t.sin());
        }
        Self::new(x, y, Ambient::Plane)
    }

    pub fn ellipse(center: [f64; 2], a: f64, b: f64, m: usize) -> Result<Self> {
        let grid = parameter_grid(m)?;
        let x = (0..m).map(|j| center[0] + a * grid.coordinate(j, 0).cos()).collect();
        let y = (0..m).map(|j| center[1] + b * grid.coordinate(j, 0).sin()).collect();
        Self::new(x, y, Ambient::Plane)
    }

    pub fn with_ambient(mut self, ambient: Ambient) -> Self {
        self.ambient = ambient;
        self
    }

    pub fn with_nodes(&self, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(x, y, self.ambient.clone())
    }

    pub fn translated(&self, shift: [f64; 2]) -> Result<Self> {
        self.with_nodes(self.x.iter().map(|v| v + shift[0]).collect(), self.y.iter().map(|v| v + shift[1]).collect())
    }

    /// Scales about `center` by `factor`.
    pub fn scaled(&self, center: [f64; 2], factor: f64) -> Result<Self> {
        self.with_nodes(
            self.x.iter().map(|v| center[0] + factor * (v - center[0])).collect(),
            self.y.iter().map(|v| center[1] + factor * (v - center[1])).collect(),
        )
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn ambient(&self) -> &Ambient {
        &self.ambient
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Shoelace area of the node polygon.
    pub fn polygon_area(&self) -> f64 {
        let m = self.len();
        let terms: Vec<f64> = (0..m)
            .map(|j| {
                let k = (j + 1) % m;
                self.x[j] * self.y[k] - self.x[k] * self.y[j]
            })
            .collect();
        0.5 * pairwise_sum(&terms)
    }

    /// Smallest distance between consecutive nodes.
    pub fn min_spacing(&self) -> f64 {
        let m = self.len();
        (0..m)
            .map(|j| {
                let k = (j + 1) % m;
                (self.x[k] - self.x[j]).hypot(self.y[k] - self.y[j])
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Curve quantities computed spectrally in the parameter.
#[derive(Clone, Debug)]
pub struct CurveGeometry {
    pub cache: GeometryCache,
    /// `|gamma'|`, the arclength element.
    pub speed: Vec<f64>,
    pub tangent: [Vec<f64>; 2],
    pub normal: [Vec<f64>; 2],
    pub curvature: Vec<f64>,
    pub length: f64,
    pub area: f64,
    /// Centroid of the enclosed region.
    pub centroid: [f64; 2],
}

pub fn curve_geometry(curve: &ParametricCurve) -> Result<CurveGeometry> {
    let grid = curve.grid().clone();
    let (sx, sy) = (grid.forward(curve.x()), grid.forward(curve.y()));
    let (xp, yp) = (sx.derivative(&[1]), sy.derivative(&[1]));
    let (xpp, ypp) = (sx.derivative(&[2]), sy.derivative(&[2]));
    let m = curve.len();
    let speed: Vec<f64> = (0..m).map(|j| xp[j].hypot(yp[j])).collect();
    if let Some(j) = speed.iter().position(|s| !(*s >= 1e-10)) {
        return Err(Error::Degenerate(format!("|gamma'| = {:e} at node {j}", speed[j])));
    }
    let tangent =
        [(0..m).map(|j| xp[j] / speed[j]).collect::<Vec<_>>(), (0..m).map(|j| yp[j] / speed[j]).collect::<Vec<_>>()];
    let normal = [tangent[1].clone(), tangent[0].iter().map(|v| -v).collect::<Vec<_>>()];
    let curvature: Vec<f64> = (0..m).map(|j| (xp[j] * ypp[j] - yp[j] * xpp[j]) / speed[j].powi(3)).collect();
    let dtheta = grid.cell_measure();
    let length = pairwise_sum(&speed) * dtheta;
    let cross: Vec<f64> = (0..m).map(|j| curve.x()[j] * yp[j] - curve.y()[j] * xp[j]).collect();
    let area = 0.5 * pairwise_sum(&cross) * dtheta;
    let mx: Vec<f64> = (0..m).map(|j| curve.x()[j].powi(2) * yp[j]).collect();
    let my: Vec<f64> = (0..m).map(|j| curve.y()[j].powi(2) * xp[j]).collect();
    let centroid = [pairwise_sum(&mx) * dtheta / (2.0 * area), -pairwise_sum(&my) * dtheta / (2.0 * area)];
    let cache =
        GeometryCache::from_embedding(grid, vec![xp, yp], &[xpp, ypp], vec![normal[0].clone(), normal[1].clone()])?;
    Ok(CurveGeometry { cache, speed, tangent, normal, curvature, length, area, centroid })
}

/// Cylinder of radius `radius` around the third axis, periodic with `axis_period` along it.
/// Parameters are the angle (period 2 pi) and the axial coordinate.
pub fn cylinder_geometry(radius: f64, axis_period: f64, resolution: [usize; 2]) -> Result<GeometryCache> {
    if !(radius > 0.0 && axis_period > 0.0) {
        return Err(Error::config("cylinder radius and axis period must be positive"));
    }
    let grid = make_grid(FlatTorus::new(vec![2.0 * PI, axis_period])?, &resolution)?;
    let len = grid.len();
    let theta: Vec<f64> = (0..len).map(|p| grid.coordinate(p, 0)).collect();
    let (c, s): (Vec<f64>, Vec<f64>) = theta.iter().map(|t| (t.cos(), t.sin())).unzip();
    let zero = vec![0.0; len];
    let tangents = vec![
        s.iter().map(|v| -radius * v).collect(),
        c.iter().map(|v| radius * v).collect(),
        zero.clone(),
        zero.clone(),
        zero.clone(),
        vec![1.0; len],
    ];
    let mut second = vec![zero.clone(); 12];
    second[0] = c.iter().map(|v| -radius * v).collect();
    second[1] = s.iter().map(|v| -radius * v).collect();
    GeometryCache::from_embedding(grid, tangents, &second, vec![c, s, zero])
}
