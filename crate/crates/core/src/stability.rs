//! Second variation of area under a volume constraint: the Jacobi form,
//! translation directions, and strict-stability classification.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    build_geometry, curve_geometry, cylinder_geometry, GeometryCache, GraphSurface, ParametricCurve,
};
use crate::lattice::{make_grid, spectral_derivative, FlatTorus, PeriodicGrid, ScalarField};

/// Largest node count for which a dense operator is assembled.
pub const MAX_DENSE_NODES: usize = 20_000;
/// Eigenvalues within this distance of zero count as zero.
pub const ZERO_TOL: f64 = 1e-7;

/// Constant-mean-curvature surfaces the analysis is run on.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceSurface {
    Lamella(PeriodicGrid),
    /// Round cylinder in T^3, discretised with `resolution = [angle, axis]` nodes.
    Cylinder {
        radius: f64,
        axis_period: f64,
        resolution: [usize; 2],
    },
    Circle {
        radius: f64,
        nodes: usize,
    },
    Graph(GraphSurface),
}

impl ReferenceSurface {
    pub fn geometry(&self) -> Result<GeometryCache> {
        match self {
            ReferenceSurface::Lamella(grid) => build_geometry(&GraphSurface::flat(grid.clone(), 0.0)),
            ReferenceSurface::Cylinder { radius, axis_period, resolution } => {
                cylinder_geometry(*radius, *axis_period, *resolution)
            }
            ReferenceSurface::Circle { radius, nodes } => {
                Ok(curve_geometry(&ParametricCurve::circle([0.0, 0.0], *radius, *nodes)?)?.cache)
            }
            ReferenceSurface::Graph(s) => build_geometry(s),
        }
    }
}

/// `(sigma_min)` of a flat face: the first nonzero flat Laplacian eigenvalue.
pub fn lamella_sigma_min(torus: &FlatTorus) -> f64 {
    let longest = torus.side_lengths().iter().copied().fold(0.0, f64::max);
    (2.0 * PI / longest).powi(2)
}

fn subtract_mean(cache: &GeometryCache, u: &[f64]) -> Vec<f64> {
    let mean = cache.integrate(u) / cache.area();
    u.iter().map(|v| v - mean).collect()
}

/// `Pi(psi) = int |grad psi|^2 - psi^2 |B|^2 dmu` after removing the mu-mean of `psi`.
pub fn quadratic_form(cache: &GeometryCache, psi: &ScalarField) -> Result<f64> {
    if psi.grid() != cache.grid() {
        return Err(Error::GridMismatch);
    }
    let u = subtract_mean(cache, psi.values());
    let b2 = cache.second_form_norm2();
    let density: Vec<f64> = cache.gradient_norm2(&u).iter().enumerate().map(|(p, g)| g - u[p] * u[p] * b2[p]).collect();
    Ok(cache.integrate(&density))
}

/// Normal components of the coordinate translations, mean-projected and rotated
/// to diagonalise their Gram matrix.
#[derive(Clone, Debug)]
pub struct TranslationSubspace {
    /// `int nu^a nu^b dmu` of the mean-projected components.
    pub gram: DMatrix<f64>,
    /// Columns are the diagonalising frame, ordered by dominant axis.
    pub frame: DMatrix<f64>,
    /// Squared mu-norms of the rotated functions.
    pub norms2: Vec<f64>,
    /// Indices into the frame of the functions that survive the threshold.
    pub surviving: Vec<usize>,
    /// Surviving mu-orthogonal, mean-zero basis functions.
    pub basis: Vec<ScalarField>,
}

impl TranslationSubspace {
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }
}

pub fn translation_basis(cache: &GeometryCache) -> TranslationSubspace {
    let n = cache.ambient_dim();
    let candidates: Vec<Vec<f64>> = (0..n).map(|a| subtract_mean(cache, cache.normal(a))).collect();
    let gram = DMatrix::from_fn(n, n, |a, b| {
        let prod: Vec<f64> = candidates[a].iter().zip(&candidates[b]).map(|(x, y)| x * y).collect();
        cache.integrate(&prod)
    });
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram.clone());
    // Order frame vectors by the axis they point along most.
    let mut order: Vec<usize> = (0..n).collect();
    let dominant = |c: usize| {
        (0..n).max_by(|&a, &b| eig.eigenvectors[(a, c)].abs().total_cmp(&eig.eigenvectors[(b, c)].abs())).unwrap()
    };
    order.sort_by_key(|&c| (dominant(c), c));
    let frame = DMatrix::from_fn(n, n, |a, c| eig.eigenvectors[(a, order[c])]);
    let threshold = 1e-8 * cache.area().sqrt();
    let mut norms2 = Vec::with_capacity(n);
    let mut surviving = Vec::new();
    let mut basis = Vec::new();
    for c in 0..n {
        let f: Vec<f64> = (0..cache.len()).map(|p| (0..n).map(|a| frame[(a, c)] * candidates[a][p]).sum()).collect();
        let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
        let norm2 = cache.integrate(&sq);
        norms2.push(norm2);
        if norm2.sqrt() > threshold {
            surviving.push(c);
            basis.push(ScalarField::from_parts(cache.grid().clone(), f));
        }
    }
    TranslationSubspace { gram, frame, norms2, surviving, basis }
}

/// Dense realisation of the Jacobi operator `-Delta_g - |B|^2`.
///
/// `form` is the symmetric matrix with `psi^T form psi = Pi(psi)` (no mean
/// projection); the operator in the mu inner product is `W^-1 form`.
#[derive(Clone, Debug)]
pub struct JacobiOperator {
    grid: PeriodicGrid,
    form: DMatrix<f64>,
    weights: Vec<f64>,
}

impl JacobiOperator {
    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn form(&self) -> &DMatrix<f64> {
        &self.form
    }

    /// Node measures `sqrt(det g) * cell`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let v = &self.form * DVector::from_column_slice(psi);
        v.iter().zip(&self.weights).map(|(a, w)| a / w).collect()
    }

    /// `<u, v>_mu`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let prods: Vec<f64> = (0..u.len()).map(|p| u[p] * v[p] * self.weights[p]).collect();
        crate::lattice::pairwise_sum(&prods)
    }

    /// `W^-1/2 form W^-1/2`, whose eigenvalues are those of the operator.
    fn symmetric_matrix(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
        DMatrix::from_fn(self.len(), self.len(), |a, b| self.form[(a, b)] * s[a] * s[b])
    }

    /// Constraint vectors, in `W^1/2`-scaled coordinates, that remove Nyquist
    /// content along every axis. Odd spectral derivatives annihilate those
    /// modes, so they carry no gradient energy and are left out of the
    /// resolved space.
    fn nyquist_constraints(&self) -> Vec<DVector<f64>> {
        let grid = &self.grid;
        let n = self.len();
        let inv_sqrt: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
        let mut out = Vec::new();
        for axis in 0..grid.dimension() {
            let stride = grid.stride(axis);
            for base in (0..n).filter(|&p| grid.index_along(p, axis) == 0) {
                let mut v = DVector::zeros(n);
                for t in 0..grid.resolution()[axis] {
                    let p = base + t * stride;
                    v[p] = if t % 2 == 0 { inv_sqrt[p] } else { -inv_sqrt[p] };
                }
                out.push(v);
            }
        }
        out
    }

    /// Eigenvalues on the resolved (Nyquist-free) space, ascending.
    pub fn spectrum(&self) -> Vec<f64> {
        let (block, _) = deflate(self.symmetric_matrix(), &self.nyquist_constraints());
        let mut ev: Vec<f64> = SymmetricEigen::new(block).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// First-derivative matrix of one axis under the grid's backend.
fn derivative_matrix(grid: &PeriodicGrid, axis: usize) -> Result<Vec<f64>> {
    let n = grid.resolution()[axis];
    let line = make_grid(FlatTorus::new(vec![grid.torus().side_lengths()[axis]])?, &[n])?.with_backend(grid.backend());
    let mut m = vec![0.0; n * n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let d = spectral_derivative(&ScalarField::from_parts(line.clone(), e), 0, 1)?;
        for (row, v) in d.values().iter().enumerate() {
            m[row * n + col] = *v;
        }
    }
    Ok(m)
}

pub fn assemble_jacobi(cache: &GeometryCache) -> Result<JacobiOperator> {
    let grid = cache.grid().clone();
    let len = grid.len();
    if len > MAX_DENSE_NODES {
        return Err(Error::TooLarge { nodes: len, limit: MAX_DENSE_NODES });
    }
    let d = grid.dimension();
    let mats: Vec<Vec<f64>> = (0..d).map(|i| derivative_matrix(&grid, i)).collect::<Result<_>>()?;
    let weights = cache.weights();
    // form = sum_ij D_i^T diag(w g^ij) D_j - diag(w |B|^2)
    let coeff: Vec<Vec<f64>> =
        (0..d * d).map(|ij| (0..len).map(|r| weights[r] * cache.metric_inv(ij / d, ij % d)[r]).collect()).collect();
    let line = |node: usize, axis: usize| -> (usize, usize) {
        let base = node - grid.index_along(node, axis) * grid.stride(axis);
        (base, grid.stride(axis))
    };
    let rows: Vec<Vec<f64>> = (0..len)
        .into_par_iter()
        .map(|p| {
            let mut row = vec![0.0; len];
            for i in 0..d {
                let ni = grid.resolution()[i];
                let pi = grid.index_along(p, i);
                let (base_i, stride_i) = line(p, i);
                for t in 0..ni {
                    let r = base_i + t * stride_i;
                    let a = mats[i][t * ni + pi];
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        let c = a * coeff[i * d + j][r];
                        let nj = grid.resolution()[j];
                        let rj = grid.index_along(r, j);
                        let (base_j, stride_j) = line(r, j);
                        for u in 0..nj {
                            row[base_j + u * stride_j] += c * mats[j][rj * nj + u];
                        }
                    }
                }
            }
            row[p] -= weights[p] * cache.second_form_norm2()[p];
            row
        })
        .collect();
    let raw = DMatrix::from_fn(len, len, |a, b| rows[a][b]);
    let form = (&raw + raw.transpose()) * 0.5;
    Ok(JacobiOperator { grid, form, weights })
}

/// Applies `H = I - 2 u u^T` on both sides of a symmetric matrix.
fn reflect_both(m: &mut DMatrix<f64>, u: &DVector<f64>) {
    let p = &*m * u;
    let k = u.dot(&p);
    let q = p - u * k;
    // H M H = M - 2 u q^T - 2 q u^T
    m.ger(-2.0, u, &q, 1.0);
    m.ger(-2.0, &q, u, 1.0);
}

/// Restricts a symmetric matrix to the Euclidean complement of `constraints`
/// by a sequence of Householder reflections. Returns the complement block and
/// the reflectors; dependent constraints are skipped.
fn deflate(mut m: DMatrix<f64>, constraints: &[DVector<f64>]) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let n = m.nrows();
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    for c in constraints {
        let k = reflectors.len();
        if k == n {
            break;
        }
        let mut v = c.clone();
        for u in &reflectors {
            let dot = u.dot(&v);
            v.axpy(-2.0 * dot, u, 1.0);
        }
        let tail = v.rows(k, n - k).norm();
        if tail <= 1e-10 * c.norm() {
            continue;
        }
        let mut u = DVector::zeros(n);
        u.rows_mut(k, n - k).copy_from(&v.rows(k, n - k));
        let alpha = if v[k] >= 0.0 { -tail } else { tail };
        u[k] -= alpha;
        let un = u.norm();
        u /= un;
        reflect_both(&mut m, &u);
        reflectors.push(u);
    }
    let k = reflectors.len();
    let block = m.view((k, k), (n - k, n - k)).clone_owned();
    ((&block + block.transpose()) * 0.5, reflectors)
}

/// Smallest eigenvalue of the operator restricted to resolved functions
/// mu-orthogonal to constants and to the surviving translation functions,
/// with a mu-normalised minimiser.
pub fn min_eig_t_perp(op: &JacobiOperator, subspace: &TranslationSubspace) -> Result<(f64, ScalarField)> {
    let n = op.len();
    let sqrt_w: Vec<f64> = op.weights.iter().map(|w| w.sqrt()).collect();
    let mut constraints = op.nyquist_constraints();
    constraints.push(DVector::from_iterator(n, sqrt_w.iter().copied()));
    for b in &subspace.basis {
        if b.grid() != op.grid() {
            return Err(Error::GridMismatch);
        }
        constraints.push(DVector::from_iterator(n, b.values().iter().zip(&sqrt_w).map(|(v, s)| v * s)));
    }
    let (block, reflectors) = deflate(op.symmetric_matrix(), &constraints);
    if block.nrows() == 0 {
        return Err(Error::Degenerate("constraints span the whole space".into()));
    }
    let k = reflectors.len();
    let eig = SymmetricEigen::new(block);
    let (idx, sigma) =
        eig.eigenvalues.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty block");
    let mut v = DVector::zeros(n);
    v.rows_mut(k, n - k).copy_from(&eig.eigenvectors.column(idx));
    for u in reflectors.iter().rev() {
        let dot = u.dot(&v);
        v.axpy(-2.0 * dot, u, 1.0);
    }
    let mut psi: Vec<f64> = v.iter().zip(&sqrt_w).map(|(a, s)| a / s).collect();
    let norm = op.inner(&psi, &psi).sqrt();
    // Fix the sign so the largest entry is positive.
    let pivot = psi.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    let scale = if pivot < 0.0 { -1.0 / norm } else { 1.0 / norm };
    for x in &mut psi {
        *x *= scale;
    }
    Ok((sigma, ScalarField::from_parts(op.grid().clone(), psi)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    StrictlyStable,
    Stable,
    Unstable,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::StrictlyStable => "strictly_stable",
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
        }
    }
}

pub fn classify(sigma_min: f64, tol: f64) -> Classification {
    if sigma_min > tol {
        Classification::StrictlyStable
    } else if sigma_min >= -tol {
        Classification::Stable
    } else {
        Classification::Unstable
    }
}

/// An eigenvalue and how many times it repeats (within `1e-6` relative).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenCluster {
    pub value: f64,
    pub multiplicity: usize,
}

/// Groups an ascending spectrum into the first `count` clusters.
pub fn cluster_eigenvalues(spectrum: &[f64], count: usize) -> Vec<EigenCluster> {
    let mut out: Vec<EigenCluster> = Vec::new();
    for &v in spectrum {
        match out.last_mut() {
            Some(c) if (v - c.value).abs() <= 1e-6 * c.value.abs().max(1.0) => c.multiplicity += 1,
            _ => {
                if out.len() == count {
                    break;
                }
                out.push(EigenCluster { value: v, multiplicity: 1 });
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    /// Lowest ten clusters of the resolved spectrum, constants included.
    pub lowest: Vec<EigenCluster>,
    /// Number of eigenvalues of the resolved spectrum with `|lambda| <= 1e-8`.
    pub zero_modes: usize,
    pub sigma_min: f64,
    pub eigenfield: ScalarField,
    pub translations: TranslationSubspace,
    pub classification: Classification,
}

/// Full analysis of a reference surface.
pub fn analyze(reference: &ReferenceSurface) -> Result<StabilityReport> {
    let cache = reference.geometry()?;
    analyze_cache(&cache)
}

pub fn analyze_cache(cache: &GeometryCache) -> Result<StabilityReport> {
    let op = assemble_jacobi(cache)?;
    let translations = translation_basis(cache);
    let (sigma_min, eigenfield) = min_eig_t_perp(&op, &translations)?;
    let spectrum = op.spectrum();
    Ok(StabilityReport {
        lowest: cluster_eigenvalues(&spectrum, 10),
        zero_modes: spectrum.iter().filter(|v| v.abs() <= 1e-8).count(),
        sigma_min,
        eigenfield,
        translations,
        classification: classify(sigma_min, ZERO_TOL),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(nodes: usize) -> GeometryCache {
        ReferenceSurface::Circle { radius: 1.0, nodes }.geometry().unwrap()
    }

    #[test]
    fn circle_quadratic_forms() {
        let c = circle(128);
        let field = |m: f64| ScalarField::from_fn(c.grid().clone(), move |x| (m * x[0]).cos());
        assert!(quadratic_form(&c, &field(1.0)).unwrap().abs() < 1e-10);
        assert!((quadratic_form(&c, &field(2.0)).unwrap() - 3.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn lamella_quadratic_form() {
        let grid = make_grid(FlatTorus::cube(2.0 * PI, 2).unwrap(), &[16, 16]).unwrap();
        let c = ReferenceSurface::Lamella(grid.clone()).geometry().unwrap();
        let psi = ScalarField::from_fn(grid, |x| x[0].sin());
        assert!((quadratic_form(&c, &psi).unwrap() - 2.0 * PI * PI).abs() < 1e-10);
    }

    #[test]
    fn circle_translations() {
        let t = translation_basis(&circle(64));
        assert_eq!(t.surviving, vec![0, 1]);
        assert!((t.gram[(0, 0)] - PI).abs() < 1e-12 && (t.gram[(1, 1)] - PI).abs() < 1e-12);
        assert!(t.gram[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn lamella_has_no_translations() {
        let grid = make_grid(FlatTorus::cube(2.0 * PI, 2).unwrap(), &[8, 8]).unwrap();
        let t = translation_basis(&ReferenceSurface::Lamella(grid).geometry().unwrap());
        assert_eq!(t.dimension(), 0);
    }

    #[test]
    fn form_matches_quadratic_form() {
        let c = circle(64);
        let op = assemble_jacobi(&c).unwrap();
        let psi: Vec<f64> = (0..64).map(|j| ((j * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let psi = subtract_mean(&c, &psi);
        let field = ScalarField::from_parts(c.grid().clone(), psi.clone());
        let a = op.inner(&op.apply(&psi), &psi);
        let b = quadratic_form(&c, &field).unwrap();
        assert!((a - b).abs() <= 1e-9 * b.abs());
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify(1.0, ZERO_TOL), Classification::StrictlyStable);
        assert_eq!(classify(1e-9, ZERO_TOL), Classification::Stable);
        assert_eq!(classify(-1e-3, ZERO_TOL), Classification::Unstable);
    }

    #[test]
    fn oversized_operator_rejected() {
        let grid = make_grid(FlatTorus::cube(1.0, 2).unwrap(), &[160, 128]).unwrap();
        let c = ReferenceSurface::Lamella(grid).geometry().unwrap();
        assert!(matches!(assemble_jacobi(&c), Err(Error::TooLarge { .. })));
    }
}
