//! Manifold abstraction and the built-in model surfaces.
//!
//! A model lives in a single coordinate chart, possibly with periodic
//! coordinates. Tensors are stored flat and row-major:
//!
//! * metric: `g[i * d + j]`
//! * Christoffel symbols: `gamma[k * d * d + i * d + j]` = Γ^k_ij
//! * Christoffel derivatives: `dgamma[l * d^3 + k * d * d + i * d + j]` = ∂_l Γ^k_ij
//!
//! The curvature convention is `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`, so that the
//! sectional curvature is `⟨R(X,Y)Y, X⟩ / (|X|²|Y|² − ⟨X,Y⟩²)`.

mod decl;
mod revolution;
mod sphere;
mod torus;

pub use decl::{builtin, builtin_names, ExplicitDecl, ManifoldDecl, ManifoldModel, ProfileDecl};
pub use revolution::{Profile, ProfileBasis, Revolution};
pub use sphere::{ChartRotation, Sphere};
pub use torus::FlatTorus;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Default central-difference step for metric derivatives, in chart units.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A point given by its chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub coords: Vec<f64>,
}

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        ChartPoint { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl From<Vec<f64>> for ChartPoint {
    fn from(coords: Vec<f64>) -> Self {
        ChartPoint { coords }
    }
}

/// A tangent vector expressed in the coordinate basis at `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: ChartPoint, components: Vec<f64>) -> Self {
        TangentVector { base, components }
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            components: self.components.iter().map(|c| c * s).collect(),
        }
    }
}

/// Coordinate domain description: bounds and periodicities per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub description: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `Some(period)` for periodic coordinates; the fundamental domain is `[lower, lower + period)`.
    pub periods: Vec<Option<f64>>,
}

/// A Riemannian manifold in a single chart.
///
/// Implementors must be immutable after construction; every evaluator is pure.
pub trait Manifold: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;

    fn label(&self) -> String;

    fn chart(&self) -> ChartSpec;

    /// Metric at `p` without the pole guard (used by finite-difference stencils).
    fn metric_into(&self, p: &[f64], out: &mut [f64]) -> Result<()>;

    /// Christoffel symbols Γ^k_ij. The default differentiates the metric numerically.
    fn christoffel_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        christoffel_from_metric(self, p, self.fd_step(), out)
    }

    /// Derivatives ∂_l Γ^k_ij. The default differentiates `christoffel_into` numerically.
    fn christoffel_derivative_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let d3 = d * d * d;
        let h = self.fd_step();
        let mut plus = vec![0.0; d3];
        let mut minus = vec![0.0; d3];
        let mut q = p.to_vec();
        for l in 0..d {
            q[l] = p[l] + h;
            self.christoffel_into(&q, &mut plus)?;
            q[l] = p[l] - h;
            self.christoffel_into(&q, &mut minus)?;
            q[l] = p[l];
            for m in 0..d3 {
                out[l * d3 + m] = (plus[m] - minus[m]) / (2.0 * h);
            }
        }
        Ok(())
    }

    /// Gaussian curvature for surfaces with a closed form.
    fn gaussian_curvature(&self, _p: &[f64]) -> Option<f64> {
        None
    }

    /// Guard check applied along trajectories.
    fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(GeoError::domain(p, "non-finite coordinate"))
        }
    }

    /// Reduce periodic coordinates into the fundamental domain.
    fn reduce(&self, p: &mut [f64]) {
        let spec = self.chart();
        for (i, c) in p.iter_mut().enumerate() {
            if let Some(period) = spec.periods[i] {
                *c = spec.lower[i] + (*c - spec.lower[i]).rem_euclid(period);
            }
        }
    }

    /// Chart displacement `to − from`, wrapping periodic coordinates to the shortest representative.
    fn chart_delta(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        let spec = self.chart();
        from.iter()
            .zip(to)
            .enumerate()
            .map(|(i, (a, b))| {
                let d = b - a;
                match spec.periods[i] {
                    Some(period) => d - period * (d / period).round(),
                    None => d,
                }
            })
            .collect()
    }

    /// Closed-form exponential map `exp_p(v)`: endpoint and final velocity.
    fn analytic_exp(&self, _p: &[f64], _v: &[f64]) -> Option<Result<(Vec<f64>, Vec<f64>)>> {
        None
    }

    /// Closed-form inverse of the exponential map: every minimizing initial velocity
    /// from `x` to `y` (capped for continua).
    fn analytic_log(&self, _x: &[f64], _y: &[f64]) -> Option<Result<LogSet>> {
        None
    }

    /// Closed-form distance; defaults to the length of an analytic minimizer.
    fn analytic_dist(&self, x: &[f64], y: &[f64]) -> Option<Result<f64>> {
        self.analytic_log(x, y).map(|r| r.map(|set| set.length))
    }

    /// Closed-form first focal time of `t ↦ exp_x(t v)`: `Some(None)` when there is none.
    fn analytic_focal_time(&self, _x: &[f64], _v: &[f64]) -> Option<Option<f64>> {
        None
    }

    /// Upper bound on the geodesic distance between any two points.
    fn diameter_bound(&self) -> f64;

    /// Alternative chart in which a geodesic with data `(x, v)` stays away from coordinate
    /// singularities.
    fn working_chart(&self, _x: &[f64], _v: &[f64]) -> Option<ChartRotation> {
        None
    }

    fn fd_step(&self) -> f64 {
        DEFAULT_FD_STEP
    }
}

/// Every minimizing velocity between two points, as returned by closed forms.
#[derive(Clone, Debug, PartialEq)]
pub struct LogSet {
    pub length: f64,
    pub velocities: Vec<Vec<f64>>,
    /// True when the minimizers form a continuum and only a capped subset is listed.
    pub capped: bool,
}

fn christoffel_from_metric<M: Manifold + ?Sized>(
    model: &M,
    p: &[f64],
    h: f64,
    out: &mut [f64],
) -> Result<()> {
    let d = model.dim();
    let mut g = vec![0.0; d * d];
    model.metric_into(p, &mut g)?;
    let ginv = invert_flat(&g, d).ok_or_else(|| GeoError::domain(p, "metric not invertible"))?;
    // dg[l][i][j] = ∂_l g_ij
    let mut dg = vec![0.0; d * d * d];
    let mut plus = vec![0.0; d * d];
    let mut minus = vec![0.0; d * d];
    let mut q = p.to_vec();
    for l in 0..d {
        q[l] = p[l] + h;
        model.metric_into(&q, &mut plus)?;
        q[l] = p[l] - h;
        model.metric_into(&q, &mut minus)?;
        q[l] = p[l];
        for m in 0..d * d {
            dg[l * d * d + m] = (plus[m] - minus[m]) / (2.0 * h);
        }
    }
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += ginv[k * d + l]
                        * (dg[i * d * d + l * d + j] + dg[j * d * d + l * d + i]
                            - dg[l * d * d + i * d + j]);
                }
                out[k * d * d + i * d + j] = 0.5 * s;
            }
        }
    }
    Ok(())
}

pub(crate) fn invert_flat(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(d, d, a);
    m.try_inverse().map(|inv| {
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = inv[(i, j)];
            }
        }
        out
    })
}

fn check_dim(model: &dyn Manifold, v: &[f64]) -> Result<()> {
    if v.len() != model.dim() {
        return Err(GeoError::Dimension {
            expected: model.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Metric at a chart point, with domain checks.
pub fn metric_at(model: &dyn Manifold, p: &ChartPoint) -> Result<DMatrix<f64>> {
    check_dim(model, &p.coords)?;
    model.check_point(&p.coords)?;
    let d = model.dim();
    let mut g = vec![0.0; d * d];
    model.metric_into(&p.coords, &mut g)?;
    Ok(DMatrix::from_row_slice(d, d, &g))
}

/// Christoffel symbols as a dense `d × d × d` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Christoffel {
    /// Γ^k_ij
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        let d = self.dim;
        self.data[k * d * d + i * d + j]
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn christoffel_at(model: &dyn Manifold, p: &ChartPoint) -> Result<Christoffel> {
    check_dim(model, &p.coords)?;
    model.check_point(&p.coords)?;
    let d = model.dim();
    let mut data = vec![0.0; d * d * d];
    model.christoffel_into(&p.coords, &mut data)?;
    Ok(Christoffel { dim: d, data })
}

/// Christoffel symbols obtained by central differences of the metric with step `h`,
/// independent of any closed form a model may provide.
pub fn christoffel_fd(model: &dyn Manifold, p: &ChartPoint, h: f64) -> Result<Christoffel> {
    check_dim(model, &p.coords)?;
    model.check_point(&p.coords)?;
    let d = model.dim();
    for (i, c) in p.coords.iter().enumerate() {
        let spec = model.chart();
        if spec.periods[i].is_none() && (c - h < spec.lower[i] || c + h > spec.upper[i]) {
            return Err(GeoError::domain(&p.coords, "finite-difference stencil exits the chart"));
        }
    }
    let mut data = vec![0.0; d * d * d];
    christoffel_from_metric(model, &p.coords, h, &mut data)?;
    Ok(Christoffel { dim: d, data })
}

pub fn inner(model: &dyn Manifold, p: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    let d = model.dim();
    let mut g = vec![0.0; d * d];
    model.metric_into(p, &mut g)?;
    Ok(inner_with(&g, d, a, b))
}

#[inline]
pub(crate) fn inner_with(g: &[f64], d: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += g[i * d + j] * b[j];
        }
        s += a[i] * row;
    }
    s
}

pub fn norm(model: &dyn Manifold, p: &[f64], a: &[f64]) -> Result<f64> {
    Ok(inner(model, p, a, a)?.max(0.0).sqrt())
}

impl TangentVector {
    pub fn norm(&self, model: &dyn Manifold) -> Result<f64> {
        norm(model, &self.base.coords, &self.components)
    }
}

/// Orthonormal basis of `T_pM` (columns, chart components). When `first` is given the
/// first vector is its normalization; the basis is positively oriented in the chart.
pub fn orthonormal_frame(
    model: &dyn Manifold,
    p: &[f64],
    first: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>> {
    let d = model.dim();
    let mut g = vec![0.0; d * d];
    model.metric_into(p, &mut g)?;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if let Some(f) = first {
        candidates.push(f.to_vec());
    }
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        candidates.push(e);
    }
    for c in candidates {
        if basis.len() == d {
            break;
        }
        let mut w = c.clone();
        for b in &basis {
            let proj = inner_with(&g, d, &w, b);
            for k in 0..d {
                w[k] -= proj * b[k];
            }
        }
        let n = inner_with(&g, d, &w, &w).max(0.0).sqrt();
        let scale = inner_with(&g, d, &c, &c).max(0.0).sqrt();
        if n > 1e-10 * scale.max(1e-300) {
            for k in 0..d {
                w[k] /= n;
            }
            basis.push(w);
        }
    }
    if basis.len() != d {
        return Err(GeoError::Degenerate("could not complete an orthonormal frame".into()));
    }
    let m = DMatrix::from_fn(d, d, |i, j| basis[j][i]);
    if m.determinant() < 0.0 {
        let last = basis.last_mut().unwrap();
        last.iter_mut().for_each(|c| *c = -*c);
    }
    Ok(basis)
}

/// `R(X,Y)Z` in chart components.
pub fn riemann_apply(
    model: &dyn Manifold,
    p: &[f64],
    x: &[f64],
    y: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let d = model.dim();
    if let Some(k) = model.gaussian_curvature(p) {
        let mut g = vec![0.0; d * d];
        model.metric_into(p, &mut g)?;
        let yz = inner_with(&g, d, y, z);
        let xz = inner_with(&g, d, x, z);
        return Ok((0..d).map(|i| k * (yz * x[i] - xz * y[i])).collect());
    }
    riemann_apply_from_christoffel(model, p, x, y, z)
}

/// `R(X,Y)Z` from Christoffel symbols and their derivatives, ignoring any closed-form
/// curvature the model offers.
pub fn riemann_apply_from_christoffel(
    model: &dyn Manifold,
    p: &[f64],
    x: &[f64],
    y: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let d = model.dim();
    let d2 = d * d;
    let d3 = d2 * d;
    let mut gam = vec![0.0; d3];
    let mut dgam = vec![0.0; d3 * d];
    model.christoffel_into(p, &mut gam)?;
    model.christoffel_derivative_into(p, &mut dgam)?;
    let g = |k: usize, i: usize, j: usize| gam[k * d2 + i * d + j];
    let dg = |l: usize, k: usize, i: usize, j: usize| dgam[l * d3 + k * d2 + i * d + j];
    let mut out = vec![0.0; d];
    // R(∂_j, ∂_k)∂_i = R^l_ijk ∂_l
    for l in 0..d {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let coef = x[j] * y[k] * z[i];
                    if coef == 0.0 {
                        continue;
                    }
                    let mut r = dg(j, l, k, i) - dg(k, l, j, i);
                    for m in 0..d {
                        r += g(l, j, m) * g(m, k, i) - g(l, k, m) * g(m, j, i);
                    }
                    s += coef * r;
                }
            }
        }
        out[l] = s;
    }
    Ok(out)
}

/// Sectional curvature of the plane spanned by `xi` and `eta` at `p`.
pub fn sectional_curvature(
    model: &dyn Manifold,
    p: &ChartPoint,
    xi: &TangentVector,
    eta: &TangentVector,
) -> Result<f64> {
    check_dim(model, &p.coords)?;
    check_dim(model, &xi.components)?;
    check_dim(model, &eta.components)?;
    model.check_point(&p.coords)?;
    let pc = &p.coords;
    let xx = inner(model, pc, &xi.components, &xi.components)?;
    let yy = inner(model, pc, &eta.components, &eta.components)?;
    let xy = inner(model, pc, &xi.components, &eta.components)?;
    let area2 = xx * yy - xy * xy;
    if !(area2 > 1e-14 * xx * yy) || xx == 0.0 || yy == 0.0 {
        return Err(GeoError::Degenerate(
            "sectional curvature needs linearly independent vectors".into(),
        ));
    }
    let r = riemann_apply(model, pc, &xi.components, &eta.components, &eta.components)?;
    Ok(inner(model, pc, &r, &xi.components)? / area2)
}

/// Symmetry defect and smallest eigenvalue of the metric at `p`.
pub fn metric_health(model: &dyn Manifold, p: &ChartPoint) -> Result<(f64, f64)> {
    let g = metric_at(model, p)?;
    let d = g.nrows();
    let mut defect: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            defect = defect.max((g[(i, j)] - g[(j, i)]).abs());
        }
    }
    let sym = (&g + g.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((defect, min_eig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pt(c: &[f64]) -> ChartPoint {
        ChartPoint::new(c.to_vec())
    }

    fn tv(p: &ChartPoint, c: &[f64]) -> TangentVector {
        TangentVector::new(p.clone(), c.to_vec())
    }

    #[test]
    fn metric_examples() {
        let t = builtin("torus_2pi").unwrap();
        assert_eq!(metric_at(&*t, &pt(&[1.0, 2.0])).unwrap(), DMatrix::identity(2, 2));
        let s = builtin("sphere_r1").unwrap();
        let g = metric_at(&*s, &pt(&[PI / 2.0, 0.3])).unwrap();
        assert!((g - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        let g = metric_at(&*s, &pt(&[PI / 3.0, 0.3])).unwrap();
        assert!((g[(1, 1)] - 0.75).abs() < 1e-15 && (g[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(metric_at(&*s, &pt(&[0.0, 0.3])).is_err());
    }

    #[test]
    fn christoffel_examples() {
        let s = builtin("sphere_r1").unwrap();
        let c = christoffel_at(&*s, &pt(&[PI / 2.0, 0.0])).unwrap();
        assert!(c.get(0, 1, 1).abs() < 1e-15);
        let c = christoffel_at(&*s, &pt(&[PI / 4.0, 0.0])).unwrap();
        assert!((c.get(1, 0, 1) - 1.0).abs() < 1e-14);
        assert!((c.get(1, 1, 0) - 1.0).abs() < 1e-14);
        let t = builtin("torus_2pi").unwrap();
        assert!(christoffel_at(&*t, &pt(&[0.2, 0.1])).unwrap().data.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn finite_difference_christoffels_match_closed_forms() {
        for name in builtin_names() {
            let m = builtin(name).unwrap();
            for p in [[1.0, 0.2], [0.6, -1.0], [2.1, 2.5]] {
                let p = pt(&p);
                let exact = christoffel_at(&*m, &p).unwrap();
                let fd = christoffel_fd(&*m, &p, 1e-4).unwrap();
                assert!(exact.max_abs_diff(&fd) < 1e-6, "{name}");
            }
        }
    }

    #[test]
    fn curvature_from_christoffels_matches_closed_forms() {
        for name in builtin_names() {
            let m = builtin(name).unwrap();
            for p in [[1.0, 0.2], [0.6, -1.0], [2.1, 2.5]] {
                let x = [0.3, 0.7];
                let y = [-0.5, 0.2];
                let a = riemann_apply(&*m, &p, &x, &y, &y).unwrap();
                let b = riemann_apply_from_christoffel(&*m, &p, &x, &y, &y).unwrap();
                for k in 0..2 {
                    assert!((a[k] - b[k]).abs() < 1e-9, "{name}: {a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn sectional_curvature_examples_and_plane_invariance() {
        let p = pt(&[1.1, 0.4]);
        let cases = [("sphere_r1", 1.0), ("sphere_r2", 0.25), ("torus_2pi", 0.0)];
        for (name, k) in cases {
            let m = builtin(name).unwrap();
            let s = sectional_curvature(&*m, &p, &tv(&p, &[1.0, 0.0]), &tv(&p, &[0.3, 1.0])).unwrap();
            assert!((s - k).abs() < 1e-12, "{name}");
        }
        let m = builtin("dumbbell").unwrap();
        let xi = [0.7, -0.2];
        let eta = [0.1, 0.9];
        let s0 = sectional_curvature(&*m, &p, &tv(&p, &xi), &tv(&p, &eta)).unwrap();
        let (a, b, c, d) = (2.0, -0.5, 0.3, 1.7);
        let xi2 = [a * xi[0] + b * eta[0], a * xi[1] + b * eta[1]];
        let eta2 = [c * xi[0] + d * eta[0], c * xi[1] + d * eta[1]];
        let s1 = sectional_curvature(&*m, &p, &tv(&p, &xi2), &tv(&p, &eta2)).unwrap();
        assert!((s0 - s1).abs() < 1e-8);
        assert!(matches!(
            sectional_curvature(&*m, &p, &tv(&p, &xi), &tv(&p, &[1.4, -0.4])),
            Err(GeoError::Degenerate(_))
        ));
    }

    #[test]
    fn metrics_are_symmetric_positive_definite() {
        for name in builtin_names() {
            let m = builtin(name).unwrap();
            for i in 1..20 {
                for j in 0..20 {
                    let p = pt(&[PI * i as f64 / 20.0, -PI + 2.0 * PI * j as f64 / 20.0]);
                    let (defect, min_eig) = metric_health(&*m, &p).unwrap();
                    assert!(defect <= 1e-12 && min_eig > 0.0, "{name}");
                }
            }
        }
    }

    #[test]
    fn periodic_reduction_and_delta() {
        let t = builtin("torus_2pi").unwrap();
        let mut p = vec![7.0, -1.0];
        t.reduce(&mut p);
        assert!((p[0] - (7.0 - 2.0 * PI)).abs() < 1e-15 && (p[1] - (2.0 * PI - 1.0)).abs() < 1e-15);
        let d = t.chart_delta(&[0.1, 0.1], &[2.0 * PI - 0.1, 0.2]);
        assert!((d[0] + 0.2).abs() < 1e-15 && (d[1] - 0.1).abs() < 1e-15);
    }
}
