//! Geodesic distance: closed forms when the model has them, otherwise shooting from a fan of
//! geodesics followed by damped Newton refinement on the endpoint residual.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ode::{GeodesicFlow, Rk4};
use super::{exp_with_jacobian, steps_for, DEFAULT_STEP};
use crate::error::{GeoError, Result};
use crate::manifold::{inner_with, norm, orthonormal_frame, ChartPoint, Manifold};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceOptions {
    /// Directions in the shooting fan.
    pub n_directions: usize,
    /// Arclength spacing of fan samples (also the fan's RK4 step).
    pub fan_step: f64,
    /// RK4 step used by the Newton refinement.
    pub step: f64,
    /// Endpoint residual accepted as converged (chart units).
    pub tol: f64,
    /// Endpoint mismatch allowed for a velocity to count as a minimizer.
    pub endpoint_gap: f64,
    /// Length excess over the minimum allowed for a velocity to count as a minimizer.
    pub length_gap: f64,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            n_directions: 720,
            fan_step: 1e-2,
            step: DEFAULT_STEP,
            tol: 1e-10,
            endpoint_gap: 1e-6,
            length_gap: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub value: f64,
    /// Initial velocity at `x` of one minimizing geodesic, `exp_x(v) = y`.
    pub minimizer_velocity: Vec<f64>,
    /// Every minimizing initial velocity found (within the declared gaps).
    pub minimizers: Vec<Vec<f64>>,
    pub multiplicity: usize,
    pub converged: bool,
    /// True when minimizers form a continuum of which only a subset is listed.
    pub capped: bool,
}

/// `d(x, y)`. Builds a fresh fan for numerical models; reuse [`GeodesicFan`] for repeated
/// queries from the same base point.
pub fn distance(
    model: &dyn Manifold,
    x: &ChartPoint,
    y: &ChartPoint,
    opts: &DistanceOptions,
) -> Result<DistanceResult> {
    model.check_point(&x.coords)?;
    model.check_point(&y.coords)?;
    if let Some(r) = analytic(model, &x.coords, &y.coords) {
        return r;
    }
    GeodesicFan::new(model, &x.coords, opts)?.distance(&y.coords)
}

fn analytic(model: &dyn Manifold, x: &[f64], y: &[f64]) -> Option<Result<DistanceResult>> {
    model.analytic_log(x, y).map(|r| {
        r.map(|set| DistanceResult {
            value: set.length,
            minimizer_velocity: set.velocities[0].clone(),
            multiplicity: set.velocities.len(),
            minimizers: set.velocities,
            converged: true,
            capped: set.capped,
        })
    })
}

/// Outcome of a Newton solve for `exp_x(w) = y`.
#[derive(Clone, Debug)]
pub struct ShotSolution {
    pub velocity: Vec<f64>,
    pub length: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Damped Newton iteration on `exp_x(w) − y` from `w0`, using exactly `n` RK4 steps.
pub fn solve_shot(
    model: &dyn Manifold,
    x: &[f64],
    y: &[f64],
    w0: &[f64],
    n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<ShotSolution> {
    let d = model.dim();
    let mut w = w0.to_vec();
    let resid = |p: &[f64]| -> Vec<f64> { model.chart_delta(y, p) };
    let (p, mut jac) = exp_with_jacobian(model, x, &w, n)?;
    let mut f = resid(&p);
    let mut fn_ = max_abs(&f);
    let mut iter = 0;
    while fn_ > 1e-14 && iter < max_iter {
        iter += 1;
        let rhs = nalgebra::DVector::from_iterator(d, f.iter().map(|c| -c));
        let delta = match jac.clone().lu().solve(&rhs) {
            Some(s) => s,
            None => break,
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-4 {
            let wt: Vec<f64> = (0..d).map(|k| w[k] + lambda * delta[k]).collect();
            match exp_with_jacobian(model, x, &wt, n) {
                Ok((pt, jt)) => {
                    let ft = resid(&pt);
                    let nt = max_abs(&ft);
                    if nt < fn_ {
                        w = wt;
                        f = ft;
                        fn_ = nt;
                        jac = jt;
                        accepted = true;
                        break;
                    }
                }
                Err(GeoError::ChartExit { .. }) | Err(GeoError::Domain { .. }) => {}
                Err(e) => return Err(e),
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(ShotSolution {
        length: norm(model, x, &w)?,
        velocity: w,
        residual: fn_,
        converged: fn_ <= tol,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|c| c.abs()).fold(0.0, f64::max)
}

/// Unit-speed geodesics from one base point, sampled at a fixed arclength spacing and
/// indexed by a spatial hash for point location.
#[derive(Debug)]
pub struct GeodesicFan<'a> {
    model: &'a dyn Manifold,
    x: Vec<f64>,
    frame: Vec<Vec<f64>>,
    opts: DistanceOptions,
    ds: f64,
    rays: Vec<Vec<[f64; 2]>>,
    cell: [f64; 2],
    wrap: [Option<i64>; 2],
    lower: [f64; 2],
    index: HashMap<(i64, i64), Vec<(u32, u32)>>,
}

const CELL_TARGET: f64 = 0.05;
const MAX_CELLS_PER_QUAD: i64 = 64;

impl<'a> GeodesicFan<'a> {
    pub fn new(model: &'a dyn Manifold, x: &[f64], opts: &DistanceOptions) -> Result<Self> {
        Self::with_length(model, x, opts, model.diameter_bound())
    }

    /// Fan whose rays run to arclength `max_len` (plus a small margin).
    pub fn with_length(
        model: &'a dyn Manifold,
        x: &[f64],
        opts: &DistanceOptions,
        max_len: f64,
    ) -> Result<Self> {
        if model.dim() != 2 {
            return Err(GeoError::Precondition(
                "numerical distance is implemented for surfaces only".into(),
            ));
        }
        model.check_point(x)?;
        let frame = orthonormal_frame(model, x, None)?;
        let ds = opts.fan_step;
        let n_samples = steps_for(max_len, ds) + 2;
        let nd = opts.n_directions.max(8);
        let mut rays = Vec::with_capacity(nd);
        for j in 0..nd {
            let th = 2.0 * PI * j as f64 / nd as f64;
            let (s, c) = th.sin_cos();
            let v = [c * frame[0][0] + s * frame[1][0], c * frame[0][1] + s * frame[1][1]];
            rays.push(integrate_ray(model, x, &v, ds, n_samples)?);
        }
        let spec = model.chart();
        let mut cell = [CELL_TARGET; 2];
        let mut wrap = [None; 2];
        for i in 0..2 {
            if let Some(p) = spec.periods[i] {
                let n = (p / CELL_TARGET).ceil();
                cell[i] = p / n;
                wrap[i] = Some(n as i64);
            }
        }
        let mut fan = GeodesicFan {
            model,
            x: x.to_vec(),
            frame,
            opts: opts.clone(),
            ds,
            rays,
            cell,
            wrap,
            lower: [spec.lower[0], spec.lower[1]],
            index: HashMap::new(),
        };
        fan.build_index();
        Ok(fan)
    }

    fn key(&self, i: i64, j: i64) -> (i64, i64) {
        let a = match self.wrap[0] {
            Some(n) => i.rem_euclid(n),
            None => i,
        };
        let b = match self.wrap[1] {
            Some(n) => j.rem_euclid(n),
            None => j,
        };
        (a, b)
    }

    fn cell_of(&self, p: &[f64]) -> (i64, i64) {
        (
            ((p[0] - self.lower[0]) / self.cell[0]).floor() as i64,
            ((p[1] - self.lower[1]) / self.cell[1]).floor() as i64,
        )
    }

    fn build_index(&mut self) {
        let nd = self.rays.len();
        let mut index: HashMap<(i64, i64), Vec<(u32, u32)>> = HashMap::new();
        for j in 0..nd {
            let a = &self.rays[j];
            let b = &self.rays[(j + 1) % nd];
            let len = a.len().min(b.len());
            for k in 0..len.saturating_sub(1) {
                let corners = [a[k], a[k + 1], b[k], b[k + 1]];
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for c in &corners {
                    for i in 0..2 {
                        lo[i] = lo[i].min(c[i]);
                        hi[i] = hi[i].max(c[i]);
                    }
                }
                let (i0, j0) = self.cell_of(&lo);
                let (i1, j1) = self.cell_of(&hi);
                if i1 - i0 > MAX_CELLS_PER_QUAD || j1 - j0 > MAX_CELLS_PER_QUAD {
                    continue;
                }
                for ci in i0..=i1 {
                    for cj in j0..=j1 {
                        index.entry(self.key(ci, cj)).or_default().push((j as u32, k as u32));
                    }
                }
            }
        }
        self.index = index;
    }

    pub fn base(&self) -> &[f64] {
        &self.x
    }

    pub fn n_directions(&self) -> usize {
        self.rays.len()
    }

    pub fn sample_spacing(&self) -> f64 {
        self.ds
    }

    pub fn angle_spacing(&self) -> f64 {
        2.0 * PI / self.rays.len() as f64
    }

    pub fn frame(&self) -> &[Vec<f64>] {
        &self.frame
    }

    pub fn options(&self) -> &DistanceOptions {
        &self.opts
    }

    /// Unit initial velocity of fan direction `theta`.
    pub fn direction(&self, theta: f64) -> Vec<f64> {
        let (s, c) = theta.sin_cos();
        (0..2).map(|k| c * self.frame[0][k] + s * self.frame[1][k]).collect()
    }

    /// Fan angle of a velocity at the base point.
    pub fn angle_of(&self, w: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; 4];
        self.model.metric_into(&self.x, &mut g)?;
        let a = inner_with(&g, 2, w, &self.frame[0]);
        let b = inner_with(&g, 2, w, &self.frame[1]);
        Ok(b.atan2(a).rem_euclid(2.0 * PI))
    }

    /// Candidate `(θ, s)` seeds for geodesics from the base point to `y`, sorted by `s`.
    pub fn seeds(&self, y: &[f64]) -> Vec<(f64, f64)> {
        let nd = self.rays.len();
        let dth = 2.0 * PI / nd as f64;
        let (ci, cj) = self.cell_of(y);
        let Some(list) = self.index.get(&self.key(ci, cj)) else {
            return Vec::new();
        };
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(j, k) in list {
            let (j, k) = (j as usize, k as usize);
            let a = &self.rays[j];
            let b = &self.rays[(j + 1) % nd];
            let c00 = a[k];
            let shift = self.model.chart_delta(&c00, y);
            let yy = [c00[0] + shift[0], c00[1] + shift[1]];
            let tri = [
                ([a[k], a[k + 1], b[k + 1]], [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]),
                ([a[k], b[k + 1], b[k]], [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0)]),
            ];
            let mut best: Option<(f64, (f64, f64))> = None;
            for (pts, params) in &tri {
                if let Some(l) = barycentric(pts, &yy) {
                    let m = l.iter().cloned().fold(f64::INFINITY, f64::min);
                    if m >= -0.5 && best.map_or(true, |b| m > b.0) {
                        let u = l[0] * params[0].0 + l[1] * params[1].0 + l[2] * params[2].0;
                        let v = l[0] * params[0].1 + l[1] * params[1].1 + l[2] * params[2].1;
                        best = Some((m, (u, v)));
                    }
                }
            }
            if let Some((_, (u, v))) = best {
                let th = (j as f64 + u) * dth;
                let s = (k as f64 + v) * self.ds;
                if s > 0.0 {
                    out.push((th.rem_euclid(2.0 * PI), s));
                }
            }
        }
        out.sort_by(|p, q| p.1.total_cmp(&q.1).then(p.0.total_cmp(&q.0)));
        let mut dedup: Vec<(f64, f64)> = Vec::new();
        for s in out {
            let close = dedup.iter().any(|d| {
                let dt = (d.0 - s.0).abs();
                dt.min(2.0 * PI - dt) <= 2.5 * dth && (d.1 - s.1).abs() <= 2.5 * self.ds
            });
            if !close {
                dedup.push(s);
            }
        }
        dedup
    }

    /// Newton refinement from a seed velocity: coarse steps first, then the configured step.
    pub fn refine(&self, y: &[f64], w0: &[f64]) -> Result<ShotSolution> {
        let len = norm(self.model, &self.x, w0)?;
        let coarse_n = steps_for(len + 0.1, self.ds.max(self.opts.step));
        let coarse = solve_shot(self.model, &self.x, y, w0, coarse_n, 1e-8, 30)?;
        let start = if coarse.residual < 1e-3 { coarse.velocity } else { w0.to_vec() };
        let fine_n = steps_for(len + 0.1, self.opts.step);
        solve_shot(self.model, &self.x, y, &start, fine_n, self.opts.tol, 20)
    }

    /// Every converged geodesic to `y` whose length is within `slack` of the shortest,
    /// processed by increasing seed length.
    pub fn shots(&self, y: &[f64], slack: f64) -> Result<Vec<ShotSolution>> {
        let mut seeds: Vec<Vec<f64>> = Vec::new();
        let mut seed_len: Vec<f64> = Vec::new();
        let delta = self.model.chart_delta(&self.x, y);
        let local = norm(self.model, &self.x, &delta)?;
        if local < 4.0 * self.ds {
            seeds.push(delta);
            seed_len.push(local);
        }
        for (th, s) in self.seeds(y) {
            seeds.push(self.direction(th).iter().map(|c| c * s).collect());
            seed_len.push(s);
        }
        let margin = 3.0 * self.ds + 0.02;
        let mut best = f64::INFINITY;
        let mut sols: Vec<ShotSolution> = Vec::new();
        for (w0, s) in seeds.iter().zip(&seed_len) {
            if *s > best + slack + margin {
                break;
            }
            let sol = match self.refine(y, w0) {
                Ok(s) => s,
                Err(GeoError::ChartExit { .. }) | Err(GeoError::Domain { .. }) => continue,
                Err(e) => return Err(e),
            };
            // at conjugate points Newton stalls short of `tol`; such shots still count when
            // they hit `y` within the endpoint gap
            if !(sol.converged || sol.residual <= self.opts.endpoint_gap) {
                continue;
            }
            let dup = sols.iter().any(|o| {
                let diff: Vec<f64> = o.velocity.iter().zip(&sol.velocity).map(|(a, b)| a - b).collect();
                max_abs(&diff) < 1e-6 * (1.0 + o.length)
            });
            if dup {
                continue;
            }
            best = best.min(sol.length);
            sols.push(sol);
        }
        sols.retain(|s| s.length <= best + slack);
        sols.sort_by(|a, b| a.length.total_cmp(&b.length));
        Ok(sols)
    }

    pub fn distance(&self, y: &[f64]) -> Result<DistanceResult> {
        self.model.check_point(y)?;
        let sols = self.shots(y, self.opts.length_gap)?;
        if sols.is_empty() {
            let seeds = self.seeds(y);
            let (th, s) = seeds.first().cloned().unwrap_or((0.0, f64::NAN));
            let w: Vec<f64> = self.direction(th).iter().map(|c| c * s).collect();
            return Ok(DistanceResult {
                value: s,
                minimizer_velocity: w.clone(),
                minimizers: vec![w],
                multiplicity: 0,
                converged: false,
                capped: false,
            });
        }
        let minimizers: Vec<Vec<f64>> = sols
            .iter()
            .filter(|s| s.residual <= self.opts.endpoint_gap)
            .map(|s| s.velocity.clone())
            .collect();
        Ok(DistanceResult {
            value: sols[0].length,
            minimizer_velocity: sols[0].velocity.clone(),
            multiplicity: minimizers.len(),
            minimizers,
            converged: true,
            capped: false,
        })
    }
}

/// Unit-speed samples of `exp_x(s v)` at arclength spacing `ds`, truncated at a chart exit.
pub fn integrate_ray(
    model: &dyn Manifold,
    x: &[f64],
    v: &[f64],
    ds: f64,
    n_samples: usize,
) -> Result<Vec<[f64; 2]>> {
    let mut flow = GeodesicFlow::new(model, 0, 0);
    let mut y = vec![x[0], x[1], v[0], v[1]];
    let mut rk = Rk4::new(4);
    let mut out = Vec::with_capacity(n_samples);
    out.push([x[0], x[1]]);
    let mut rhs = |t: f64, s: &[f64], d: &mut [f64]| flow.eval(t, s, d);
    for i in 1..n_samples {
        match rk.step(&mut y, (i - 1) as f64 * ds, ds, &mut rhs) {
            Ok(()) => out.push([y[0], y[1]]),
            Err(GeoError::ChartExit { .. }) | Err(GeoError::Integration { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn barycentric(tri: &[[f64; 2]; 3], p: &[f64; 2]) -> Option<[f64; 3]> {
    let [a, b, c] = tri;
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    Some([l0, l1, 1.0 - l0 - l1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::builtin;

    #[test]
    fn closed_form_examples() {
        let t = builtin("torus_2pi").unwrap();
        let o = DistanceOptions::default();
        let r = distance(&*t, &ChartPoint::new(vec![0.0, 0.0]), &ChartPoint::new(vec![1.5 * PI, 0.0]), &o)
            .unwrap();
        assert!((r.value - PI / 2.0).abs() < 1e-12);
        let s = builtin("sphere_r1").unwrap();
        let r = distance(
            &*s,
            &ChartPoint::new(vec![PI / 2.0, 0.0]),
            &ChartPoint::new(vec![PI / 2.0, PI]),
            &o,
        )
        .unwrap();
        assert!((r.value - PI).abs() < 1e-12);
    }

    #[test]
    fn fan_distance_on_a_flat_revolution_matches_cylinder_geometry() {
        // r ≡ 1: a flat torus of revolution with periods π (in u) and 2π (in φ).
        let m = crate::manifold::ManifoldModel::parse(
            r#"{"type":"revolution","params":{"profile":{"basis":"fourier","coeffs":[1.0],"u_range":[0.0,3.141592653589793]}}}"#,
        )
        .unwrap();
        let fan = GeodesicFan::new(&*m, &[0.3, 0.2], &DistanceOptions::default()).unwrap();
        let r = fan.distance(&[1.0, 2.5]).unwrap();
        assert!(r.converged);
        assert!((r.value - (0.7f64.powi(2) + 2.3f64.powi(2)).sqrt()).abs() < 1e-8, "{}", r.value);
        // wraps in u: 0.3 -> 3.0 is 0.44 the short way
        let r = fan.distance(&[3.0, 0.2]).unwrap();
        assert!((r.value - (PI - 2.7)).abs() < 1e-8, "{}", r.value);
    }
}
