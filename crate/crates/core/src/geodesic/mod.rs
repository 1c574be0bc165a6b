//! Geodesic flow, exponential map, parallel transport and the distance oracle.

pub mod distance;
pub(crate) mod ode;

pub use distance::{distance, solve_shot, DistanceOptions, DistanceResult, GeodesicFan, ShotSolution};

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::manifold::{inner_with, orthonormal_frame, ChartPoint, ChartRotation, Manifold, TangentVector};
use ode::{GeodesicFlow, Rk4};

/// Default RK4 step, in arclength units.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Number of RK4 steps needed to cover arclength `len` with steps no longer than `step`.
pub fn steps_for(len: f64, step: f64) -> usize {
    ((len / step).ceil() as usize).max(1)
}

/// Working coordinates for a geodesic computation: the model's own chart, or a rotated
/// chart that keeps the trajectory away from coordinate singularities.
#[derive(Clone, Debug)]
pub struct WorkingFrame {
    pub rotation: Option<ChartRotation>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl WorkingFrame {
    pub fn new(model: &dyn Manifold, x: &[f64], v: &[f64]) -> Result<Self> {
        match model.working_chart(x, v) {
            Some(rot) => Ok(WorkingFrame {
                x: rot.point_to_work(x)?,
                v: rot.vector_to_work(x, v)?,
                rotation: Some(rot),
            }),
            None => Ok(WorkingFrame {
                rotation: None,
                x: x.to_vec(),
                v: v.to_vec(),
            }),
        }
    }

    pub fn point_to_model(&self, p: &[f64]) -> Result<Vec<f64>> {
        match &self.rotation {
            Some(r) => r.point_to_model(p),
            None => Ok(p.to_vec()),
        }
    }

    pub fn vector_to_model(&self, p: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        match &self.rotation {
            Some(r) => r.vector_to_model(p, w),
            None => Ok(w.to_vec()),
        }
    }

    pub fn vector_to_work(&self, pm: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        match &self.rotation {
            Some(r) => r.vector_to_work(pm, w),
            None => Ok(w.to_vec()),
        }
    }
}

fn check_dims(model: &dyn Manifold, x: &[f64], v: &[f64]) -> Result<()> {
    let d = model.dim();
    for len in [x.len(), v.len()] {
        if len != d {
            return Err(GeoError::Dimension { expected: d, got: len });
        }
    }
    Ok(())
}

/// Integrate `γ(0) = x, γ̇(0) = v` over `[0, t_end]` with `n` RK4 steps in the given chart.
/// Returns endpoint and final velocity (coordinates not reduced).
pub fn integrate_exp(
    model: &dyn Manifold,
    x: &[f64],
    v: &[f64],
    t_end: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(model, x, v)?;
    let d = model.dim();
    let mut flow = GeodesicFlow::new(model, 0, 0);
    let mut y = vec![0.0; flow.len()];
    y[..d].copy_from_slice(x);
    y[d..].copy_from_slice(v);
    let mut rk = Rk4::new(y.len());
    let dt = t_end / n as f64;
    let mut rhs = |t: f64, s: &[f64], ds: &mut [f64]| flow.eval(t, s, ds);
    for i in 0..n {
        rk.step(&mut y, i as f64 * dt, dt, &mut rhs)?;
    }
    model.check_point(&y[..d]).map_err(|e| GeoError::ChartExit {
        t: t_end,
        reason: e.to_string(),
    })?;
    Ok((y[..d].to_vec(), y[d..].to_vec()))
}

/// Exponential map `exp_x(t v)` by numerical integration with the given step (arclength
/// units). Runs in a singularity-free working chart when the model offers one; the result
/// is expressed in the model chart with periodic coordinates reduced.
pub fn exp_map(
    model: &dyn Manifold,
    v: &TangentVector,
    t: f64,
    step: f64,
) -> Result<(ChartPoint, TangentVector)> {
    if !(t >= 0.0) {
        return Err(GeoError::Precondition(format!("exp_map needs t >= 0, got {t}")));
    }
    if !(step > 0.0) {
        return Err(GeoError::Precondition(format!("exp_map needs step > 0, got {step}")));
    }
    let x = &v.base.coords;
    check_dims(model, x, &v.components)?;
    model.check_point(x)?;
    let speed = v.norm(model)?;
    let wf = WorkingFrame::new(model, x, &v.components)?;
    let n = steps_for(t * speed, step);
    let (pw, vw) = integrate_exp(model, &wf.x, &wf.v, t, n)?;
    let mut p = wf.point_to_model(&pw)?;
    let vel = wf.vector_to_model(&pw, &vw)?;
    model.reduce(&mut p);
    let base = ChartPoint::new(p);
    Ok((base.clone(), TangentVector::new(base, vel)))
}

/// `exp_x(w)`: closed form when available, otherwise RK4 with `n` steps in the working chart.
/// Endpoint is reduced; returns the final velocity as well.
pub fn exp_point(model: &dyn Manifold, x: &[f64], w: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(model, x, w)?;
    if let Some(r) = model.analytic_exp(x, w) {
        let (mut p, vel) = r?;
        model.reduce(&mut p);
        return Ok((p, vel));
    }
    let wf = WorkingFrame::new(model, x, w)?;
    let (pw, vw) = integrate_exp(model, &wf.x, &wf.v, 1.0, n)?;
    let mut p = wf.point_to_model(&pw)?;
    let vel = wf.vector_to_model(&pw, &vw)?;
    model.reduce(&mut p);
    Ok((p, vel))
}

/// Endpoint of `exp_x(w)` together with the Jacobian `∂ exp_x(w) / ∂w` (chart components).
///
/// Numerical models integrate the variational equations alongside the geodesic with exactly
/// `n` steps, so the Jacobian is that of the discretized map. Closed-form models use central
/// differences of the closed form.
pub fn exp_with_jacobian(
    model: &dyn Manifold,
    x: &[f64],
    w: &[f64],
    n: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_dims(model, x, w)?;
    let d = model.dim();
    if model.analytic_exp(x, w).is_some() {
        let (p, _) = exp_point(model, x, w, n)?;
        let h = 1e-6 * (1.0 + w.iter().map(|c| c.abs()).fold(0.0, f64::max));
        let mut jac = DMatrix::zeros(d, d);
        let mut wp = w.to_vec();
        for c in 0..d {
            wp[c] = w[c] + h;
            let (pp, _) = exp_point(model, x, &wp, n)?;
            wp[c] = w[c] - h;
            let (pm, _) = exp_point(model, x, &wp, n)?;
            wp[c] = w[c];
            let diff = model.chart_delta(&pm, &pp);
            for k in 0..d {
                jac[(k, c)] = diff[k] / (2.0 * h);
            }
        }
        return Ok((p, jac));
    }
    let mut flow = GeodesicFlow::new(model, 0, d);
    let mut y = vec![0.0; flow.len()];
    y[..d].copy_from_slice(x);
    y[d..2 * d].copy_from_slice(w);
    let vo = flow.var_offset();
    for c in 0..d {
        y[vo + d * d + c * d + c] = 1.0;
    }
    let mut rk = Rk4::new(y.len());
    let dt = 1.0 / n as f64;
    let mut rhs = |t: f64, s: &[f64], ds: &mut [f64]| flow.eval(t, s, ds);
    for i in 0..n {
        rk.step(&mut y, i as f64 * dt, dt, &mut rhs)?;
    }
    model.check_point(&y[..d]).map_err(|e| GeoError::ChartExit {
        t: 1.0,
        reason: e.to_string(),
    })?;
    let mut jac = DMatrix::zeros(d, d);
    for c in 0..d {
        for k in 0..d {
            jac[(k, c)] = y[vo + c * d + k];
        }
    }
    let mut p = y[..d].to_vec();
    model.reduce(&mut p);
    Ok((p, jac))
}

/// A sampled geodesic with an optional parallel orthonormal frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicTrace {
    pub initial: TangentVector,
    /// Rotation between the chart of `points` and the model chart, when a working chart was used.
    pub chart: Option<ChartRotation>,
    pub grid: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// `frame[s][i]` is the `i`-th frame vector at sample `s` (chart components).
    pub frame: Vec<Vec<Vec<f64>>>,
    pub speed: f64,
}

impl GeodesicTrace {
    /// Largest relative deviation of the speed from its initial value.
    pub fn speed_drift(&self, model: &dyn Manifold) -> Result<f64> {
        let d = model.dim();
        let mut g = vec![0.0; d * d];
        let mut worst: f64 = 0.0;
        for (p, v) in self.points.iter().zip(&self.velocities) {
            model.metric_into(p, &mut g)?;
            let s = inner_with(&g, d, v, v).sqrt();
            worst = worst.max((s - self.speed).abs() / self.speed.max(f64::MIN_POSITIVE));
        }
        Ok(worst)
    }

    /// Largest entry of `Gᵀ g G − Id` over all samples.
    pub fn frame_defect(&self, model: &dyn Manifold) -> Result<f64> {
        let d = model.dim();
        let mut g = vec![0.0; d * d];
        let mut worst: f64 = 0.0;
        for (p, f) in self.points.iter().zip(&self.frame) {
            model.metric_into(p, &mut g)?;
            for i in 0..f.len() {
                for j in 0..f.len() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((inner_with(&g, d, &f[i], &f[j]) - target).abs());
                }
            }
        }
        Ok(worst)
    }

    /// CSV with columns `t, x0.., v0.., e{i}_{k}..` (frame vector `i`, component `k`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.initial.components.len();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|k| format!("x{k}")));
        header.extend((0..d).map(|k| format!("v{k}")));
        let nf = self.frame.first().map(|f| f.len()).unwrap_or(0);
        for i in 0..nf {
            header.extend((0..d).map(|k| format!("e{i}_{k}")));
        }
        wtr.write_record(&header).map_err(csv_err)?;
        for s in 0..self.grid.len() {
            let mut row = vec![fmt_num(self.grid[s])];
            row.extend(self.points[s].iter().map(|c| fmt_num(*c)));
            row.extend(self.velocities[s].iter().map(|c| fmt_num(*c)));
            if let Some(f) = self.frame.get(s) {
                for e in f {
                    row.extend(e.iter().map(|c| fmt_num(*c)));
                }
            }
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> GeoError {
    GeoError::Io(e.to_string())
}

pub(crate) fn fmt_num(x: f64) -> String {
    format!("{x:.17e}")
}

/// Integrate and sample the geodesic `exp_x(t v)`, `t ∈ [0, t_end]`, in the working chart.
/// `step` is in arclength units; every RK4 step is recorded.
pub fn trace_geodesic(
    model: &dyn Manifold,
    v: &TangentVector,
    t_end: f64,
    step: f64,
) -> Result<GeodesicTrace> {
    trace_impl(model, v, t_end, step, false)
}

fn trace_impl(
    model: &dyn Manifold,
    v: &TangentVector,
    t_end: f64,
    step: f64,
    with_frame: bool,
) -> Result<GeodesicTrace> {
    let x = &v.base.coords;
    check_dims(model, x, &v.components)?;
    model.check_point(x)?;
    if !(step > 0.0) || !(t_end >= 0.0) {
        return Err(GeoError::Precondition("trace needs step > 0 and t_end >= 0".into()));
    }
    let d = model.dim();
    let speed = v.norm(model)?;
    if with_frame && speed == 0.0 {
        return Err(GeoError::Degenerate("parallel frame along a zero-speed geodesic".into()));
    }
    let wf = WorkingFrame::new(model, x, &v.components)?;
    let n = steps_for(t_end * speed, step);
    let nf = if with_frame { d } else { 0 };
    let mut flow = GeodesicFlow::new(model, nf, 0);
    let mut y = vec![0.0; flow.len()];
    y[..d].copy_from_slice(&wf.x);
    y[d..2 * d].copy_from_slice(&wf.v);
    if with_frame {
        let frame = orthonormal_frame(model, &wf.x, Some(&wf.v))?;
        let fo = flow.frame_offset();
        for (i, e) in frame.iter().enumerate() {
            y[fo + i * d..fo + (i + 1) * d].copy_from_slice(e);
        }
    }
    let dt = t_end / n as f64;
    let mut trace = GeodesicTrace {
        initial: v.clone(),
        chart: wf.rotation.clone(),
        grid: Vec::with_capacity(n + 1),
        points: Vec::with_capacity(n + 1),
        velocities: Vec::with_capacity(n + 1),
        frame: Vec::new(),
        speed,
    };
    let fo = flow.frame_offset();
    let record = |trace: &mut GeodesicTrace, t: f64, y: &[f64]| {
        trace.grid.push(t);
        trace.points.push(y[..d].to_vec());
        trace.velocities.push(y[d..2 * d].to_vec());
        if with_frame {
            trace
                .frame
                .push((0..d).map(|i| y[fo + i * d..fo + (i + 1) * d].to_vec()).collect());
        }
    };
    record(&mut trace, 0.0, &y);
    let mut rk = Rk4::new(y.len());
    let mut rhs = |t: f64, s: &[f64], ds: &mut [f64]| flow.eval(t, s, ds);
    for i in 0..n {
        rk.step(&mut y, i as f64 * dt, dt, &mut rhs)?;
        let t = if i + 1 == n { t_end } else { (i + 1) as f64 * dt };
        record(&mut trace, t, &y);
    }
    Ok(trace)
}

/// Re-integrate `trace` with a parallel orthonormal frame, `e₁ = γ̇/|γ̇|`.
pub fn parallel_frame(model: &dyn Manifold, trace: &GeodesicTrace) -> Result<GeodesicTrace> {
    if trace.speed == 0.0 {
        return Err(GeoError::Degenerate("parallel frame along a zero-speed geodesic".into()));
    }
    let t_end = *trace.grid.last().unwrap_or(&0.0);
    let n = trace.grid.len().saturating_sub(1).max(1);
    let step = t_end * trace.speed / n as f64;
    if step == 0.0 {
        return Err(GeoError::Degenerate("empty trace".into()));
    }
    trace_impl(model, &trace.initial, t_end, step * (1.0 + 1e-12), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::builtin;
    use std::f64::consts::PI;

    #[test]
    fn torus_exp_is_a_straight_line() {
        let m = builtin("torus_2pi").unwrap();
        let v = TangentVector::new(ChartPoint::new(vec![0.0, 0.0]), vec![1.0, 0.0]);
        let (p, w) = exp_map(&*m, &v, PI / 2.0, DEFAULT_STEP).unwrap();
        assert!((p.coords[0] - PI / 2.0).abs() < 1e-12 && p.coords[1].abs() < 1e-12);
        assert_eq!(w.components, vec![1.0, 0.0]);
    }

    #[test]
    fn sphere_great_circle_closes() {
        let m = builtin("sphere_r1").unwrap();
        let x = ChartPoint::new(vec![1.0, 0.5]);
        let v = TangentVector::new(x.clone(), vec![0.6, 0.8 / 1f64.sin()]);
        let v = v.scaled(1.0 / v.norm(&*m).unwrap());
        let (p, w) = exp_map(&*m, &v, 2.0 * PI, DEFAULT_STEP).unwrap();
        let dp = m.chart_delta(&x.coords, &p.coords);
        assert!(dp.iter().all(|c| c.abs() < 1e-6), "{dp:?}");
        assert!((w.norm(&*m).unwrap() - 1.0).abs() < 1e-9);
        let (p, _) = exp_map(&*m, &v, PI, DEFAULT_STEP).unwrap();
        let (a, _) = exp_point(&*m, &x.coords, &v.scaled(PI).components, 1).unwrap();
        assert!(m.chart_delta(&a, &p.coords).iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn variational_jacobian_matches_differences() {
        let m = builtin("dumbbell").unwrap();
        let x = [0.4, 0.1];
        let w = [1.3, 0.9];
        let n = 800;
        let (_, jac) = exp_with_jacobian(&*m, &x, &w, n).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut wp = w;
            wp[c] += h;
            let (pp, _) = integrate_exp(&*m, &x, &wp, 1.0, n).unwrap();
            wp[c] -= 2.0 * h;
            let (pm, _) = integrate_exp(&*m, &x, &wp, 1.0, n).unwrap();
            for k in 0..2 {
                let fd = (pp[k] - pm[k]) / (2.0 * h);
                assert!((fd - jac[(k, c)]).abs() < 1e-7, "{fd} vs {}", jac[(k, c)]);
            }
        }
    }

    #[test]
    fn sphere_equator_frame_normal_is_polar() {
        let m = builtin("sphere_r1").unwrap();
        let v = TangentVector::new(ChartPoint::new(vec![PI / 2.0, 0.0]), vec![0.0, 1.0]);
        let tr = parallel_frame(&*m, &trace_geodesic(&*m, &v, 3.0, 1e-2).unwrap()).unwrap();
        for f in &tr.frame {
            assert!((f[1][0].abs() - 1.0).abs() < 1e-9 && f[1][1].abs() < 1e-9);
        }
        assert!(tr.frame_defect(&*m).unwrap() < 1e-8);
    }
}
