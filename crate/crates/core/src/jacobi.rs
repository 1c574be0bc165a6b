//! Matrix Jacobi equation along a geodesic, in a parallel orthonormal frame.
//!
//! With `R(t)_ij = ⟨R(e_i, γ̇)γ̇, e_j⟩` the fundamental solutions satisfy `J̈ + R J = 0`:
//! `J01` with `J01(0) = Id, J̇01(0) = 0` and `J10` with `J10(0) = 0, J̇10(0) = Id`. The
//! transfer matrix `M(t) = [[J01, J10], [J̇01, J̇10]]` is symplectic.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesic::ode::{GeodesicFlow, Rk4};
use crate::geodesic::{csv_err, fmt_num, integrate_exp, steps_for, WorkingFrame, DEFAULT_STEP};
use crate::manifold::{inner_with, orthonormal_frame, riemann_apply, ChartRotation, Manifold, TangentVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobiOptions {
    /// RK4 step in arclength units.
    pub step: f64,
    /// Focal search horizon as a multiple of the diameter bound.
    pub horizon_factor: f64,
    /// Singular values below this count as kernel directions.
    pub singular_tol: f64,
    /// Final width of the focal-time bisection bracket.
    pub bisection_tol: f64,
}

impl Default for JacobiOptions {
    fn default() -> Self {
        JacobiOptions {
            step: DEFAULT_STEP,
            horizon_factor: 4.0,
            singular_tol: 1e-6,
            bisection_tol: 1e-8,
        }
    }
}

/// Right-hand side of geodesic + parallel frame + the four fundamental matrices.
struct JacobiFlow<'a> {
    geo: GeodesicFlow<'a>,
    d: usize,
    g: Vec<f64>,
    r: Vec<f64>,
}

impl<'a> JacobiFlow<'a> {
    fn new(model: &'a dyn Manifold) -> Self {
        let d = model.dim();
        JacobiFlow {
            geo: GeodesicFlow::new(model, d, 0),
            d,
            g: vec![0.0; d * d],
            r: vec![0.0; d * d],
        }
    }

    fn len(&self) -> usize {
        self.geo.len() + 4 * self.d * self.d
    }

    fn mat_offset(&self) -> usize {
        self.geo.len()
    }

    /// Fills `self.r` with the curvature operator at state `y`.
    fn curvature(&mut self, y: &[f64]) -> Result<()> {
        let d = self.d;
        let model = self.geo.model;
        let p = &y[..d];
        let v = &y[d..2 * d];
        let fo = self.geo.frame_offset();
        model.metric_into(p, &mut self.g)?;
        for i in 0..d {
            let ei = &y[fo + i * d..fo + (i + 1) * d];
            let ri = riemann_apply(model, p, ei, v, v)?;
            for j in 0..d {
                let ej = &y[fo + j * d..fo + (j + 1) * d];
                self.r[i * d + j] = inner_with(&self.g, d, &ri, ej);
            }
        }
        Ok(())
    }

    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let gl = self.geo.len();
        self.geo.eval(t, &y[..gl], &mut dy[..gl])?;
        self.curvature(y)?;
        let d = self.d;
        let d2 = d * d;
        let mo = self.mat_offset();
        // blocks: J01, J01dot, J10, J10dot
        for (pos, vel) in [(0usize, 1usize), (2, 3)] {
            let jp = mo + pos * d2;
            let jv = mo + vel * d2;
            for i in 0..d2 {
                dy[jp + i] = y[jv + i];
            }
            for i in 0..d {
                for c in 0..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += self.r[k * d + i] * y[jp + k * d + c];
                    }
                    dy[jv + i * d + c] = -s;
                }
            }
        }
        Ok(())
    }
}

fn initial_state(model: &dyn Manifold, wf: &WorkingFrame) -> Result<Vec<f64>> {
    let d = model.dim();
    let flow = JacobiFlow::new(model);
    let mut y = vec![0.0; flow.len()];
    y[..d].copy_from_slice(&wf.x);
    y[d..2 * d].copy_from_slice(&wf.v);
    let frame = orthonormal_frame(model, &wf.x, Some(&wf.v))?;
    let fo = flow.geo.frame_offset();
    for (i, e) in frame.iter().enumerate() {
        y[fo + i * d..fo + (i + 1) * d].copy_from_slice(e);
    }
    let mo = flow.mat_offset();
    for i in 0..d {
        y[mo + i * d + i] = 1.0;
        y[mo + 3 * d * d + i * d + i] = 1.0;
    }
    Ok(y)
}

fn block(y: &[f64], offset: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, &y[offset..offset + d * d])
}

fn det_j10(y: &[f64], mo: usize, d: usize) -> f64 {
    block(y, mo + 2 * d * d, d).determinant()
}

fn min_singular(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Fundamental solutions sampled on a uniform grid of the geodesic parameter `t`
/// (the geodesic is `t ↦ exp_x(t v)`).
#[derive(Debug, Serialize, Deserialize)]
pub struct FundamentalSolutions {
    pub initial: TangentVector,
    pub chart: Option<ChartRotation>,
    pub dim: usize,
    pub speed: f64,
    pub dt: f64,
    pub grid: Vec<f64>,
    /// Full integrator state per grid time (working chart).
    states: Vec<Vec<f64>>,
    /// Curvature operator per grid time, row-major.
    pub r_samples: Vec<Vec<f64>>,
    pub options: JacobiOptions,
    #[serde(skip)]
    focal: OnceLock<FocalReport>,
}

/// First focal time of a geodesic and its focal direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalReport {
    /// `None` means no focal time before `horizon`.
    pub t_f: Option<f64>,
    pub horizon: f64,
    /// Unit kernel vector of `J10(t_f)` in frame coordinates at the base point.
    pub focal_direction: Option<Vec<f64>>,
    /// The same vector in model-chart components at the base point.
    pub focal_direction_chart: Option<Vec<f64>>,
    /// Smallest singular value of `J10` at each grid time up to the focal time.
    pub min_singular_trace: Vec<f64>,
    pub bisection_width: f64,
}

impl FocalReport {
    pub fn status(&self) -> &'static str {
        if self.t_f.is_some() {
            "focal"
        } else {
            "none_before_horizon"
        }
    }
}

/// Integrate the fundamental solutions along `exp_x(t v)` for `t ∈ [0, t_max]`.
pub fn integrate_fundamental(
    model: &dyn Manifold,
    v: &TangentVector,
    t_max: f64,
    opts: &JacobiOptions,
) -> Result<FundamentalSolutions> {
    let x = &v.base.coords;
    model.check_point(x)?;
    let speed = v.norm(model)?;
    if !(speed > 0.0) {
        return Err(GeoError::Degenerate("Jacobi fields need a nonzero velocity".into()));
    }
    if !(t_max > 0.0) || !(opts.step > 0.0) {
        return Err(GeoError::Precondition("need t_max > 0 and step > 0".into()));
    }
    let wf = WorkingFrame::new(model, x, &v.components)?;
    let n = steps_for(t_max * speed, opts.step);
    let dt = t_max / n as f64;
    let mut flow = JacobiFlow::new(model);
    let mut y = initial_state(model, &wf)?;
    let mut rk = Rk4::new(y.len());
    let mut states = Vec::with_capacity(n + 1);
    let mut r_samples = Vec::with_capacity(n + 1);
    let mut grid = Vec::with_capacity(n + 1);
    flow.curvature(&y)?;
    r_samples.push(flow.r.clone());
    states.push(y.clone());
    grid.push(0.0);
    for i in 0..n {
        rk.step(&mut y, i as f64 * dt, dt, &mut |t, s, ds| flow.eval(t, s, ds))?;
        flow.curvature(&y)?;
        r_samples.push(flow.r.clone());
        states.push(y.clone());
        grid.push((i + 1) as f64 * dt);
    }
    Ok(FundamentalSolutions {
        initial: v.clone(),
        chart: wf.rotation,
        dim: model.dim(),
        speed,
        dt,
        grid,
        states,
        r_samples,
        options: opts.clone(),
        focal: OnceLock::new(),
    })
}

/// Default focal search horizon for a velocity of the given speed.
pub fn default_horizon(model: &dyn Manifold, speed: f64, opts: &JacobiOptions) -> f64 {
    opts.horizon_factor * model.diameter_bound() / speed
}

impl FundamentalSolutions {
    fn mo(&self) -> usize {
        self.dim * (2 + self.dim)
    }

    pub fn t_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        if !(t >= -1e-12 && t <= self.t_max() + 1e-12) {
            return Err(GeoError::Precondition(format!(
                "t = {t} outside the integrated range [0, {}]",
                self.t_max()
            )));
        }
        Ok(((t / self.dt).floor() as usize).min(self.grid.len() - 1))
    }

    /// Integrator state at an arbitrary `t` (one RK4 substep from the preceding grid time).
    pub(crate) fn state_at(&self, model: &dyn Manifold, t: f64) -> Result<Vec<f64>> {
        let k = self.index_of(t)?;
        let tau = t - self.grid[k];
        let mut y = self.states[k].clone();
        if tau.abs() > 1e-15 {
            let mut flow = JacobiFlow::new(model);
            let mut rk = Rk4::new(y.len());
            rk.step(&mut y, self.grid[k], tau, &mut |t, s, ds| flow.eval(t, s, ds))?;
        }
        Ok(y)
    }

    fn grid_state(&self, t: f64) -> Option<&Vec<f64>> {
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() <= 1e-9 * self.dt.max(1.0) && (k as usize) < self.states.len() {
            Some(&self.states[k as usize])
        } else {
            None
        }
    }

    fn state(&self, model: &dyn Manifold, t: f64) -> Result<Vec<f64>> {
        match self.grid_state(t) {
            Some(s) => Ok(s.clone()),
            None => self.state_at(model, t),
        }
    }

    /// `(J01, J̇01, J10, J̇10)` at grid index `k`.
    pub fn blocks(&self, k: usize) -> [DMatrix<f64>; 4] {
        blocks_of(&self.states[k], self.mo(), self.dim)
    }

    pub fn blocks_at(&self, model: &dyn Manifold, t: f64) -> Result<[DMatrix<f64>; 4]> {
        Ok(blocks_of(&self.state(model, t)?, self.mo(), self.dim))
    }

    /// Point and velocity of the geodesic at grid index `k` (working chart).
    pub fn geodesic_at(&self, k: usize) -> (&[f64], &[f64]) {
        let d = self.dim;
        (&self.states[k][..d], &self.states[k][d..2 * d])
    }

    /// Parallel frame at grid index `k` (working chart components).
    pub fn frame_at(&self, k: usize) -> Vec<Vec<f64>> {
        frame_of(&self.states[k], self.dim)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `M(t)` at grid index `k`.
    pub fn transfer_matrix(&self, k: usize) -> DMatrix<f64> {
        assemble_m(&self.blocks(k), self.dim)
    }

    /// Largest symplectic defect over the whole grid.
    pub fn max_symplectic_defect(&self) -> f64 {
        (0..self.len())
            .map(|k| defect_of(&self.transfer_matrix(k), self.dim))
            .fold(0.0, f64::max)
    }

    /// Solution with `J(0) = h`, `J̇(0) = q` at grid index `k`, assembled from the fundamental solutions.
    pub fn assemble(&self, k: usize, h: &[f64], q: &[f64]) -> Vec<f64> {
        let [a, _, b, _] = self.blocks(k);
        let hv = nalgebra::DVector::from_column_slice(h);
        let qv = nalgebra::DVector::from_column_slice(q);
        (a * hv + b * qv).iter().cloned().collect()
    }

    /// Integrate a single Jacobi field with `J(0) = h`, `J̇(0) = q` directly (not through the
    /// fundamental matrices) and return its values at every grid time.
    pub fn integrate_single(&self, model: &dyn Manifold, h: &[f64], q: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = self.dim;
        let mut flow = JacobiFlow::new(model);
        let mut y = self.states[0].clone();
        let mo = self.mo();
        // put the single field into the J01 column 0 slot and ignore the rest
        for i in 0..d {
            for c in 0..d {
                y[mo + i * d + c] = if c == 0 { h[i] } else { 0.0 };
                y[mo + d * d + i * d + c] = if c == 0 { q[i] } else { 0.0 };
            }
        }
        let mut rk = Rk4::new(y.len());
        let mut out = vec![(0..d).map(|i| y[mo + i * d]).collect::<Vec<_>>()];
        for k in 0..self.len() - 1 {
            rk.step(&mut y, self.grid[k], self.dt, &mut |t, s, ds| flow.eval(t, s, ds))?;
            out.push((0..d).map(|i| y[mo + i * d]).collect());
        }
        Ok(out)
    }

    /// CSV with columns `t, J01[i][j].., J10.., J01dot.., J10dot..` (row-major blocks).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.dim;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for name in ["J01", "J10", "J01dot", "J10dot"] {
            for i in 0..d {
                for j in 0..d {
                    header.push(format!("{name}_{i}{j}"));
                }
            }
        }
        wtr.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let [a, ad, b, bd] = self.blocks(k);
            let mut row = vec![fmt_num(self.grid[k])];
            for m in [&a, &b, &ad, &bd] {
                for i in 0..d {
                    for j in 0..d {
                        row.push(fmt_num(m[(i, j)]));
                    }
                }
            }
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn blocks_of(y: &[f64], mo: usize, d: usize) -> [DMatrix<f64>; 4] {
    let d2 = d * d;
    [
        block(y, mo, d),
        block(y, mo + d2, d),
        block(y, mo + 2 * d2, d),
        block(y, mo + 3 * d2, d),
    ]
}

fn frame_of(y: &[f64], d: usize) -> Vec<Vec<f64>> {
    let fo = 2 * d;
    (0..d).map(|i| y[fo + i * d..fo + (i + 1) * d].to_vec()).collect()
}

fn assemble_m(b: &[DMatrix<f64>; 4], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&b[0]);
    m.view_mut((0, d), (d, d)).copy_from(&b[2]);
    m.view_mut((d, 0), (d, d)).copy_from(&b[1]);
    m.view_mut((d, d), (d, d)).copy_from(&b[3]);
    m
}

fn symplectic_form(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

fn defect_of(m: &DMatrix<f64>, d: usize) -> f64 {
    let j = symplectic_form(d);
    (m.transpose() * &j * m - &j).abs().max()
}

/// `‖M(t)ᵀ 𝕁 M(t) − 𝕁‖` (max-abs entry).
pub fn symplectic_defect(model: &dyn Manifold, sol: &FundamentalSolutions, t: f64) -> Result<f64> {
    let b = sol.blocks_at(model, t)?;
    Ok(defect_of(&assemble_m(&b, sol.dim), sol.dim))
}

/// Sign-tracking focal search over a sequence of `det J10` samples.
struct FocalTracker {
    dets: Vec<(f64, f64)>,
}

enum Crossing {
    None,
    Bracket(usize),
}

impl FocalTracker {
    /// Inspect the newest sample. `Bracket(k)` means the sign changed between samples `k` and `k+1`.
    fn push(&mut self, t: f64, det: f64) -> Result<Crossing> {
        self.dets.push((t, det));
        let n = self.dets.len();
        if n < 2 {
            return Ok(Crossing::None);
        }
        let (_, a) = self.dets[n - 2];
        if a == 0.0 || a.signum() != det.signum() {
            return Ok(Crossing::Bracket(n - 2));
        }
        if n >= 3 {
            let (t0, d0) = self.dets[n - 3];
            let (t1, d1) = self.dets[n - 2];
            let (t2, d2) = (t, det);
            if d1.abs() < d0.abs() && d1.abs() < d2.abs() {
                // parabola through the three samples; a vertex of the opposite sign means two
                // roots inside one pair of cells
                let h = t1 - t0;
                let c2 = (d0 - 2.0 * d1 + d2) / (2.0 * h * h);
                let c1 = (d2 - d0) / (2.0 * h);
                if c2 != 0.0 {
                    let tv = -c1 / (2.0 * c2);
                    let vertex = d1 + c1 * tv + c2 * tv * tv;
                    if tv.abs() <= h && vertex.signum() != d1.signum() {
                        return Err(GeoError::Resolution {
                            t: t1 + tv,
                            hint: format!(
                                "two singularities of J10 within [{t0}, {t2}]; reduce the step"
                            ),
                        });
                    }
                }
            }
        }
        Ok(Crossing::None)
    }
}

/// Bisection on `det J10` inside `[lo, hi]`, taking RK4 substeps from the state at `lo`.
fn bisect_focal(
    model: &dyn Manifold,
    y_lo: &[f64],
    lo: f64,
    hi: f64,
    d: usize,
    tol: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let mo = d * (2 + d);
    let mut flow = JacobiFlow::new(model);
    let mut rk = Rk4::new(y_lo.len());
    let eval = |tau: f64, flow: &mut JacobiFlow, rk: &mut Rk4| -> Result<Vec<f64>> {
        let mut y = y_lo.to_vec();
        if tau > 0.0 {
            rk.step(&mut y, lo, tau, &mut |t, s, ds| flow.eval(t, s, ds))?;
        }
        Ok(y)
    };
    let s_lo = det_j10(y_lo, mo, d).signum();
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let m = 0.5 * (a + b);
        let y = eval(m - lo, &mut flow, &mut rk)?;
        let dm = det_j10(&y, mo, d);
        if dm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if dm.signum() == s_lo {
            a = m;
        } else {
            b = m;
        }
    }
    let t = 0.5 * (a + b);
    let y = eval(t - lo, &mut flow, &mut rk)?;
    Ok((t, b - a, y))
}

fn focal_direction_of(y: &[f64], d: usize) -> Vec<f64> {
    let mo = d * (2 + d);
    let j10 = block(y, mo + 2 * d * d, d);
    let svd = j10.svd(false, true);
    let vt = svd.v_t.unwrap();
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc });
    let mut q: Vec<f64> = (0..d).map(|j| vt[(imin, j)]).collect();
    // deterministic sign: largest-magnitude component positive
    let (jmax, _) = q
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (j, c)| if c.abs() > acc.1 { (j, c.abs()) } else { acc });
    if q[jmax] < 0.0 {
        q.iter_mut().for_each(|c| *c = -*c);
    }
    q
}

fn frame_to_chart(frame0: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let d = q.len();
    (0..d).map(|k| (0..d).map(|i| q[i] * frame0[i][k]).sum()).collect()
}

fn direction_report(
    model: &dyn Manifold,
    chart: &Option<ChartRotation>,
    x_work: &[f64],
    frame0: &[Vec<f64>],
    q: Vec<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cw = frame_to_chart(frame0, &q);
    let cm = match chart {
        Some(r) => r.vector_to_model(x_work, &cw)?,
        None => cw,
    };
    let _ = model;
    Ok((q, cm))
}

/// First focal time of the stored solutions.
pub fn focal_time(model: &dyn Manifold, sol: &FundamentalSolutions) -> Result<FocalReport> {
    if let Some(r) = sol.focal.get() {
        return Ok(r.clone());
    }
    let d = sol.dim;
    let mo = sol.mo();
    let mut tracker = FocalTracker { dets: Vec::new() };
    let mut trace = vec![0.0];
    let frame0 = sol.frame_at(0);
    let x_work = sol.states[0][..d].to_vec();
    let mut report = FocalReport {
        t_f: None,
        horizon: sol.t_max(),
        focal_direction: None,
        focal_direction_chart: None,
        min_singular_trace: Vec::new(),
        bisection_width: 0.0,
    };
    for k in 1..sol.len() {
        let y = &sol.states[k];
        trace.push(min_singular(&block(y, mo + 2 * d * d, d)));
        if let Crossing::Bracket(i) = tracker.push(sol.grid[k], det_j10(y, mo, d))? {
            let k0 = i + 1;
            let (t, w, yf) = bisect_focal(
                model,
                &sol.states[k0],
                sol.grid[k0],
                sol.grid[k0 + 1],
                d,
                sol.options.bisection_tol,
            )?;
            let (q, qc) = direction_report(model, &sol.chart, &x_work, &frame0, focal_direction_of(&yf, d))?;
            report.t_f = Some(t);
            report.focal_direction = Some(q);
            report.focal_direction_chart = Some(qc);
            report.bisection_width = w;
            break;
        }
    }
    report.min_singular_trace = trace;
    let _ = sol.focal.set(report.clone());
    Ok(report)
}

/// Streaming focal search along `exp_x(t v)` up to `horizon` without storing the grid.
/// The singular-value trace is left empty.
pub fn focal_scan(
    model: &dyn Manifold,
    v: &TangentVector,
    horizon: f64,
    opts: &JacobiOptions,
) -> Result<FocalReport> {
    let x = &v.base.coords;
    model.check_point(x)?;
    let speed = v.norm(model)?;
    if !(speed > 0.0) {
        return Err(GeoError::Degenerate("Jacobi fields need a nonzero velocity".into()));
    }
    let d = model.dim();
    let wf = WorkingFrame::new(model, x, &v.components)?;
    let n = steps_for(horizon * speed, opts.step);
    let dt = horizon / n as f64;
    let mut flow = JacobiFlow::new(model);
    let mut y = initial_state(model, &wf)?;
    let frame0 = frame_of(&y, d);
    let mo = flow.mat_offset();
    let mut rk = Rk4::new(y.len());
    let mut tracker = FocalTracker { dets: Vec::new() };
    let mut prev = y.clone();
    let mut report = FocalReport {
        t_f: None,
        horizon,
        focal_direction: None,
        focal_direction_chart: None,
        min_singular_trace: Vec::new(),
        bisection_width: 0.0,
    };
    for i in 0..n {
        let t0 = i as f64 * dt;
        rk.step(&mut y, t0, dt, &mut |t, s, ds| flow.eval(t, s, ds))?;
        let t1 = (i + 1) as f64 * dt;
        if let Crossing::Bracket(_) = tracker.push(t1, det_j10(&y, mo, d))? {
            // the tracker compares consecutive samples, so the bracket is [t0, t1]
            let (t, w, yf) = bisect_focal(model, &prev, t0, t1, d, opts.bisection_tol)?;
            let (q, qc) = direction_report(model, &wf.rotation, &wf.x, &frame0, focal_direction_of(&yf, d))?;
            report.t_f = Some(t);
            report.focal_direction = Some(q);
            report.focal_direction_chart = Some(qc);
            report.bisection_width = w;
            return Ok(report);
        }
        if tracker.dets.len() > 3 {
            tracker.dets.remove(0);
        }
        prev.copy_from_slice(&y);
    }
    Ok(report)
}

/// Compare `J10(t) h` with a central difference of `s ↦ exp_x(t (v + s h))`; both are
/// expressed in the parallel frame at `γ(t)`. `h` is in frame coordinates at the base point.
pub fn verify_jacobi_vs_exp(
    model: &dyn Manifold,
    sol: &FundamentalSolutions,
    h: &[f64],
    t: f64,
    fd_step: f64,
) -> Result<f64> {
    let d = sol.dim;
    if h.len() != d {
        return Err(GeoError::Dimension { expected: d, got: h.len() });
    }
    let y = sol.state(model, t)?;
    let [_, _, j10, _] = blocks_of(&y, sol.mo(), d);
    let predicted = j10 * nalgebra::DVector::from_column_slice(h);
    let frame0 = sol.frame_at(0);
    let x = &sol.states[0][..d];
    let v = &sol.states[0][d..2 * d];
    let hc = frame_to_chart(&frame0, h);
    let n = steps_for(t * sol.speed, sol.options.step);
    let shoot = |s: f64| -> Result<Vec<f64>> {
        let w: Vec<f64> = (0..d).map(|k| v[k] + s * hc[k]).collect();
        Ok(integrate_exp(model, x, &w, t, n)?.0)
    };
    let plus = shoot(fd_step)?;
    let minus = shoot(-fd_step)?;
    let diff = model.chart_delta(&minus, &plus);
    let jc: Vec<f64> = diff.iter().map(|c| c / (2.0 * fd_step)).collect();
    let p = &y[..d];
    let mut g = vec![0.0; d * d];
    model.metric_into(p, &mut g)?;
    let frame = frame_of(&y, d);
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let c = inner_with(&g, d, &jc, &frame[i]);
        worst = worst.max((c - predicted[i]).abs());
    }
    Ok(worst)
}

/// `L_{t,v}` written as a graph `{(S w, w)}` over the chosen splitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianGraph {
    pub t: f64,
    /// Coordinates `l..d` (after the rotation `u`) are swapped between position and momentum.
    pub splitting_index: usize,
    /// Orthogonal rotation of the frame coordinates, columns = singular directions of `J01(t_ref)`.
    pub u: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub asymmetry: f64,
    pub reference_time: f64,
}

#[derive(Clone, Debug)]
struct Splitting {
    u: DMatrix<f64>,
    l: usize,
    t_ref: f64,
}

fn splitting_at(model: &dyn Manifold, sol: &FundamentalSolutions, t_ref: f64) -> Result<Splitting> {
    let d = sol.dim;
    let [a, ..] = sol.blocks_at(model, t_ref)?;
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..d).collect();
    // non-kernel directions first, each group by decreasing singular value
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let l = order.iter().filter(|&&i| sv[i] >= sol.options.singular_tol).count();
    let u = if l == d {
        DMatrix::identity(d, d)
    } else {
        DMatrix::from_fn(d, d, |r, c| vt[(order[c], r)])
    };
    Ok(Splitting { u, l, t_ref })
}

/// `(h, q)` frame coordinates → split coordinates `(a, b)`.
fn split_coords(sp: &Splitting, h: &DMatrix<f64>, q: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let hp = sp.u.transpose() * h;
    let qp = sp.u.transpose() * q;
    let mut a = hp.clone();
    let mut b = qp.clone();
    for i in sp.l..hp.nrows() {
        for c in 0..hp.ncols() {
            a[(i, c)] = qp[(i, c)];
            b[(i, c)] = -hp[(i, c)];
        }
    }
    (a, b)
}

/// Inverse of [`split_coords`] for a single vector pair.
fn unsplit(sp: &Splitting, a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> (nalgebra::DVector<f64>, nalgebra::DVector<f64>) {
    let mut hp = a.clone();
    let mut qp = b.clone();
    for i in sp.l..a.len() {
        hp[i] = -b[i];
        qp[i] = a[i];
    }
    (&sp.u * hp, &sp.u * qp)
}

fn graph_with(model: &dyn Manifold, sol: &FundamentalSolutions, t: f64, sp: &Splitting) -> Result<(DMatrix<f64>, f64)> {
    let [a, _, b, _] = sol.blocks_at(model, t)?;
    // L_{t,v} = M(t)^{-1}(vertical) is spanned by the columns of (−J10ᵀ, J01ᵀ)
    let h = -b.transpose();
    let q = a.transpose();
    let (ba, bb) = split_coords(sp, &h, &q);
    let svals = bb.singular_values();
    let smax = svals.iter().cloned().fold(0.0, f64::max);
    let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-10 * smax.max(1e-300)) {
        return Err(GeoError::Splitting { t });
    }
    let inv = bb.try_inverse().ok_or(GeoError::Splitting { t })?;
    let s = ba * inv;
    let asym = (&s - s.transpose()).abs().max();
    Ok(((&s + s.transpose()) * 0.5, asym))
}

fn reference_time(model: &dyn Manifold, sol: &FundamentalSolutions, t: f64) -> Result<f64> {
    Ok(focal_time(model, sol)?.t_f.unwrap_or(t))
}

/// `L_{t,v}` as a symmetric graph matrix. The splitting comes from the near-kernel of
/// `J01` at the focal time (or at `t` when there is none).
pub fn lagrangian_graph(model: &dyn Manifold, sol: &FundamentalSolutions, t: f64) -> Result<LagrangianGraph> {
    let t_ref = reference_time(model, sol, t)?;
    lagrangian_graph_with_reference(model, sol, t, t_ref)
}

pub fn lagrangian_graph_with_reference(
    model: &dyn Manifold,
    sol: &FundamentalSolutions,
    t: f64,
    t_ref: f64,
) -> Result<LagrangianGraph> {
    let sp = splitting_at(model, sol, t_ref)?;
    let (s, asym) = graph_with(model, sol, t, &sp)?;
    let d = sol.dim;
    Ok(LagrangianGraph {
        t,
        splitting_index: sp.l,
        u: (0..d).map(|r| (0..d).map(|c| sp.u[(r, c)]).collect()).collect(),
        s: (0..d).map(|r| (0..d).map(|c| s[(r, c)]).collect()).collect(),
        asymmetry: asym,
        reference_time: sp.t_ref,
    })
}

/// Result of comparing the finite-difference derivative of `S` with the symplectic identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdotProbe {
    pub t: f64,
    /// `⟨Ṡ(t) w, w⟩` by central differences.
    pub lhs: f64,
    /// `−|z|²` with `M(t)(S w, w) = (0, z)`.
    pub rhs: f64,
    /// Operator norm of the finite-difference `Ṡ(t)`.
    pub sdot_norm: f64,
}

pub fn sdot_probe(
    model: &dyn Manifold,
    sol: &FundamentalSolutions,
    t: f64,
    w: &[f64],
    delta: Option<f64>,
) -> Result<SdotProbe> {
    let d = sol.dim;
    if w.len() != d {
        return Err(GeoError::Dimension { expected: d, got: w.len() });
    }
    let t_ref = reference_time(model, sol, t)?;
    let sp = splitting_at(model, sol, t_ref)?;
    let delta = delta.unwrap_or(1e-4 / sol.speed);
    let (s0, _) = graph_with(model, sol, t, &sp)?;
    let (sp_, _) = graph_with(model, sol, t + delta, &sp)?;
    let (sm_, _) = graph_with(model, sol, t - delta, &sp)?;
    let sdot = (sp_ - sm_) / (2.0 * delta);
    let wv = nalgebra::DVector::from_column_slice(w);
    let lhs = wv.dot(&(&sdot * &wv));
    let (h, q) = unsplit(&sp, &(&s0 * &wv), &wv);
    let [a, ad, b, bd] = sol.blocks_at(model, t)?;
    let z = &ad * &h + &bd * &q;
    let _pos = &a * &h + &b * &q;
    let sdot_norm = sdot.singular_values().iter().cloned().fold(0.0, f64::max);
    Ok(SdotProbe {
        t,
        lhs,
        rhs: -z.norm_squared(),
        sdot_norm,
    })
}

/// Finite-difference sensitivity of the first focal time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalLipschitzProbe {
    pub eps: f64,
    pub t_f: Option<f64>,
    /// Largest first difference quotient `|t_f(x', v') − t_f(x, v)| / ε`.
    pub max_quotient: f64,
    /// Largest second difference quotient `(t_f(+ε) + t_f(−ε) − 2 t_f) / ε²` (upper bound probe).
    pub max_second_quotient: f64,
    pub incomplete: bool,
    pub warnings: Vec<String>,
}

/// Perturbation families: rotate the unit velocity by `±ε`, or move the base point by `±ε`
/// along each frame direction while keeping the frame coefficients of the velocity.
pub fn focal_lipschitz_probe(
    model: &dyn Manifold,
    v: &TangentVector,
    eps: f64,
    opts: &JacobiOptions,
) -> Result<FocalLipschitzProbe> {
    let d = model.dim();
    let x = &v.base.coords;
    let speed = v.norm(model)?;
    let unit = v.scaled(1.0 / speed);
    let horizon = default_horizon(model, 1.0, opts);
    let base = focal_scan(model, &unit, horizon, opts)?;
    let mut probe = FocalLipschitzProbe {
        eps,
        t_f: base.t_f,
        max_quotient: 0.0,
        max_second_quotient: f64::NEG_INFINITY,
        incomplete: false,
        warnings: Vec::new(),
    };
    let Some(t0) = base.t_f else {
        probe.incomplete = true;
        probe.warnings.push("base velocity has no focal time before the horizon".into());
        return Ok(probe);
    };
    let frame = orthonormal_frame(model, x, Some(&unit.components))?;
    let mut families: Vec<[TangentVector; 2]> = Vec::new();
    if d >= 2 {
        let rot = |s: f64| -> TangentVector {
            let (sn, cs) = s.sin_cos();
            let c: Vec<f64> = (0..d).map(|k| cs * frame[0][k] + sn * frame[1][k]).collect();
            TangentVector::new(v.base.clone(), c)
        };
        families.push([rot(eps), rot(-eps)]);
    }
    for e in &frame {
        let mv = |s: f64| -> Result<TangentVector> {
            let mut xp: Vec<f64> = (0..d).map(|k| x[k] + s * e[k]).collect();
            model.reduce(&mut xp);
            let fp = orthonormal_frame(model, &xp, None)?;
            let f0 = orthonormal_frame(model, x, None)?;
            let mut g = vec![0.0; d * d];
            model.metric_into(x, &mut g)?;
            let coef: Vec<f64> = f0.iter().map(|b| inner_with(&g, d, &unit.components, b)).collect();
            let c: Vec<f64> = (0..d).map(|k| (0..d).map(|i| coef[i] * fp[i][k]).sum()).collect();
            Ok(TangentVector::new(crate::manifold::ChartPoint::new(xp), c))
        };
        families.push([mv(eps)?, mv(-eps)?]);
    }
    for fam in families {
        let mut vals = [0.0; 2];
        let mut ok = true;
        for (i, w) in fam.iter().enumerate() {
            match focal_scan(model, w, horizon, opts) {
                Ok(r) => match r.t_f {
                    Some(t) => vals[i] = t,
                    None => {
                        ok = false;
                        probe.incomplete = true;
                        probe.warnings.push("perturbed velocity reached the horizon".into());
                    }
                },
                Err(e) => {
                    ok = false;
                    probe.incomplete = true;
                    probe.warnings.push(format!("perturbation failed: {e}"));
                }
            }
        }
        if ok {
            for t in vals {
                probe.max_quotient = probe.max_quotient.max((t - t0).abs() / eps);
            }
            probe.max_second_quotient = probe
                .max_second_quotient
                .max((vals[0] + vals[1] - 2.0 * t0) / (eps * eps));
        }
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{builtin, ChartPoint};
    use std::f64::consts::PI;

    fn unit(model: &dyn Manifold, x: &[f64], c: &[f64]) -> TangentVector {
        let v = TangentVector::new(ChartPoint::new(x.to_vec()), c.to_vec());
        let n = v.norm(model).unwrap();
        v.scaled(1.0 / n)
    }

    #[test]
    fn flat_torus_fundamental_solutions() {
        let m = builtin("torus_2pi").unwrap();
        let v = unit(&*m, &[0.5, 0.5], &[1.0, 0.3]);
        let sol = integrate_fundamental(&*m, &v, 3.0, &JacobiOptions::default()).unwrap();
        let k = sol.len() - 1;
        let [a, _, b, _] = sol.blocks(k);
        assert!((a - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        assert!((b - DMatrix::identity(2, 2) * 3.0).abs().max() < 1e-12);
        assert!(sol.max_symplectic_defect() <= 1e-12);
        assert_eq!(focal_time(&*m, &sol).unwrap().t_f, None);
    }

    #[test]
    fn sphere_fundamental_solutions_and_focal_time() {
        let m = builtin("sphere_r1").unwrap();
        let v = unit(&*m, &[1.0, 0.3], &[0.2, 1.0]);
        let sol = integrate_fundamental(&*m, &v, 4.0, &JacobiOptions::default()).unwrap();
        let [_, _, b, _] = sol.blocks_at(&*m, PI / 2.0).unwrap();
        assert!((b[(0, 0)] - PI / 2.0).abs() < 1e-10);
        assert!((b[(1, 1)] - 1.0).abs() < 1e-10);
        assert!(b[(0, 1)].abs() < 1e-10 && b[(1, 0)].abs() < 1e-10);
        assert!(symplectic_defect(&*m, &sol, 3.0).unwrap() <= 1e-8);
        assert_eq!(symplectic_defect(&*m, &sol, 0.0).unwrap(), 0.0);
        let r = focal_time(&*m, &sol).unwrap();
        assert!((r.t_f.unwrap() - PI).abs() < 1e-6);
        let q = r.focal_direction.unwrap();
        assert!(q[0].abs() < 1e-6 && (q[1].abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn streaming_scan_matches_stored_solutions() {
        let m = builtin("sphere_r2").unwrap();
        let v = unit(&*m, &[0.7, 0.3], &[1.0, 0.4]);
        let r = focal_scan(&*m, &v, 10.0, &JacobiOptions::default()).unwrap();
        assert!((r.t_f.unwrap() - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn torus_graph_and_sdot() {
        let m = builtin("torus_2pi").unwrap();
        let v = unit(&*m, &[0.5, 0.5], &[1.0, 0.0]);
        let sol = integrate_fundamental(&*m, &v, 2.0, &JacobiOptions::default()).unwrap();
        let g = lagrangian_graph(&*m, &sol, 1.0).unwrap();
        assert!((g.s[0][0] + 1.0).abs() < 1e-12 && (g.s[1][1] + 1.0).abs() < 1e-12);
        let p = sdot_probe(&*m, &sol, 1.0, &[0.6, 0.8], None).unwrap();
        assert!((p.lhs - p.rhs).abs() < 1e-6, "{p:?}");
        assert!((p.rhs + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_graph_matches_closed_form() {
        let m = builtin("sphere_r1").unwrap();
        let v = unit(&*m, &[1.2, 0.3], &[0.5, 1.0]);
        let sol = integrate_fundamental(&*m, &v, 4.0, &JacobiOptions::default()).unwrap();
        for t in [2.0, 2.8, 3.1] {
            let g = lagrangian_graph(&*m, &sol, t).unwrap();
            assert!((g.s[0][0] + t).abs() < 1e-8);
            assert!((g.s[1][1] + t.tan()).abs() < 1e-8);
            let p = sdot_probe(&*m, &sol, t, &[0.0, 1.0], None).unwrap();
            assert!((p.lhs - p.rhs).abs() < 1e-5, "{p:?}");
        }
    }

    #[test]
    fn jacobi_matches_exp_differences() {
        let m = builtin("sphere_r1").unwrap();
        let v = unit(&*m, &[1.0, 0.3], &[0.2, 1.0]);
        let sol = integrate_fundamental(&*m, &v, 2.0, &JacobiOptions::default()).unwrap();
        let r = verify_jacobi_vs_exp(&*m, &sol, &[0.0, 1.0], PI / 2.0, 1e-4).unwrap();
        assert!(r < 1e-5, "{r}");
        let m = builtin("torus_2pi").unwrap();
        let v = unit(&*m, &[1.0, 0.3], &[0.2, 1.0]);
        let sol = integrate_fundamental(&*m, &v, 2.0, &JacobiOptions::default()).unwrap();
        assert!(verify_jacobi_vs_exp(&*m, &sol, &[0.3, -0.4], 1.0, 1e-4).unwrap() < 1e-8);
    }

    #[test]
    fn reconstruction_identity() {
        let m = builtin("dumbbell").unwrap();
        let v = unit(&*m, &[0.4, 0.0], &[0.3, 1.0]);
        let sol = integrate_fundamental(&*m, &v, 3.0, &JacobiOptions { step: 1e-2, ..Default::default() }).unwrap();
        let h = [0.3, -0.2];
        let q = [0.1, 0.7];
        let direct = sol.integrate_single(&*m, &h, &q).unwrap();
        for k in (0..sol.len()).step_by(17) {
            let a = sol.assemble(k, &h, &q);
            for i in 0..2 {
                assert!((a[i] - direct[k][i]).abs() < 1e-9);
            }
        }
    }
}
