//! Cut times, tangent cut and focal loci, radial distances on `T_xM`, and the checks built on
//! them (radial-distance bounds near the cut locus and Lipschitz probes of the cut time).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesic::distance::integrate_ray;
use crate::geodesic::{exp_point, solve_shot, steps_for, DistanceOptions, DistanceResult, GeodesicFan};
use crate::jacobi::{focal_scan, integrate_fundamental, JacobiOptions};
use crate::manifold::{inner, inner_with, norm, orthonormal_frame, ChartPoint, Manifold, TangentVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutOptions {
    /// Final bracket width for the cut time.
    pub bisection_tol: f64,
    /// Slack in the predicate `d(x, exp_x(t e)) ≥ t − slack`.
    pub slack: f64,
    /// `t_cut` and `t_f` closer than this count as equal.
    pub focal_tol: f64,
    /// Largest number of minimizers listed at a cut point.
    pub multiplicity_cap: usize,
    /// Integrate Jacobi fields even when the model has a closed-form focal time.
    pub numeric_focal: bool,
    pub distance: DistanceOptions,
    pub jacobi: JacobiOptions,
}

impl Default for CutOptions {
    fn default() -> Self {
        CutOptions {
            bisection_tol: 1e-8,
            slack: 1e-7,
            focal_tol: 1e-6,
            multiplicity_cap: 16,
            numeric_focal: false,
            distance: DistanceOptions::default(),
            jacobi: JacobiOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutReport {
    /// Unit direction (chart components at `x`).
    pub direction: Vec<f64>,
    pub t_cut: f64,
    pub t_f: Option<f64>,
    /// Minimizing velocities to the cut point other than `t_cut · direction`.
    pub competing_velocities: Vec<Vec<f64>>,
    /// Number of minimizers including `t_cut · direction`.
    pub multiplicity: usize,
    /// The minimizers form a continuum; only a capped subset is listed.
    pub capped: bool,
    /// `max |v − w|_x` over the listed minimizers `w`, with `v = t_cut · direction`.
    pub delta_v: f64,
    /// `t_cut = t_f` within tolerance.
    pub focal_cut: bool,
    /// Focal cut reached by a single minimizer.
    pub purely_focal: bool,
    pub method: String,
}

/// Cached machinery for cut computations from one base point.
pub struct CutContext<'a> {
    model: &'a dyn Manifold,
    x: Vec<f64>,
    frame: Vec<Vec<f64>>,
    fan: Option<GeodesicFan<'a>>,
    pub opts: CutOptions,
}

impl<'a> CutContext<'a> {
    pub fn new(model: &'a dyn Manifold, x: &[f64], opts: &CutOptions) -> Result<Self> {
        model.check_point(x)?;
        let frame = orthonormal_frame(model, x, None)?;
        let fan = if model.analytic_log(x, x).is_some() {
            None
        } else {
            Some(GeodesicFan::new(model, x, &opts.distance)?)
        };
        Ok(CutContext {
            model,
            x: x.to_vec(),
            frame,
            fan,
            opts: opts.clone(),
        })
    }

    pub fn model(&self) -> &'a dyn Manifold {
        self.model
    }

    pub fn base(&self) -> &[f64] {
        &self.x
    }

    /// Orthonormal frame at the base point used to measure angles.
    pub fn frame(&self) -> &[Vec<f64>] {
        &self.frame
    }

    /// Unit vector at angle `theta` in the base frame (dim 2).
    pub fn direction(&self, theta: f64) -> Vec<f64> {
        let (s, c) = theta.sin_cos();
        (0..self.x.len())
            .map(|k| c * self.frame[0][k] + s * self.frame[1][k])
            .collect()
    }

    pub fn angle_of(&self, v: &[f64]) -> Result<f64> {
        let a = inner(self.model, &self.x, v, &self.frame[0])?;
        let b = inner(self.model, &self.x, v, &self.frame[1])?;
        Ok(b.atan2(a).rem_euclid(2.0 * PI))
    }

    fn exp(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let len = norm(self.model, &self.x, w)?;
        exp_point(self.model, &self.x, w, steps_for(len, self.opts.distance.step))
    }

    pub fn distance_to(&self, y: &[f64]) -> Result<DistanceResult> {
        match &self.fan {
            Some(f) => f.distance(y),
            None => crate::geodesic::distance(
                self.model,
                &ChartPoint::new(self.x.clone()),
                &ChartPoint::new(y.to_vec()),
                &self.opts.distance,
            ),
        }
    }

    /// First focal time along `t ↦ exp_x(t e)` (closed form when available).
    pub fn focal_time(&self, e: &[f64]) -> Result<Option<f64>> {
        if !self.opts.numeric_focal {
            if let Some(t) = self.model.analytic_focal_time(&self.x, e) {
                return Ok(t);
            }
        }
        let speed = norm(self.model, &self.x, e)?;
        let horizon = self.opts.jacobi.horizon_factor * self.model.diameter_bound() / speed;
        let v = TangentVector::new(ChartPoint::new(self.x.clone()), e.to_vec());
        Ok(focal_scan(self.model, &v, horizon, &self.opts.jacobi)?.t_f)
    }

    pub fn cut_time(&self, e: &[f64]) -> Result<CutReport> {
        let n = norm(self.model, &self.x, e)?;
        if (n - 1.0).abs() > 1e-10 {
            return Err(GeoError::Precondition(format!(
                "cut time needs a unit direction, |e| = {n}"
            )));
        }
        let t_f = self.focal_time(e)?;
        let diam = self.model.diameter_bound();
        let hi = t_f.map_or(diam, |t| t.min(diam));
        let (t_cut, method) = if self.fan.is_none() {
            (self.bisect_cut(e, hi)?, "closed_form_bisection")
        } else {
            let (t, shortcut) = self.branch_cut(e, hi)?;
            if !shortcut && t_f.map_or(true, |tf| tf > diam) {
                return Err(GeoError::UnresolvedCut {
                    lo: 0.0,
                    hi,
                    reason: "no shorter geodesic found up to the diameter bound".into(),
                });
            }
            (t, "shooting_branch")
        };
        let t_cut = match t_f {
            Some(tf) => t_cut.min(tf),
            None => t_cut,
        };
        self.report(e, t_cut, t_f, method)
    }

    /// Bisection of `d(x, exp_x(t e)) ≥ t − slack` on `[0, hi]`.
    fn bisect_cut(&self, e: &[f64], hi: f64) -> Result<f64> {
        let pred = |t: f64| -> Result<bool> {
            let w: Vec<f64> = e.iter().map(|c| c * t).collect();
            let (y, _) = self.exp(&w)?;
            Ok(self.distance_to(&y)?.value >= t - self.opts.slack)
        };
        if pred(hi)? {
            return Ok(hi);
        }
        let (mut lo, mut hi) = (0.0, hi);
        while hi - lo > self.opts.bisection_tol {
            let mid = 0.5 * (lo + hi);
            if pred(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Scan the ray for the first shorter competing geodesic, then locate the time where its
    /// length equals `t` by safeguarded regula falsi on `g(t) = |w_c(t)| − t`, continuing the
    /// competing velocity `w_c` by Newton's method.
    fn branch_cut(&self, e: &[f64], t_max: f64) -> Result<(f64, bool)> {
        let fan = self.fan.as_ref().expect("numerical model has a fan");
        let ds = fan.sample_spacing();
        let n = steps_for(t_max, ds) + 2;
        let ray = integrate_ray(self.model, &self.x, e, ds, n)?;
        let truncated = ray.len() < n;
        let self_angle = fan.angle_of(e)?;
        let dth = fan.angle_spacing();
        for (k, y) in ray.iter().enumerate().skip(1) {
            let s_k = k as f64 * ds;
            if s_k > t_max + ds {
                break;
            }
            let cands: Vec<(f64, f64)> = fan
                .seeds(y)
                .into_iter()
                .filter(|&(th, s)| {
                    let gap = (th - self_angle).rem_euclid(2.0 * PI);
                    (gap.min(2.0 * PI - gap) > 3.0 * dth && s < s_k + 2.0 * ds) || s < s_k - 2.0 * ds
                })
                .collect();
            if cands.is_empty() {
                continue;
            }
            let self_w: Vec<f64> = e.iter().map(|c| c * s_k).collect();
            let (y_exact, _) = self.exp(&self_w)?;
            let mut comps: Vec<Vec<f64>> = Vec::new();
            for (th, s) in cands {
                let w0: Vec<f64> = fan.direction(th).iter().map(|c| c * s).collect();
                let sol = match fan.refine(&y_exact, &w0) {
                    Ok(s) => s,
                    Err(GeoError::ChartExit { .. }) | Err(GeoError::Domain { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if !sol.converged || sol.length >= s_k - 1e-9 {
                    continue;
                }
                if max_abs_diff(&sol.velocity, &self_w) < 1e-6 {
                    continue;
                }
                if comps.iter().any(|c| max_abs_diff(c, &sol.velocity) < 1e-6) {
                    continue;
                }
                comps.push(sol.velocity);
            }
            if comps.is_empty() {
                continue;
            }
            let mut best = s_k;
            let mut last_err = None;
            for w in comps {
                match self.branch_root(e, &w, s_k) {
                    Ok(r) => best = best.min(r),
                    Err(err) => last_err = Some(err),
                }
            }
            if best == s_k {
                if let Some(err) = last_err {
                    return Err(err);
                }
            }
            return Ok((best, true));
        }
        if truncated {
            return Err(GeoError::UnresolvedCut {
                lo: 0.0,
                hi: (ray.len() - 1) as f64 * ds,
                reason: "ray left the chart before a cut point was found".into(),
            });
        }
        Ok((t_max, false))
    }

    /// Competing velocity continued to time `t`, or `None` when Newton fails.
    fn competitor_at(&self, e: &[f64], t: f64, guess: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let w: Vec<f64> = e.iter().map(|c| c * t).collect();
        let (y, _) = self.exp(&w)?;
        let len = norm(self.model, &self.x, guess)?;
        let n = steps_for(len + 0.1, self.opts.distance.step);
        match solve_shot(self.model, &self.x, &y, guess, n, self.opts.distance.tol, 25) {
            Ok(sol) if sol.converged => Ok(Some((sol.length - t, sol.velocity))),
            Ok(_) => Ok(None),
            Err(GeoError::ChartExit { .. }) | Err(GeoError::Domain { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn branch_root(&self, e: &[f64], w_hi: &[f64], t_hi: f64) -> Result<f64> {
        let ds = self.fan.as_ref().map_or(1e-2, |f| f.sample_spacing());
        let mut b = t_hi;
        let mut wb = w_hi.to_vec();
        let mut gb = norm(self.model, &self.x, w_hi)? - t_hi;
        // walk back until the competitor is longer than the ray
        let mut step = ds;
        let (mut a, mut ga, mut wa);
        loop {
            let t = b - step;
            if t <= 0.0 {
                return Err(GeoError::UnresolvedCut {
                    lo: 0.0,
                    hi: b,
                    reason: "competing branch stays shorter down to t = 0".into(),
                });
            }
            match self.competitor_at(e, t, &wb)? {
                Some((g, w)) if g > 0.0 => {
                    a = t;
                    ga = g;
                    wa = w;
                    break;
                }
                Some((g, w)) => {
                    b = t;
                    gb = g;
                    wb = w;
                }
                None => {
                    step *= 0.5;
                    if step < 1e-7 {
                        return Err(GeoError::UnresolvedCut {
                            lo: t,
                            hi: b,
                            reason: "competing branch lost during continuation".into(),
                        });
                    }
                }
            }
        }
        let mut side = 0i32;
        for _ in 0..200 {
            if b - a <= self.opts.bisection_tol {
                break;
            }
            let mut c = b - gb * (b - a) / (gb - ga);
            if !(c > a && c < b) {
                c = 0.5 * (a + b);
            }
            let guess = if c - a < b - c { wa.clone() } else { wb.clone() };
            let (gc, wc) = match self.competitor_at(e, c, &guess)? {
                Some(r) => r,
                None => {
                    let m = 0.5 * (a + b);
                    match self.competitor_at(e, m, &guess)? {
                        Some(r) => {
                            c = m;
                            r
                        }
                        None => {
                            return Err(GeoError::UnresolvedCut {
                                lo: a,
                                hi: b,
                                reason: "competing branch lost inside the bracket".into(),
                            })
                        }
                    }
                }
            };
            if gc.abs() < 1e-13 {
                return Ok(c);
            }
            if gc > 0.0 {
                a = c;
                ga = gc;
                wa = wc;
                if side == -1 {
                    gb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                gb = gc;
                wb = wc;
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            }
        }
        Ok(0.5 * (a + b))
    }

    fn report(&self, e: &[f64], t_cut: f64, t_f: Option<f64>, method: &str) -> Result<CutReport> {
        let v: Vec<f64> = e.iter().map(|c| c * t_cut).collect();
        let (y, _) = self.exp(&v)?;
        let (mut mins, capped) = match &self.fan {
            None => {
                let r = self.distance_to(&y)?;
                (r.minimizers, r.capped)
            }
            Some(fan) => {
                let sols = fan.shots(&y, self.opts.distance.length_gap)?;
                let best = sols.first().map_or(t_cut, |s| s.length.min(t_cut));
                let m = sols
                    .into_iter()
                    .filter(|s| {
                        s.residual <= self.opts.distance.endpoint_gap
                            && s.length <= best + self.opts.distance.length_gap
                    })
                    .map(|s| s.velocity)
                    .collect();
                (m, false)
            }
        };
        let same = |a: &[f64], b: &[f64]| max_abs_diff(a, b) < 1e-6 * (1.0 + t_cut);
        mins.retain(|w| !same(w, &v));
        if capped {
            let anti: Vec<f64> = v.iter().map(|c| -c).collect();
            if !mins.iter().any(|w| same(w, &anti)) {
                mins.insert(0, anti);
            }
        }
        mins.truncate(self.opts.multiplicity_cap.saturating_sub(1));
        let mut delta: f64 = 0.0;
        for w in &mins {
            let diff: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
            delta = delta.max(norm(self.model, &self.x, &diff)?);
        }
        let focal_cut = t_f.is_some_and(|tf| (tf - t_cut).abs() <= self.opts.focal_tol);
        let multiplicity = mins.len() + 1;
        Ok(CutReport {
            direction: e.to_vec(),
            t_cut,
            t_f,
            competing_velocities: mins,
            multiplicity,
            capped,
            delta_v: delta,
            focal_cut,
            purely_focal: focal_cut && multiplicity == 1,
            method: method.to_string(),
        })
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Cut time of the unit direction `e_v` at `x`.
pub fn cut_time(model: &dyn Manifold, x: &ChartPoint, e_v: &TangentVector, opts: &CutOptions) -> Result<CutReport> {
    CutContext::new(model, &x.coords, opts)?.cut_time(&e_v.components)
}

/// Per-direction cut and focal times on a uniform angular grid at `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSample {
    pub x: Vec<f64>,
    /// Orthonormal frame at `x`; angles are measured in it.
    pub frame: Vec<Vec<f64>>,
    pub angles: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    /// `None` marks an unresolved direction.
    pub t_cut: Vec<Option<f64>>,
    /// `None` means no focal time before the horizon.
    pub t_f: Vec<Option<f64>>,
    pub delta: Vec<Option<f64>>,
    pub multiplicity: Vec<usize>,
    pub errors: Vec<Option<String>>,
    pub horizon: f64,
    pub tolerance: f64,
    pub partial: bool,
}

pub fn domain_sample(model: &dyn Manifold, x: &ChartPoint, n: usize, opts: &CutOptions) -> Result<DomainSample> {
    let ctx = CutContext::new(model, &x.coords, opts)?;
    domain_sample_with(&ctx, n)
}

pub fn domain_sample_with(ctx: &CutContext, n: usize) -> Result<DomainSample> {
    if n < 8 {
        return Err(GeoError::Precondition(format!("domain sample needs N >= 8, got {n}")));
    }
    if ctx.x.len() != 2 {
        return Err(GeoError::Precondition("domain sampling is implemented for surfaces".into()));
    }
    let angles: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let results: Vec<(Vec<f64>, std::result::Result<CutReport, GeoError>, Option<f64>)> = angles
        .par_iter()
        .map(|&th| {
            let e = ctx.direction(th);
            let r = ctx.cut_time(&e);
            let tf = match &r {
                Ok(rep) => rep.t_f,
                Err(_) => ctx.focal_time(&e).ok().flatten(),
            };
            (e, r, tf)
        })
        .collect();
    let mut s = DomainSample {
        x: ctx.x.clone(),
        frame: ctx.frame.clone(),
        angles,
        directions: Vec::with_capacity(n),
        t_cut: Vec::with_capacity(n),
        t_f: Vec::with_capacity(n),
        delta: Vec::with_capacity(n),
        multiplicity: Vec::with_capacity(n),
        errors: Vec::with_capacity(n),
        horizon: ctx.opts.jacobi.horizon_factor * ctx.model.diameter_bound(),
        tolerance: ctx.opts.focal_tol,
        partial: false,
    };
    for (e, r, tf) in results {
        s.directions.push(e);
        match r {
            Ok(rep) => {
                s.t_cut.push(Some(rep.t_cut));
                s.t_f.push(rep.t_f);
                s.delta.push(Some(rep.delta_v));
                s.multiplicity.push(rep.multiplicity);
                s.errors.push(None);
            }
            Err(err) => {
                s.partial = true;
                s.t_cut.push(None);
                s.t_f.push(tf);
                s.delta.push(None);
                s.multiplicity.push(0);
                s.errors.push(Some(err.to_string()));
            }
        }
    }
    Ok(s)
}

impl DomainSample {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Angle and norm of `v` in the sample frame.
    pub fn polar(&self, model: &dyn Manifold, v: &[f64]) -> Result<(f64, f64)> {
        let mut g = vec![0.0; 4];
        model.metric_into(&self.x, &mut g)?;
        let a = inner_with(&g, 2, v, &self.frame[0]);
        let b = inner_with(&g, 2, v, &self.frame[1]);
        Ok((b.atan2(a).rem_euclid(2.0 * PI), a.hypot(b)))
    }

    fn bracket(&self, angle: f64) -> (usize, usize, f64) {
        let n = self.len();
        let u = angle.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64;
        let i = (u.floor() as usize) % n;
        (i, (i + 1) % n, u - u.floor())
    }

    /// `t_cut` at an arbitrary angle, linear in the angle between grid directions.
    pub fn t_cut_at(&self, angle: f64) -> Result<f64> {
        let (i, j, f) = self.bracket(angle);
        match (self.t_cut[i], self.t_cut[j]) {
            (Some(a), Some(b)) => Ok(a + f * (b - a)),
            _ => Err(GeoError::UnresolvedCut {
                lo: self.angles[i],
                hi: self.angles[j],
                reason: "direction falls in an unresolved sector".into(),
            }),
        }
    }

    /// `t_f` at an arbitrary angle; `None` if either neighbour has no focal time.
    pub fn t_f_at(&self, angle: f64) -> Option<f64> {
        let (i, j, f) = self.bracket(angle);
        match (self.t_f[i], self.t_f[j]) {
            (Some(a), Some(b)) => Some(a + f * (b - a)),
            _ => None,
        }
    }

    /// Smallest resolved cut time: an injectivity-radius estimate.
    pub fn injectivity_estimate(&self) -> Option<f64> {
        self.t_cut.iter().flatten().cloned().reduce(f64::min)
    }

    pub fn min_focal_time(&self) -> Option<f64> {
        self.t_f.iter().flatten().cloned().reduce(f64::min)
    }

    /// Boundary of `I(x)` in frame coordinates (resolved directions only).
    pub fn cut_polygon(&self) -> Vec<[f64; 2]> {
        self.angles
            .iter()
            .zip(&self.t_cut)
            .filter_map(|(a, t)| t.map(|t| [t * a.cos(), t * a.sin()]))
            .collect()
    }

    /// CSV with columns `angle, t_cut, t_f, delta, multiplicity, error`; missing values are
    /// empty and `t_f` beyond the horizon is `inf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["angle", "t_cut", "t_f", "delta", "multiplicity", "error"])
            .map_err(crate::geodesic::csv_err)?;
        for i in 0..self.len() {
            let f = |o: Option<f64>| o.map_or(String::new(), crate::geodesic::fmt_num);
            wtr.write_record([
                crate::geodesic::fmt_num(self.angles[i]),
                f(self.t_cut[i]),
                self.t_f[i].map_or("inf".to_string(), crate::geodesic::fmt_num),
                f(self.delta[i]),
                self.multiplicity[i].to_string(),
                self.errors[i].clone().unwrap_or_default(),
            ])
            .map_err(crate::geodesic::csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Polar plot of the tangent cut locus (solid) and tangent focal locus (dashed).
    pub fn to_svg(&self) -> String {
        let size = 800.0;
        let c = size / 2.0;
        let mut rmax: f64 = 0.0;
        for t in self.t_cut.iter().flatten() {
            rmax = rmax.max(*t);
        }
        for t in self.t_f.iter().flatten() {
            rmax = rmax.max(*t);
        }
        if rmax == 0.0 {
            rmax = 1.0;
        }
        let scale = 0.45 * size / rmax;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r##"<line x1="0" y1="{c}" x2="{size}" y2="{c}" stroke="#ccc"/><line x1="{c}" y1="0" x2="{c}" y2="{size}" stroke="#ccc"/>"##
        );
        let path = |vals: &[Option<f64>]| -> Vec<String> {
            // one polyline per run of finite values
            let mut runs = Vec::new();
            let mut cur = String::new();
            let n = vals.len();
            for k in 0..=n {
                let i = k % n;
                match vals[i] {
                    Some(t) => {
                        let a = self.angles[i];
                        let _ = write!(cur, "{:.3},{:.3} ", c + scale * t * a.cos(), c - scale * t * a.sin());
                    }
                    None => {
                        if !cur.is_empty() {
                            runs.push(std::mem::take(&mut cur));
                        }
                    }
                }
            }
            if !cur.is_empty() {
                runs.push(cur);
            }
            runs
        };
        for pts in path(&self.t_f) {
            let _ = writeln!(
                svg,
                r##"<polyline points="{pts}" fill="none" stroke="#c33" stroke-width="1.5" stroke-dasharray="6,4"/>"##
            );
        }
        for pts in path(&self.t_cut) {
            let _ = writeln!(svg, r##"<polyline points="{pts}" fill="none" stroke="#236" stroke-width="2"/>"##);
        }
        let _ = writeln!(svg, "</svg>");
        svg
    }
}

/// `ρ_x(v, w)`: `|v − w|` on a common ray, `|v| + |w|` otherwise.
pub fn radial_distance(model: &dyn Manifold, v: &TangentVector, w: &TangentVector) -> Result<f64> {
    if model.chart_delta(&v.base.coords, &w.base.coords).iter().any(|c| c.abs() > 1e-12) {
        return Err(GeoError::InconsistentInput("radial distance needs a common base point".into()));
    }
    let x = &v.base.coords;
    let nv = norm(model, x, &v.components)?;
    let nw = norm(model, x, &w.components)?;
    let g = inner(model, x, &v.components, &w.components)?;
    if (g - nv * nw).abs() <= 1e-12 * (1.0 + nv * nw) {
        let diff: Vec<f64> = v.components.iter().zip(&w.components).map(|(a, b)| a - b).collect();
        norm(model, x, &diff)
    } else {
        Ok(nv + nw)
    }
}

/// `ρ_x(v, I(x)) = max(0, |v| − t_cut(v/|v|))` using the sampled boundary.
pub fn radial_distance_to_domain(model: &dyn Manifold, sample: &DomainSample, v: &TangentVector) -> Result<f64> {
    if model.chart_delta(&sample.x, &v.base.coords).iter().any(|c| c.abs() > 1e-12) {
        return Err(GeoError::InconsistentInput("vector is not based at the sample point".into()));
    }
    let (angle, len) = sample.polar(model, &v.components)?;
    if len == 0.0 {
        return Ok(0.0);
    }
    Ok((len - sample.t_cut_at(angle)?).max(0.0))
}

/// Radial scaling band `{ s · t_cut(e) e : s ∈ [1 − a, 1 + a] }` sampled at `n_scales` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub a: f64,
    pub n_scales: usize,
}

impl Default for Band {
    fn default() -> Self {
        Band { a: 0.2, n_scales: 5 }
    }
}

impl Band {
    pub fn scales(&self) -> Vec<f64> {
        if self.n_scales <= 1 {
            return vec![1.0];
        }
        (0..self.n_scales)
            .map(|i| 1.0 - self.a + 2.0 * self.a * i as f64 / (self.n_scales - 1) as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub angle: f64,
    pub scale: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutDistanceBoundReport {
    /// Smallest `K` with `ρ_x(v, I(x)) ≤ K (|v|² − d(x, exp_x v)²)` on the sample.
    pub k_fit: Option<f64>,
    pub n_samples: usize,
    pub n_positive: usize,
    pub min_delta: Option<f64>,
    pub violations: Vec<BoundViolation>,
    pub skipped: usize,
}

/// Check `ρ_x(v, I(x)) ≤ K (|v|² − d(x, exp_x v)²)` on a band around the tangent cut locus.
pub fn verify_cut_distance_bound(
    ctx: &CutContext,
    sample: &DomainSample,
    band: &Band,
    assert_nonfocal: bool,
) -> Result<CutDistanceBoundReport> {
    let min_delta = sample.delta.iter().flatten().cloned().reduce(f64::min);
    if assert_nonfocal && min_delta.map_or(true, |d| d < 1e-6) {
        return Err(GeoError::InconsistentInput(format!(
            "nonfocality asserted but the sampled δ is {min_delta:?}"
        )));
    }
    let scales = band.scales();
    let jobs: Vec<(usize, f64)> = (0..sample.len())
        .flat_map(|i| scales.iter().map(move |&s| (i, s)))
        .collect();
    let rows: Vec<Option<(f64, f64, usize, f64)>> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let tc = sample.t_cut[i]?;
            let len = s * tc;
            let v: Vec<f64> = sample.directions[i].iter().map(|c| c * len).collect();
            let (y, _) = ctx.exp(&v).ok()?;
            let d = ctx.distance_to(&y).ok()?;
            if !d.converged {
                return None;
            }
            let lhs = (len - tc).max(0.0);
            let rhs = len * len - d.value * d.value;
            Some((lhs, rhs, i, s))
        })
        .collect();
    let mut rep = CutDistanceBoundReport {
        k_fit: Some(0.0),
        n_samples: 0,
        n_positive: 0,
        min_delta,
        violations: Vec::new(),
        skipped: 0,
    };
    for r in rows {
        let Some((lhs, rhs, i, s)) = r else {
            rep.skipped += 1;
            continue;
        };
        rep.n_samples += 1;
        if lhs <= 1e-9 {
            continue;
        }
        rep.n_positive += 1;
        if rhs <= 1e-12 {
            rep.k_fit = None;
            rep.violations.push(BoundViolation {
                angle: sample.angles[i],
                scale: s,
                lhs,
                rhs,
                note: "positive radial distance with vanishing length defect".into(),
            });
            continue;
        }
        if let Some(k) = rep.k_fit.as_mut() {
            *k = k.max(lhs / rhs);
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityReport {
    /// Two-sided constant for the radial distances to the injectivity domains.
    pub k_cut: Option<f64>,
    /// Two-sided constant for the radial distances to the tangent focal loci (v ∈ I(x)).
    pub k_focal: Option<f64>,
    pub focal_locus_empty: bool,
    pub n_samples: usize,
    pub n_positive: usize,
    pub skipped: usize,
    pub violations: Vec<BoundViolation>,
}

/// Two-sided comparability of `ρ_x(v, I(x))` and `ρ_y(w, I(y))` with `y = exp_x v` and
/// `w` minus the final velocity; for `v ∈ I(x)` the same for the tangent focal loci.
pub fn verify_endpoint_comparability(
    ctx: &CutContext,
    sample: &DomainSample,
    band: &Band,
    directions: Option<&[usize]>,
) -> Result<ComparabilityReport> {
    let model = ctx.model;
    let scales = band.scales();
    let idx: Vec<usize> = match directions {
        Some(d) => d.to_vec(),
        None => (0..sample.len()).collect(),
    };
    let jobs: Vec<(usize, f64)> = idx.iter().flat_map(|&i| scales.iter().map(move |&s| (i, s))).collect();
    let tf_min_x = sample.min_focal_time();
    let opts = ctx.opts.clone();
    let rows: Vec<std::result::Result<(usize, f64, f64, f64, Option<(f64, f64)>), String>> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let tc = sample.t_cut[i].ok_or("unresolved direction at x")?;
            let len = s * tc;
            let v: Vec<f64> = sample.directions[i].iter().map(|c| c * len).collect();
            let (y, psi) = ctx.exp(&v).map_err(|e| e.to_string())?;
            let w: Vec<f64> = psi.iter().map(|c| -c).collect();
            let wl = norm(model, &y, &w).map_err(|e| e.to_string())?;
            let ew: Vec<f64> = w.iter().map(|c| c / wl).collect();
            let cy = CutContext::new(model, &y, &opts).map_err(|e| e.to_string())?;
            let rep_y = cy.cut_time(&ew).map_err(|e| e.to_string())?;
            let rho_x = (len - tc).max(0.0);
            let rho_y = (wl - rep_y.t_cut).max(0.0);
            let focal = if s < 1.0 {
                let tf_x = sample.t_f[i];
                let rx = focal_radial(len, tf_x, tf_min_x);
                let tf_y = rep_y.t_f;
                let tf_min_y = focal_min(&cy, 36).map_err(|e| e.to_string())?;
                let ry = focal_radial(wl, tf_y, tf_min_y);
                Some((rx, ry))
            } else {
                None
            };
            Ok((i, s, rho_x, rho_y, focal))
        })
        .collect();
    let mut rep = ComparabilityReport {
        k_cut: Some(1.0),
        k_focal: None,
        focal_locus_empty: false,
        n_samples: 0,
        n_positive: 0,
        skipped: 0,
        violations: Vec::new(),
    };
    let pos = 1e-6;
    let mut focal_any = false;
    let mut k_focal: Option<f64> = Some(1.0);
    for r in rows {
        let Ok((i, s, rx, ry, focal)) = r else {
            rep.skipped += 1;
            continue;
        };
        rep.n_samples += 1;
        if rx > pos || ry > pos {
            rep.n_positive += 1;
            if rx > pos && ry > pos {
                if let Some(k) = rep.k_cut.as_mut() {
                    *k = k.max(rx / ry).max(ry / rx);
                }
            } else if rx.max(ry) > 1e3 * pos {
                rep.k_cut = None;
                rep.violations.push(BoundViolation {
                    angle: sample.angles[i],
                    scale: s,
                    lhs: rx,
                    rhs: ry,
                    note: "only one endpoint lies outside its injectivity domain".into(),
                });
            }
        }
        if let Some((fx, fy)) = focal {
            if fx.is_finite() || fy.is_finite() {
                focal_any = true;
                if fx.is_finite() && fy.is_finite() && fx > pos && fy > pos {
                    if let Some(k) = k_focal.as_mut() {
                        *k = k.max(fx / fy).max(fy / fx);
                    }
                } else {
                    k_focal = None;
                    rep.violations.push(BoundViolation {
                        angle: sample.angles[i],
                        scale: s,
                        lhs: fx,
                        rhs: fy,
                        note: "focal radial distances not comparable".into(),
                    });
                }
            }
        }
    }
    rep.focal_locus_empty = !focal_any;
    rep.k_focal = if focal_any { k_focal } else { None };
    Ok(rep)
}

/// `ρ(v, TFL)` for `v` inside the injectivity domain: along its own ray, or through the origin
/// to the nearest focal point on another ray.
fn focal_radial(len: f64, tf_dir: Option<f64>, tf_min: Option<f64>) -> f64 {
    let own = tf_dir.map_or(f64::INFINITY, |t| (t - len).max(0.0));
    let other = tf_min.map_or(f64::INFINITY, |t| len + t);
    own.min(other)
}

fn focal_min(ctx: &CutContext, n: usize) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for i in 0..n {
        let e = ctx.direction(2.0 * PI * i as f64 / n as f64);
        if let Some(t) = ctx.focal_time(&e)? {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    /// Move along the geodesic: `(γ(±ε), γ̇(±ε))`.
    GeodesicDirection,
    /// Move the base point along the near-kernel direction of `J01(t_cut)`.
    FocalKernel,
    /// Rotate the unit velocity by `±ε`.
    Velocity,
}

impl std::str::FromStr for ProbeMode {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geodesic-direction" => Ok(ProbeMode::GeodesicDirection),
            "focal-kernel" => Ok(ProbeMode::FocalKernel),
            "velocity" => Ok(ProbeMode::Velocity),
            _ => Err(GeoError::Parse {
                field: "mode".into(),
                message: format!("unknown probe mode '{s}'"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutLipschitzProbe {
    pub mode: ProbeMode,
    pub eps: f64,
    pub t_cut: f64,
    /// `|t_cut(y, w) − t_cut(x, v)| / d((x, v), (y, w))` for the `±ε` perturbations.
    pub quotients: Vec<f64>,
    pub max_quotient: f64,
    /// Same maximum at `ε / 2`; the ratio diagnoses ε-stability.
    pub max_quotient_half: Option<f64>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

pub fn cut_lipschitz_probe(
    model: &dyn Manifold,
    x: &ChartPoint,
    e_v: &TangentVector,
    mode: ProbeMode,
    eps: f64,
    opts: &CutOptions,
) -> Result<CutLipschitzProbe> {
    let ctx = CutContext::new(model, &x.coords, opts)?;
    let base = ctx.cut_time(&e_v.components)?;
    let (q, skipped, warnings) = probe_quotients(&ctx, &e_v.components, base.t_cut, mode, eps)?;
    let (qh, _, _) = probe_quotients(&ctx, &e_v.components, base.t_cut, mode, eps / 2.0)?;
    let maxq = q.iter().cloned().fold(0.0, f64::max);
    Ok(CutLipschitzProbe {
        mode,
        eps,
        t_cut: base.t_cut,
        max_quotient: maxq,
        max_quotient_half: if qh.is_empty() { None } else { Some(qh.iter().cloned().fold(0.0, f64::max)) },
        quotients: q,
        skipped,
        warnings,
    })
}

fn probe_quotients(
    ctx: &CutContext,
    e: &[f64],
    t0: f64,
    mode: ProbeMode,
    eps: f64,
) -> Result<(Vec<f64>, usize, Vec<String>)> {
    let model = ctx.model;
    let x = &ctx.x;
    let d = x.len();
    let mut perturbed: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    match mode {
        ProbeMode::Velocity => {
            let th = ctx.angle_of(e)?;
            for s in [eps, -eps] {
                let e2 = ctx.direction(th + s);
                let diff: Vec<f64> = e2.iter().zip(e).map(|(a, b)| a - b).collect();
                let dist = norm(model, x, &diff)?;
                perturbed.push((x.clone(), e2, dist));
            }
        }
        ProbeMode::GeodesicDirection => {
            for s in [eps, -eps] {
                let w: Vec<f64> = e.iter().map(|c| c * s).collect();
                let (y, vel) = ctx.exp(&w)?;
                let vel = if s < 0.0 { vel } else { vel };
                let n = norm(model, &y, &vel)?;
                perturbed.push((y, vel.iter().map(|c| c / n).collect(), eps));
            }
        }
        ProbeMode::FocalKernel => {
            let v = TangentVector::new(ChartPoint::new(x.clone()), e.to_vec());
            let sol = integrate_fundamental(model, &v, t0.max(1e-3), &ctx.opts.jacobi)?;
            let [a, ..] = sol.blocks(sol.len() - 1);
            let svd = a.svd(false, true);
            let vt = svd.v_t.unwrap();
            let imin = (0..d)
                .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
                .unwrap();
            let frame0 = orthonormal_frame(model, x, Some(e))?;
            let h: Vec<f64> = (0..d).map(|k| (0..d).map(|i| vt[(imin, i)] * frame0[i][k]).sum()).collect();
            let f0 = orthonormal_frame(model, x, None)?;
            let mut g = vec![0.0; d * d];
            model.metric_into(x, &mut g)?;
            let coef: Vec<f64> = f0.iter().map(|b| inner_with(&g, d, e, b)).collect();
            for s in [eps, -eps] {
                let mut xp: Vec<f64> = (0..d).map(|k| x[k] + s * h[k]).collect();
                model.reduce(&mut xp);
                let fp = orthonormal_frame(model, &xp, None)?;
                let ep: Vec<f64> = (0..d).map(|k| (0..d).map(|i| coef[i] * fp[i][k]).sum()).collect();
                perturbed.push((xp, ep, eps));
            }
        }
    }
    let mut q = Vec::new();
    let mut skipped = 0;
    let mut warnings = Vec::new();
    for (xp, ep, dist) in perturbed {
        let res = if model.chart_delta(&xp, x).iter().all(|c| c.abs() < 1e-15) {
            ctx.cut_time(&ep)
        } else {
            CutContext::new(model, &xp, &ctx.opts).and_then(|c| c.cut_time(&ep))
        };
        match res {
            Ok(r) => q.push((r.t_cut - t0).abs() / dist),
            Err(err) => {
                skipped += 1;
                warnings.push(format!("perturbed cut time unresolved: {err}"));
            }
        }
    }
    Ok((q, skipped, warnings))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonfocalityEntry {
    pub x: Vec<f64>,
    pub min_margin: Option<f64>,
    pub margins: Vec<Option<f64>>,
    pub min_delta: Option<f64>,
    pub unresolved: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonfocalityReport {
    pub nonfocal: bool,
    pub tolerance: f64,
    /// Smallest `t_f − t_cut` over all samples (`None` = infinite).
    pub min_margin: Option<f64>,
    /// Smallest `δ(v)` over sampled cut points.
    pub delta_estimate: Option<f64>,
    pub entries: Vec<NonfocalityEntry>,
}

pub fn nonfocality_report(
    model: &dyn Manifold,
    xs: &[ChartPoint],
    n: usize,
    opts: &CutOptions,
) -> Result<NonfocalityReport> {
    let mut entries = Vec::new();
    for x in xs {
        let s = domain_sample(model, x, n, opts)?;
        entries.push(nonfocality_entry(&s));
    }
    Ok(summarize_nonfocality(entries, opts.focal_tol))
}

pub fn nonfocality_entry(s: &DomainSample) -> NonfocalityEntry {
    let margins: Vec<Option<f64>> = s
        .t_cut
        .iter()
        .zip(&s.t_f)
        .map(|(c, f)| match (c, f) {
            (Some(c), Some(f)) => Some(f - c),
            _ => None,
        })
        .collect();
    NonfocalityEntry {
        x: s.x.clone(),
        min_margin: margins.iter().flatten().cloned().reduce(f64::min),
        margins,
        min_delta: s.delta.iter().flatten().cloned().reduce(f64::min),
        unresolved: s.t_cut.iter().filter(|t| t.is_none()).count(),
    }
}

pub fn summarize_nonfocality(entries: Vec<NonfocalityEntry>, tol: f64) -> NonfocalityReport {
    let min_margin = entries.iter().filter_map(|e| e.min_margin).reduce(f64::min);
    let delta_estimate = entries.iter().filter_map(|e| e.min_delta).reduce(f64::min);
    let unresolved: usize = entries.iter().map(|e| e.unresolved).sum();
    NonfocalityReport {
        nonfocal: unresolved == 0 && min_margin.map_or(true, |m| m > tol),
        tolerance: tol,
        min_margin,
        delta_estimate,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::builtin;

    #[test]
    fn sphere_cut_is_antipodal() {
        let m = builtin("sphere_r1").unwrap();
        let ctx = CutContext::new(&*m, &[1.1, 0.3], &CutOptions::default()).unwrap();
        let r = ctx.cut_time(&ctx.direction(0.7)).unwrap();
        assert!((r.t_cut - PI).abs() < 1e-6);
        assert!(r.focal_cut && r.capped);
        assert!((r.delta_v - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn torus_cut_times_follow_the_square() {
        let m = builtin("torus_2pi").unwrap();
        let ctx = CutContext::new(&*m, &[0.0, 0.0], &CutOptions::default()).unwrap();
        let r = ctx.cut_time(&[1.0, 0.0]).unwrap();
        assert!((r.t_cut - PI).abs() < 1e-7);
        assert_eq!(r.competing_velocities.len(), 1);
        assert!((r.delta_v - 2.0 * PI).abs() < 1e-6);
        assert!(!r.purely_focal);
        let e = [std::f64::consts::FRAC_1_SQRT_2; 2];
        let r = ctx.cut_time(&e).unwrap();
        assert!((r.t_cut - PI * 2f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn radial_distance_examples() {
        let m = builtin("torus_2pi").unwrap();
        let p = ChartPoint::new(vec![0.0, 0.0]);
        let tv = |c: [f64; 2]| TangentVector::new(p.clone(), c.to_vec());
        assert!((radial_distance(&*m, &tv([1.0, 0.0]), &tv([2.0, 0.0])).unwrap() - 1.0).abs() < 1e-15);
        assert!((radial_distance(&*m, &tv([1.0, 0.0]), &tv([0.0, 1.0])).unwrap() - 2.0).abs() < 1e-15);
        assert!((radial_distance(&*m, &tv([1.0, 0.0]), &tv([0.0, 0.0])).unwrap() - 1.0).abs() < 1e-15);
    }
}
