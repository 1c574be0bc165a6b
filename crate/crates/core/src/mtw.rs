//! MTW tensor `𝔖_(x,v)(ξ,η) = −(3/2) ∂²_s ∂²_t c(exp_x(tξ), exp_x(v + sη))` by finite
//! differences of the cost, the extended tensor built from a locally inverted exponential
//! branch, and sampled checks of the (MTW) and MTW(K,C) conditions.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutlocus::{CutContext, CutOptions};
use crate::error::{GeoError, Result};
use crate::geodesic::{exp_point, exp_with_jacobian, steps_for};
use crate::manifold::{inner, norm, orthonormal_frame, Manifold};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtwOptions {
    /// Finite-difference step in `t` and `s` (tangent units).
    pub step: f64,
    /// Also evaluate at half the step and extrapolate.
    pub richardson: bool,
    /// RK4 step (arclength) for geodesics inside the cost.
    pub geodesic_step: f64,
    /// Stencils must keep this many steps between `v` and the tangent cut locus.
    pub cut_margin: f64,
    /// Endpoint residual accepted by the branch Newton solves.
    pub newton_tol: f64,
    /// Continuation substeps from the anchor to a query pair.
    pub substeps: usize,
    /// Largest chart displacement of a query pair from the anchor.
    pub neighborhood_radius: f64,
    pub cut: CutOptions,
}

impl Default for MtwOptions {
    fn default() -> Self {
        MtwOptions {
            step: 1e-2,
            richardson: true,
            geodesic_step: 1e-3,
            cut_margin: 5.0,
            newton_tol: 1e-12,
            substeps: 8,
            neighborhood_radius: 0.3,
            cut: CutOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtwEvaluation {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// Second-order stencil value at `(step_t, step_s)`.
    pub value: f64,
    pub step_t: f64,
    pub step_s: f64,
    /// Extrapolation from the step and its half.
    pub richardson_estimate: Option<f64>,
    /// Two-level difference `|V(h/2) − V(h)|`.
    pub error_estimate: Option<f64>,
    pub extended: bool,
}

impl MtwEvaluation {
    /// Extrapolated value when available, otherwise the stencil value.
    pub fn best(&self) -> f64 {
        self.richardson_estimate.unwrap_or(self.value)
    }
}

/// Anchor `(x, v)` with `y = exp_x v`; the cost of a nearby pair `(x', y')` is half the
/// squared length of the velocity `w'` with `exp_{x'} w' = y'` continued from `v`.
#[derive(Debug)]
pub struct ExtendedCostContext<'a> {
    model: &'a dyn Manifold,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    pub newton_tol: f64,
    pub neighborhood_radius: f64,
    pub substeps: usize,
    /// RK4 steps used for every exponential evaluated through this context.
    pub n_steps: usize,
    /// Smallest singular value of `d_v exp_x` (chart components).
    pub anchor_conditioning: f64,
}

impl<'a> ExtendedCostContext<'a> {
    pub fn new(model: &'a dyn Manifold, x: &[f64], v: &[f64], opts: &MtwOptions) -> Result<Self> {
        model.check_point(x)?;
        let len = norm(model, x, v)?;
        let n_steps = steps_for(len + 0.1, opts.geodesic_step);
        let (y, jac) = exp_with_jacobian(model, x, v, n_steps)?;
        let sv = jac.singular_values();
        let cond = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(cond > 1e-8) {
            return Err(GeoError::Branch(format!(
                "exponential map is singular at the anchor (smallest singular value {cond:.3e})"
            )));
        }
        Ok(ExtendedCostContext {
            model,
            x: x.to_vec(),
            v: v.to_vec(),
            y,
            newton_tol: opts.newton_tol,
            neighborhood_radius: opts.neighborhood_radius,
            substeps: opts.substeps.max(1),
            n_steps,
            anchor_conditioning: cond,
        })
    }

    /// Continued branch velocity at `x'` reaching `y'`.
    pub fn velocity(&self, xp: &[f64], yp: &[f64]) -> Result<Vec<f64>> {
        let m = self.model;
        let d = m.dim();
        let dx = m.chart_delta(&self.x, xp);
        let dy = m.chart_delta(&self.y, yp);
        let reach: f64 = dx.iter().chain(&dy).map(|c| c.abs()).fold(0.0, f64::max);
        if reach > self.neighborhood_radius {
            return Err(GeoError::Branch(format!(
                "query is {reach:.3e} from the anchor, beyond the neighborhood radius {}",
                self.neighborhood_radius
            )));
        }
        let mut w = self.v.clone();
        for k in 1..=self.substeps {
            let lam = k as f64 / self.substeps as f64;
            let xl: Vec<f64> = (0..d).map(|i| self.x[i] + lam * dx[i]).collect();
            let yl: Vec<f64> = (0..d).map(|i| self.y[i] + lam * dy[i]).collect();
            let prev = w.clone();
            w = self.newton(&xl, &yl, w)?;
            let jump: f64 = (0..d).map(|i| (w[i] - prev[i]).abs()).fold(0.0, f64::max);
            if jump > self.neighborhood_radius {
                return Err(GeoError::Branch(format!("branch jumped by {jump:.3e} in one substep")));
            }
        }
        Ok(w)
    }

    fn newton(&self, x: &[f64], y: &[f64], mut w: Vec<f64>) -> Result<Vec<f64>> {
        let m = self.model;
        let d = m.dim();
        let (p, mut jac) = exp_with_jacobian(m, x, &w, self.n_steps)?;
        let mut f = m.chart_delta(y, &p);
        let mut fnorm = f.iter().map(|c| c.abs()).fold(0.0, f64::max);
        // iterate until the residual stops decreasing so the root is resolved to rounding
        for _ in 0..40 {
            let rhs = DVector::from_iterator(d, f.iter().map(|c| -c));
            let Some(delta) = jac.clone().lu().solve(&rhs) else {
                return Err(GeoError::Branch("singular Jacobian during continuation".into()));
            };
            let wt: Vec<f64> = (0..d).map(|k| w[k] + delta[k]).collect();
            let (pt, jt) = exp_with_jacobian(m, x, &wt, self.n_steps)?;
            let ft = m.chart_delta(y, &pt);
            let nt = ft.iter().map(|c| c.abs()).fold(0.0, f64::max);
            if nt >= fnorm && fnorm <= self.newton_tol {
                break;
            }
            if nt >= 2.0 * fnorm && fnorm > self.newton_tol {
                return Err(GeoError::Branch(format!("Newton diverged (residual {nt:.3e})")));
            }
            w = wt;
            jac = jt;
            f = ft;
            fnorm = nt;
            if fnorm == 0.0 {
                break;
            }
        }
        if fnorm > self.newton_tol {
            return Err(GeoError::Branch(format!("Newton stalled at residual {fnorm:.3e}")));
        }
        Ok(w)
    }
}

/// `ĉ_(x,v)(x', y') = ½ |w'|²_{x'}` for the continued branch velocity `w'`.
pub fn extended_cost(ctx: &ExtendedCostContext, xp: &[f64], yp: &[f64]) -> Result<f64> {
    let w = ctx.velocity(xp, yp)?;
    let l = norm(ctx.model, xp, &w)?;
    Ok(0.5 * l * l)
}

/// `−(3/2) D²_t D²_s f` on the 3×3 stencil.
fn stencil(f: &dyn Fn(usize, usize) -> Result<f64>, h: f64, k: f64) -> Result<f64> {
    const W: [f64; 3] = [1.0, -2.0, 1.0];
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += W[i] * W[j] * f(i, j)?;
        }
    }
    Ok(-1.5 * acc / (h * h * k * k))
}

struct Stencil<'a> {
    model: &'a dyn Manifold,
    x: Vec<f64>,
    v: Vec<f64>,
    xi: Vec<f64>,
    eta: Vec<f64>,
    n_x: usize,
    n_y: usize,
}

impl Stencil<'_> {
    /// Points `exp_x(t ξ)` and `exp_x(v + s η)` for `t, s ∈ {−h, 0, h}`.
    fn points(&self, h: f64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let d = self.x.len();
        let mut xs = Vec::with_capacity(3);
        let mut ys = Vec::with_capacity(3);
        for o in [-1.0, 0.0, 1.0] {
            let w: Vec<f64> = self.xi.iter().map(|c| c * o * h).collect();
            xs.push(exp_point(self.model, &self.x, &w, self.n_x)?.0);
            let u: Vec<f64> = (0..d).map(|k| self.v[k] + o * h * self.eta[k]).collect();
            ys.push(exp_point(self.model, &self.x, &u, self.n_y)?.0);
        }
        Ok((xs, ys))
    }

    fn evaluate(&self, h: f64, cost: &(dyn Fn(&[f64], &[f64]) -> Result<f64> + Sync)) -> Result<f64> {
        let (xs, ys) = self.points(h)?;
        stencil(&|i, j| cost(&xs[i], &ys[j]), h, h)
    }
}

fn evaluate_with(
    model: &dyn Manifold,
    x: &[f64],
    v: &[f64],
    xi: &[f64],
    eta: &[f64],
    opts: &MtwOptions,
    extended: bool,
    cost: &(dyn Fn(&[f64], &[f64]) -> Result<f64> + Sync),
) -> Result<MtwEvaluation> {
    let nxi = norm(model, x, xi)?;
    let nv = norm(model, x, v)?;
    let st = Stencil {
        model,
        x: x.to_vec(),
        v: v.to_vec(),
        xi: xi.to_vec(),
        eta: eta.to_vec(),
        n_x: steps_for(opts.step * nxi, opts.geodesic_step).max(8),
        n_y: steps_for(nv + 0.1, opts.geodesic_step),
    };
    let h = opts.step;
    let value = st.evaluate(h, cost)?;
    let (rich, err) = if opts.richardson {
        let fine = st.evaluate(0.5 * h, cost)?;
        (Some((4.0 * fine - value) / 3.0), Some((fine - value).abs()))
    } else {
        (None, None)
    };
    Ok(MtwEvaluation {
        x: x.to_vec(),
        v: v.to_vec(),
        xi: xi.to_vec(),
        eta: eta.to_vec(),
        value,
        step_t: h,
        step_s: h,
        richardson_estimate: rich,
        error_estimate: err,
        extended,
    })
}

/// Check that `v` keeps `cut_margin · step` from the tangent cut locus; returns `t_cut`.
fn check_margin(
    model: &dyn Manifold,
    x: &[f64],
    v: &[f64],
    eta_norm: f64,
    opts: &MtwOptions,
    known_cut: Option<f64>,
) -> Result<Option<f64>> {
    let nv = norm(model, x, v)?;
    if nv == 0.0 {
        return Ok(None);
    }
    let t_cut = match known_cut {
        Some(t) => t,
        None => {
            let ctx = CutContext::new(model, x, &opts.cut)?;
            let e: Vec<f64> = v.iter().map(|c| c / nv).collect();
            ctx.cut_time(&e)?.t_cut
        }
    };
    let margin = t_cut - nv;
    let need = opts.cut_margin * opts.step * eta_norm.max(1.0);
    if margin < need {
        return Err(GeoError::StencilUnsafe(format!(
            "|v| = {nv:.6} leaves {margin:.3e} to the cut time {t_cut:.6}, need {need:.3e}"
        )));
    }
    Ok(Some(t_cut))
}

/// Standard tensor from `c = d²/2`; `v` must lie inside `I(x)` with margin.
pub fn mtw_tensor(
    model: &dyn Manifold,
    x: &[f64],
    v: &[f64],
    xi: &[f64],
    eta: &[f64],
    opts: &MtwOptions,
) -> Result<MtwEvaluation> {
    mtw_tensor_with_cut(model, x, v, xi, eta, opts, None)
}

/// As [`mtw_tensor`], reusing an already computed `t_cut(x, v/|v|)`.
pub fn mtw_tensor_with_cut(
    model: &dyn Manifold,
    x: &[f64],
    v: &[f64],
    xi: &[f64],
    eta: &[f64],
    opts: &MtwOptions,
    t_cut: Option<f64>,
) -> Result<MtwEvaluation> {
    model.check_point(x)?;
    let neta = norm(model, x, eta)?;
    check_margin(model, x, v, neta, opts, t_cut)?;
    if model.analytic_log(x, x).is_some() {
        let cost = |a: &[f64], b: &[f64]| -> Result<f64> {
            let set = model.analytic_log(a, b).expect("closed-form log")?;
            if set.capped || set.velocities.len() > 1 {
                return Err(GeoError::StencilUnsafe("stencil pair lies on the cut locus".into()));
            }
            Ok(0.5 * set.length * set.length)
        };
        evaluate_with(model, x, v, xi, eta, opts, false, &cost)
    } else {
        // inside I(x) the minimizing branch is the one continued from v; one substep suffices
        let local = MtwOptions {
            substeps: 1,
            ..opts.clone()
        };
        let ctx = ExtendedCostContext::new(model, x, v, &local)?;
        let cost = |a: &[f64], b: &[f64]| extended_cost(&ctx, a, b);
        evaluate_with(model, x, v, xi, eta, opts, false, &cost)
    }
}

/// Extended tensor from `ĉ_(x,v)`; valid for `v ∈ NF(x)`.
pub fn extended_mtw_tensor(
    model: &dyn Manifold,
    x: &[f64],
    v: &[f64],
    xi: &[f64],
    eta: &[f64],
    opts: &MtwOptions,
) -> Result<MtwEvaluation> {
    let ctx = ExtendedCostContext::new(model, x, v, opts)?;
    let cost = |a: &[f64], b: &[f64]| extended_cost(&ctx, a, b);
    evaluate_with(model, x, v, xi, eta, opts, true, &cost)
}

/// Sample grid for condition scans on surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub name: String,
    pub xs: Vec<Vec<f64>>,
    /// `|v| = fraction · t_cut(x, e)`; 0 gives the base point itself.
    pub v_fractions: Vec<f64>,
    pub n_v_dirs: usize,
    /// Number of rotations of the pair inside `T_xM`.
    pub n_pairs: usize,
    /// Angles from ξ to η; `π/2` alone gives orthogonal pairs.
    pub pair_angles: Vec<f64>,
}

impl ScanGrid {
    /// `coarse` or `fine`, spread over the model chart.
    pub fn named(model: &dyn Manifold, name: &str) -> Result<Self> {
        let (fr, nd, np, vf): (&[f64], usize, usize, &[f64]) = match name {
            "coarse" => (&[0.0, 0.25, 0.5, 0.75], 4, 4, &[0.0, 0.35, 0.7]),
            "fine" => (&[0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875], 6, 6, &[0.0, 0.2, 0.4, 0.6, 0.8]),
            _ => {
                return Err(GeoError::Parse {
                    field: "grid".into(),
                    message: format!("unknown grid '{name}' (known: coarse, fine)"),
                })
            }
        };
        if model.dim() != 2 {
            return Err(GeoError::Precondition("named scan grids are defined for surfaces".into()));
        }
        let chart = model.chart();
        let coord = |k: usize, f: f64| -> f64 {
            let (lo, hi) = (chart.lower[k], chart.upper[k]);
            if chart.periods[k].is_some() {
                lo + f * (hi - lo)
            } else {
                // keep away from chart boundaries
                lo + (0.2 + 0.6 * f / 0.875f64.max(*fr.last().unwrap())) * (hi - lo)
            }
        };
        let xs = fr
            .iter()
            .map(|&f| {
                let mut p = vec![coord(0, f), coord(1, 0.05)];
                model.reduce(&mut p);
                p
            })
            .collect();
        Ok(ScanGrid {
            name: name.to_string(),
            xs,
            v_fractions: vf.to_vec(),
            n_v_dirs: nd,
            n_pairs: np,
            pair_angles: vec![PI / 2.0],
        })
    }

    /// Same grid with non-orthogonal pairs added for constant fits.
    pub fn with_oblique_pairs(mut self) -> Self {
        self.pair_angles = vec![PI / 6.0, PI / 3.0, PI / 2.0, 2.0 * PI / 3.0, 5.0 * PI / 6.0, 0.0];
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSample {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub value: f64,
    pub error_estimate: Option<f64>,
    /// `⟨ξ, η⟩_x`.
    pub inner: f64,
    pub xi_norm: f64,
    pub eta_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub grid: ScanGrid,
    pub min_value: Option<f64>,
    pub argmin: Option<ScanSample>,
    pub tolerance: f64,
    pub pass: bool,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub skipped: Vec<String>,
    pub samples: Vec<ScanSample>,
}

/// Verdict tolerance for the (MTW) scan (finite-difference noise floor).
pub const SCAN_TOLERANCE: f64 = -5e-3;

struct Job {
    x: Vec<f64>,
    v: Vec<f64>,
    t_cut: Option<f64>,
    xi: Vec<f64>,
    eta: Vec<f64>,
}

fn scan_jobs(model: &dyn Manifold, grid: &ScanGrid, opts: &MtwOptions) -> Result<(Vec<Job>, Vec<String>)> {
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for x in &grid.xs {
        let frame = orthonormal_frame(model, x, None)?;
        let comb = |a: f64, b: f64| -> Vec<f64> { (0..2).map(|k| a * frame[0][k] + b * frame[1][k]).collect() };
        let mut vs: Vec<(Vec<f64>, Option<f64>)> = Vec::new();
        if grid.v_fractions.contains(&0.0) {
            vs.push((vec![0.0; 2], None));
        }
        let fr: Vec<f64> = grid.v_fractions.iter().cloned().filter(|f| *f > 0.0).collect();
        if !fr.is_empty() {
            let ctx = CutContext::new(model, x, &opts.cut)?;
            for j in 0..grid.n_v_dirs {
                let th = 2.0 * PI * (j as f64 + 0.25) / grid.n_v_dirs as f64;
                let e = comb(th.cos(), th.sin());
                match ctx.cut_time(&e) {
                    Ok(r) => {
                        for f in &fr {
                            vs.push((e.iter().map(|c| c * f * r.t_cut).collect(), Some(r.t_cut)));
                        }
                    }
                    Err(err) => skipped.push(format!("x = {x:?}, direction {th:.4}: {err}")),
                }
            }
        }
        for (v, tc) in vs {
            for p in 0..grid.n_pairs {
                let a = PI * p as f64 / grid.n_pairs as f64;
                for &b in &grid.pair_angles {
                    jobs.push(Job {
                        x: x.clone(),
                        v: v.clone(),
                        t_cut: tc,
                        xi: comb(a.cos(), a.sin()),
                        eta: comb((a + b).cos(), (a + b).sin()),
                    });
                }
            }
        }
    }
    Ok((jobs, skipped))
}

fn run_scan(model: &dyn Manifold, grid: &ScanGrid, opts: &MtwOptions, tolerance: f64) -> Result<ScanReport> {
    let (jobs, mut skipped) = scan_jobs(model, grid, opts)?;
    let n_dir_skips = skipped.len();
    let results: Vec<std::result::Result<ScanSample, String>> = jobs
        .par_iter()
        .map(|j| {
            let ev = mtw_tensor_with_cut(model, &j.x, &j.v, &j.xi, &j.eta, opts, j.t_cut)
                .map_err(|e| format!("x = {:?}, v = {:?}: {e}", j.x, j.v))?;
            let ip = inner(model, &j.x, &j.xi, &j.eta).map_err(|e| e.to_string())?;
            Ok(ScanSample {
                x: j.x.clone(),
                v: j.v.clone(),
                xi: j.xi.clone(),
                eta: j.eta.clone(),
                value: ev.best(),
                error_estimate: ev.error_estimate,
                inner: ip,
                xi_norm: norm(model, &j.x, &j.xi).map_err(|e| e.to_string())?,
                eta_norm: norm(model, &j.x, &j.eta).map_err(|e| e.to_string())?,
            })
        })
        .collect();
    let mut samples = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => skipped.push(e),
        }
    }
    let mut argmin: Option<ScanSample> = None;
    for s in &samples {
        if s.inner.abs() > 1e-9 * s.xi_norm * s.eta_norm {
            continue;
        }
        if argmin.as_ref().map_or(true, |a| s.value < a.value) {
            argmin = Some(s.clone());
        }
    }
    let min_value = argmin.as_ref().map(|a| a.value);
    Ok(ScanReport {
        grid: grid.clone(),
        min_value,
        argmin,
        tolerance,
        pass: min_value.map_or(false, |m| m >= tolerance),
        n_evaluated: samples.len(),
        n_skipped: skipped.len() - n_dir_skips + n_dir_skips,
        skipped,
        samples,
    })
}

/// Minimum of `𝔖` over orthogonal pairs on the grid and the (MTW) verdict.
pub fn mtw_condition_scan(model: &dyn Manifold, grid: &ScanGrid, opts: &MtwOptions) -> Result<ScanReport> {
    let mut g = grid.clone();
    g.pair_angles = vec![PI / 2.0];
    run_scan(model, &g, opts, SCAN_TOLERANCE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KcFit {
    /// Largest `K` with `𝔖 ≥ −C |⟨ξ,η⟩| |ξ||η| + K |ξ|²|η|²` on the sample.
    pub k: f64,
    /// Smallest `C ≥ 0` attaining `k`.
    pub c: f64,
    pub c_cap: f64,
    /// The required `C` exceeded the cap; `k` is then the best value at the cap.
    pub cap_hit: bool,
    pub noise_floor: f64,
    pub n_samples: usize,
    pub n_skipped: usize,
}

/// Fit of MTW(K, C) from sampled values `(value, |⟨ξ,η⟩||ξ||η|, |ξ|²|η|²)`.
pub fn fit_kc(samples: &[(f64, f64, f64)], c_cap: f64, noise_floor: f64) -> KcFit {
    let is_orth = |a: f64, b: f64| a <= 1e-9 * b;
    let k_at = |c: f64| -> f64 {
        samples
            .iter()
            .map(|&(v, a, b)| (v + c * a) / b)
            .fold(f64::INFINITY, f64::min)
    };
    let k_orth = samples
        .iter()
        .filter(|s| is_orth(s.1, s.2))
        .map(|&(v, _, b)| v / b)
        .fold(f64::INFINITY, f64::min);
    let mut fit = KcFit {
        k: 0.0,
        c: 0.0,
        c_cap,
        cap_hit: false,
        noise_floor,
        n_samples: samples.len(),
        n_skipped: 0,
    };
    let c_need = if k_orth.is_finite() {
        samples
            .iter()
            .filter(|s| !is_orth(s.1, s.2))
            .map(|&(v, a, b)| (k_orth * b - v) / a)
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    if c_need <= c_cap {
        fit.k = k_orth;
        fit.c = c_need;
    } else {
        fit.cap_hit = true;
        fit.c = c_cap;
        fit.k = k_at(c_cap);
    }
    if fit.k.abs() <= noise_floor {
        fit.k = 0.0;
    }
    if fit.c <= noise_floor {
        fit.c = 0.0;
    }
    fit
}

/// MTW(K, C) constants from a scan including oblique pairs.
pub fn mtw_kc_fit(model: &dyn Manifold, grid: &ScanGrid, opts: &MtwOptions, c_cap: f64) -> Result<KcFit> {
    let mut g = grid.clone();
    if g.pair_angles.len() < 2 {
        g = g.with_oblique_pairs();
    }
    let rep = run_scan(model, &g, opts, SCAN_TOLERANCE)?;
    let pts: Vec<(f64, f64, f64)> = rep
        .samples
        .iter()
        .map(|s| (s.value, s.inner.abs() * s.xi_norm * s.eta_norm, (s.xi_norm * s.eta_norm).powi(2)))
        .collect();
    let floor = rep
        .samples
        .iter()
        .filter_map(|s| s.error_estimate)
        .fold(1e-6, f64::max);
    let mut fit = fit_kc(&pts, c_cap, floor);
    fit.n_skipped = rep.n_skipped;
    Ok(fit)
}

/// Sample set `Z` for the extended bound: radial band around the tangent cut locus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZSpec {
    pub xs: Vec<Vec<f64>>,
    pub n_dirs: usize,
    /// `|v| = fraction · t_cut` inside `I(x)`.
    pub inner_fractions: Vec<f64>,
    /// Enlargement `μ̄`: samples at `t_cut + r`, `r ∈ (0, μ̄]`.
    pub mu_bar: f64,
    pub n_outer: usize,
    /// Required distance of every sample from the tangent focal locus.
    pub nf_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdViolation {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub value: f64,
    pub rho: f64,
    pub inner: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdFit {
    /// Smallest `C` (first) and then `D` with
    /// `S̄ ≥ −C |⟨ξ,η⟩||ξ||η| − D ρ_x(v, I(x)) |ξ|²|η|²` on the sample.
    pub c: f64,
    pub d: f64,
    pub noise_floor: f64,
    pub n_samples: usize,
    pub n_skipped: usize,
    pub skipped: Vec<String>,
    pub violations: Vec<CdViolation>,
}

/// Lexicographic `(C, D)` fit from `(value, ρ, |⟨ξ,η⟩||ξ||η|, |ξ|²|η|²)` samples; orthogonal
/// samples inside `I(x)` with negative value cannot be absorbed and are violations.
pub fn fit_cd(samples: &[(f64, f64, f64, f64)], noise_floor: f64) -> (f64, f64, Vec<usize>) {
    let mut c: f64 = 0.0;
    let mut bad = Vec::new();
    for (i, &(v, rho, a, b)) in samples.iter().enumerate() {
        if rho > 0.0 || v >= -noise_floor {
            continue;
        }
        if a > 1e-9 * b {
            c = c.max(-v / a);
        } else {
            bad.push(i);
        }
    }
    let mut d: f64 = 0.0;
    for &(v, rho, a, b) in samples {
        if rho <= 0.0 {
            continue;
        }
        let need = (-v - noise_floor - c * a) / (rho * b);
        d = d.max(need);
    }
    (c, d, bad)
}

pub fn tenseurine_constants(model: &dyn Manifold, z: &ZSpec, n_pairs: usize, opts: &MtwOptions) -> Result<CdFit> {
    let mut jobs: Vec<(Vec<f64>, Vec<f64>, f64, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut skipped = Vec::new();
    for x in &z.xs {
        let frame = orthonormal_frame(model, x, None)?;
        let comb = |a: f64, b: f64| -> Vec<f64> { (0..2).map(|k| a * frame[0][k] + b * frame[1][k]).collect() };
        let ctx = CutContext::new(model, x, &opts.cut)?;
        for j in 0..z.n_dirs {
            let th = 2.0 * PI * (j as f64 + 0.25) / z.n_dirs as f64;
            let e = comb(th.cos(), th.sin());
            let rep = match ctx.cut_time(&e) {
                Ok(r) => r,
                Err(err) => {
                    skipped.push(format!("x = {x:?}, direction {th:.4}: {err}"));
                    continue;
                }
            };
            let mut lens: Vec<(f64, f64)> = z.inner_fractions.iter().map(|f| (f * rep.t_cut, 0.0)).collect();
            for k in 1..=z.n_outer {
                let r = z.mu_bar * k as f64 / z.n_outer as f64;
                lens.push((rep.t_cut + r, r));
            }
            for (len, rho) in lens {
                if let Some(tf) = rep.t_f {
                    if len > tf - z.nf_margin {
                        return Err(GeoError::InconsistentInput(format!(
                            "Z sample |v| = {len:.6} at x = {x:?} is within {} of the focal time {tf:.6}",
                            z.nf_margin
                        )));
                    }
                }
                let v: Vec<f64> = e.iter().map(|c| c * len).collect();
                for p in 0..n_pairs {
                    let a = PI * p as f64 / n_pairs as f64;
                    for b in [PI / 3.0, PI / 2.0, 2.0 * PI / 3.0] {
                        jobs.push((x.clone(), v.clone(), rho, comb(a.cos(), a.sin()), comb((a + b).cos(), (a + b).sin())));
                    }
                }
            }
        }
    }
    let results: Vec<std::result::Result<(f64, f64, f64, f64, f64), String>> = jobs
        .par_iter()
        .map(|(x, v, rho, xi, eta)| {
            let ev = extended_mtw_tensor(model, x, v, xi, eta, opts).map_err(|e| format!("x = {x:?}, v = {v:?}: {e}"))?;
            let ip = inner(model, x, xi, eta).map_err(|e| e.to_string())?;
            let nx = norm(model, x, xi).map_err(|e| e.to_string())?;
            let ne = norm(model, x, eta).map_err(|e| e.to_string())?;
            Ok((ev.best(), *rho, ip.abs() * nx * ne, (nx * ne).powi(2), ev.error_estimate.unwrap_or(0.0)))
        })
        .collect();
    let mut pts = Vec::new();
    let mut keep = Vec::new();
    let mut floor: f64 = 1e-6;
    for (r, j) in results.into_iter().zip(&jobs) {
        match r {
            Ok((v, rho, a, b, err)) => {
                floor = floor.max(err);
                pts.push((v, rho, a, b));
                keep.push(j);
            }
            Err(e) => skipped.push(e),
        }
    }
    let (c, d, bad) = fit_cd(&pts, floor);
    let violations = bad
        .into_iter()
        .map(|i| CdViolation {
            x: keep[i].0.clone(),
            v: keep[i].1.clone(),
            value: pts[i].0,
            rho: pts[i].1,
            inner: pts[i].2,
        })
        .collect();
    Ok(CdFit {
        c,
        d,
        noise_floor: floor,
        n_samples: pts.len(),
        n_skipped: skipped.len(),
        skipped,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{builtin, sectional_curvature, ChartPoint, TangentVector};

    #[test]
    fn torus_tensor_vanishes() {
        let m = builtin("torus_2pi").unwrap();
        let ev = mtw_tensor(&*m, &[1.0, 2.0], &[1.0, 0.5], &[0.6, 0.8], &[-0.3, 1.0], &MtwOptions::default()).unwrap();
        assert!(ev.best().abs() < 1e-5, "{ev:?}");
    }

    #[test]
    fn sphere_tensor_at_zero_is_curvature() {
        let m = builtin("sphere_r1").unwrap();
        let x = [1.1, 0.3];
        let f = orthonormal_frame(&*m, &x, None).unwrap();
        let ev = mtw_tensor(&*m, &x, &[0.0, 0.0], &f[0], &f[1], &MtwOptions::default()).unwrap();
        assert!((ev.best() - 1.0).abs() < 2e-3, "{ev:?}");
    }

    #[test]
    fn dumbbell_tensor_at_zero_matches_waist_curvature() {
        let m = builtin("dumbbell").unwrap();
        let x = [std::f64::consts::FRAC_PI_2, 0.3];
        let f = orthonormal_frame(&*m, &x, None).unwrap();
        let ev = mtw_tensor(&*m, &x, &[0.0, 0.0], &f[0], &f[1], &MtwOptions::default()).unwrap();
        let p = ChartPoint::new(x.to_vec());
        let tv = |c: &[f64]| TangentVector::new(p.clone(), c.to_vec());
        let k = sectional_curvature(&*m, &p, &tv(&f[0]), &tv(&f[1])).unwrap();
        assert!((ev.best() - k).abs() < 2e-3, "{} vs {k}", ev.best());
    }

    #[test]
    fn extended_cost_on_torus_is_shifted_quadratic() {
        let m = builtin("torus_2pi").unwrap();
        let ctx = ExtendedCostContext::new(&*m, &[1.0, 1.0], &[1.0, 0.0], &MtwOptions::default()).unwrap();
        let c = extended_cost(&ctx, &[1.05, 0.98], &[2.1, 1.03]).unwrap();
        let want = 0.5 * (1.05f64.powi(2) + 0.05f64.powi(2));
        assert!((c - want).abs() < 1e-12);
    }

    #[test]
    fn kc_fit_closed_examples() {
        let s = [(1.0, 0.0, 1.0), (0.5, 0.5, 1.0), (2.0, 0.0, 1.0)];
        let f = fit_kc(&s, 100.0, 1e-9);
        assert!((f.k - 1.0).abs() < 1e-12 && (f.c - 1.0).abs() < 1e-12);
        let z = [(0.0, 0.0, 1.0), (1e-8, 0.7, 1.0)];
        let f = fit_kc(&z, 100.0, 1e-6);
        assert_eq!((f.k, f.c), (0.0, 0.0));
    }
}
