//! Segments `v_t = (1−t)v₀ + t v₁` in `T_xM`, the excess function
//! `h(t) = |v_t|²/2 − d(x, exp_x v_t)²/2` with its derivative identities, differential
//! inequalities, and convexity tests of injectivity domains.

pub mod ineq;
pub mod sets;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ineq::{
    check_lemineq, check_lemineqbis, check_lemineqbism, detect_kinks, run_generator, ConcaveVariantCheck,
    DiffIneqCheck, Family, GeneratorReport,
};
pub use sets::{function_semiconvexity, semiconvexity_test, SemiconvexityReport, StarSet};

use crate::cutlocus::{CutContext, CutOptions, DomainSample};
use crate::error::{GeoError, Result};
use crate::geodesic::{csv_err, exp_point, exp_with_jacobian, fmt_num, steps_for};
use crate::manifold::{inner, norm, Manifold};
use crate::mtw::{extended_mtw_tensor, MtwOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub cut: CutOptions,
    /// RK4 step for `exp_x(v_t)`.
    pub step: f64,
    /// Required gap `t_cut − |v_i|` at the endpoints.
    pub endpoint_margin: f64,
    /// Genericity retries with perturbed endpoints.
    pub retries: usize,
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            cut: CutOptions::default(),
            step: 1e-3,
            endpoint_margin: 1e-6,
            retries: 5,
            perturbation: 1e-4,
            seed: 0,
        }
    }
}

/// Quantities attached to one time of a segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSample {
    pub t: f64,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    /// `d_{v_t} exp_x (v₁ − v₀)`.
    pub ydot: Vec<f64>,
    /// `−d_{v_t} exp_x (v_t)`: minus the final velocity of `s ↦ exp_x(s v_t)`.
    pub qbar: Vec<f64>,
    /// Velocity at `y_t` of the minimizing geodesic to `x` (unique minimizer only).
    pub q: Option<Vec<f64>>,
    pub dist: f64,
    pub h: f64,
    pub multiplicity: usize,
}

/// Segment evaluator holding the distance machinery from `x`.
pub struct Segment<'a> {
    model: &'a dyn Manifold,
    ctx: CutContext<'a>,
    pub x: Vec<f64>,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    n_steps: usize,
}

impl<'a> Segment<'a> {
    pub fn new(model: &'a dyn Manifold, x: &[f64], v0: &[f64], v1: &[f64], opts: &SegmentOptions) -> Result<Self> {
        let ctx = CutContext::new(model, x, &opts.cut)?;
        Self::with_context(ctx, v0, v1, opts)
    }

    pub fn with_context(ctx: CutContext<'a>, v0: &[f64], v1: &[f64], opts: &SegmentOptions) -> Result<Self> {
        let model = ctx.model();
        let x = ctx.base().to_vec();
        for (name, v) in [("v0", v0), ("v1", v1)] {
            let l = norm(model, &x, v)?;
            if l == 0.0 {
                continue;
            }
            let e: Vec<f64> = v.iter().map(|c| c / l).collect();
            let tc = ctx.cut_time(&e)?.t_cut;
            if l > tc - opts.endpoint_margin {
                return Err(GeoError::Precondition(format!(
                    "{name} = {v:?} is not inside I(x): |{name}| = {l:.6}, t_cut = {tc:.6}"
                )));
            }
        }
        let len = norm(model, &x, v0)?.max(norm(model, &x, v1)?);
        Ok(Segment {
            model,
            ctx,
            x,
            v0: v0.to_vec(),
            v1: v1.to_vec(),
            n_steps: steps_for(len + 0.1, opts.step),
        })
    }

    pub fn model(&self) -> &'a dyn Manifold {
        self.model
    }

    pub fn context(&self) -> &CutContext<'a> {
        &self.ctx
    }

    pub fn v_at(&self, t: f64) -> Vec<f64> {
        self.v0.iter().zip(&self.v1).map(|(a, b)| (1.0 - t) * a + t * b).collect()
    }

    /// `h(t)` alone.
    pub fn h(&self, t: f64) -> Result<f64> {
        let v = self.v_at(t);
        let (y, _) = exp_point(self.model, &self.x, &v, self.n_steps)?;
        let d = self.ctx.distance_to(&y)?;
        if !d.converged {
            return Err(GeoError::UnresolvedCut {
                lo: t,
                hi: t,
                reason: "distance did not converge".into(),
            });
        }
        let l = norm(self.model, &self.x, &v)?;
        Ok(0.5 * l * l - 0.5 * d.value * d.value)
    }

    pub fn sample(&self, t: f64) -> Result<SegmentSample> {
        let m = self.model;
        let d = m.dim();
        let v = self.v_at(t);
        let (y, vel) = exp_point(m, &self.x, &v, self.n_steps)?;
        let (_, jac) = exp_with_jacobian(m, &self.x, &v, self.n_steps)?;
        let dv: Vec<f64> = self.v1.iter().zip(&self.v0).map(|(a, b)| a - b).collect();
        let ydot: Vec<f64> = (0..d).map(|k| (0..d).map(|c| jac[(k, c)] * dv[c]).sum()).collect();
        let dist = self.ctx.distance_to(&y)?;
        if !dist.converged {
            return Err(GeoError::UnresolvedCut {
                lo: t,
                hi: t,
                reason: "distance did not converge".into(),
            });
        }
        let q = if dist.multiplicity == 1 && !dist.capped {
            let w = &dist.minimizer_velocity;
            let lw = norm(m, &self.x, w)?;
            let (_, fv) = exp_point(m, &self.x, w, steps_for(lw + 0.1, 1e-3))?;
            Some(fv.iter().map(|c| -c).collect())
        } else {
            None
        };
        let l = norm(m, &self.x, &v)?;
        Ok(SegmentSample {
            t,
            v,
            y,
            ydot,
            qbar: vel.iter().map(|c| -c).collect(),
            q,
            dist: dist.value,
            h: 0.5 * l * l - 0.5 * dist.value * dist.value,
            multiplicity: if dist.capped { usize::MAX } else { dist.multiplicity },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrace {
    pub x: Vec<f64>,
    pub v0: Vec<f64>,
    pub v1: Vec<f64>,
    pub samples: Vec<SegmentSample>,
    /// Samples whose distance could not be resolved.
    pub unresolved: Vec<f64>,
    pub kinks: Vec<f64>,
    /// Number of perturbed re-runs needed for a generic trace.
    pub retries_used: usize,
}

impl SegmentTrace {
    pub fn t_grid(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn h_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.h).collect()
    }

    pub fn max_h(&self) -> f64 {
        self.samples.iter().map(|s| s.h).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with `t, v_t, y_t, q_t, q̄_t, h` (empty `q` where undefined).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.x.len();
        let mut head = vec!["t".to_string()];
        for p in ["v", "y", "q", "qbar"] {
            for k in 0..d {
                head.push(format!("{p}{k}"));
            }
        }
        head.push("h".into());
        w.write_record(&head).map_err(csv_err)?;
        for s in &self.samples {
            let mut row = vec![fmt_num(s.t)];
            row.extend(s.v.iter().map(|c| fmt_num(*c)));
            row.extend(s.y.iter().map(|c| fmt_num(*c)));
            match &s.q {
                Some(q) => row.extend(q.iter().map(|c| fmt_num(*c))),
                None => row.extend((0..d).map(|_| String::new())),
            }
            row.extend(s.qbar.iter().map(|c| fmt_num(*c)));
            row.push(fmt_num(s.h));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Longest run of consecutive kink indices.
fn widest_plateau(kinks: &[usize]) -> usize {
    let mut best = 0;
    let mut run = 0;
    let mut prev: Option<usize> = None;
    for &k in kinks {
        run = if prev.is_some_and(|p| p + 1 == k) { run + 1 } else { 1 };
        best = best.max(run);
        prev = Some(k);
    }
    best
}

fn trace_once(seg: &Segment, n: usize) -> SegmentTrace {
    let ts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let res: Vec<(f64, Result<SegmentSample>)> = ts.par_iter().map(|&t| (t, seg.sample(t))).collect();
    let mut samples = Vec::new();
    let mut unresolved = Vec::new();
    for (t, r) in res {
        match r {
            Ok(s) => samples.push(s),
            Err(_) => unresolved.push(t),
        }
    }
    let h: Vec<f64> = samples.iter().map(|s| s.h).collect();
    let (k, _) = detect_kinks(&h);
    SegmentTrace {
        x: seg.x.clone(),
        v0: seg.v0.clone(),
        v1: seg.v1.clone(),
        kinks: k.iter().map(|&i| samples[i].t).collect(),
        samples,
        unresolved,
        retries_used: 0,
    }
}

/// Sample the segment on `n` uniform times; non-generic traces (kink plateaus wider than 3
/// samples) are re-run with slightly perturbed endpoints.
pub fn segment_trace(
    model: &dyn Manifold,
    x: &[f64],
    v0: &[f64],
    v1: &[f64],
    n: usize,
    opts: &SegmentOptions,
) -> Result<SegmentTrace> {
    if n < 32 {
        return Err(GeoError::Precondition(format!("segment traces need N >= 32, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let seg = Segment::new(model, x, v0, v1, opts)?;
    let mut tr = trace_once(&seg, n);
    let mut tries = 0;
    while tries < opts.retries {
        let h: Vec<f64> = tr.samples.iter().map(|s| s.h).collect();
        let (k, _) = detect_kinks(&h);
        if widest_plateau(&k) <= 3 {
            break;
        }
        tries += 1;
        let mut p = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|c| c + opts.perturbation * rng.random_range(-1.0..1.0)).collect()
        };
        let (a, b) = (p(v0), p(v1));
        let seg = Segment::new(model, x, &a, &b, opts)?;
        tr = trace_once(&seg, n);
    }
    tr.retries_used = tries;
    Ok(tr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub t: f64,
    pub formula: f64,
    pub fd: f64,
    pub fd_step: f64,
}

impl DerivativeCheck {
    pub fn error(&self) -> f64 {
        (self.formula - self.fd).abs()
    }
}

/// Reject `t` when the minimizer to `y_t` is not unique or jumps across the stencil.
fn smooth_samples(seg: &Segment, t: f64, step: f64) -> Result<[SegmentSample; 3]> {
    let a = seg.sample(t - step)?;
    let b = seg.sample(t)?;
    let c = seg.sample(t + step)?;
    let (Some(qa), Some(qb), Some(qc)) = (&a.q, &b.q, &c.q) else {
        return Err(GeoError::Kink { t });
    };
    let m = seg.model;
    let gap = |p: &[f64], q: &[f64]| -> f64 { p.iter().zip(q).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max) };
    let speed = norm(m, &b.y, &b.ydot)? + 1.0;
    let lim = 100.0 * step * speed * (1.0 + norm(m, &b.y, qb)?);
    if gap(qa, qb) > lim || gap(qc, qb) > lim {
        return Err(GeoError::Kink { t });
    }
    Ok([a, b, c])
}

/// `ḣ(t) = ⟨q_t − q̄_t, ẏ_t⟩` against a centered difference of `h` with step `fd_step`.
pub fn hdot_check(seg: &Segment, t: f64, fd_step: f64) -> Result<DerivativeCheck> {
    let [a, b, c] = smooth_samples(seg, t, fd_step)?;
    let q = b.q.as_ref().unwrap();
    let diff: Vec<f64> = q.iter().zip(&b.qbar).map(|(p, r)| p - r).collect();
    let formula = inner(seg.model, &b.y, &diff, &b.ydot)?;
    Ok(DerivativeCheck {
        t,
        formula,
        fd: (c.h - a.h) / (2.0 * fd_step),
        fd_step,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondDerivativeCheck {
    pub check: DerivativeCheck,
    pub quadrature_n: usize,
    /// Smallest `t_f(y_t, q/|q|) − |q|` over the quadrature nodes (`None` when no focal time).
    pub nf_margin: Option<f64>,
    /// Formula value with twice the quadrature nodes, when requested.
    pub refined: Option<f64>,
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn hddot_formula(
    seg: &Segment,
    s: &SegmentSample,
    quadrature_n: usize,
    mtw: &MtwOptions,
    nf_margin: f64,
) -> Result<(f64, Option<f64>)> {
    let m = seg.model;
    let q = s.q.as_ref().ok_or(GeoError::Kink { t: s.t })?;
    let diff: Vec<f64> = q.iter().zip(&s.qbar).map(|(p, r)| p - r).collect();
    if diff.iter().all(|c| c.abs() < 1e-12) {
        return Ok((0.0, None));
    }
    let (nodes, weights) = gauss_legendre(quadrature_n);
    let ctx_y = CutContext::new(m, &s.y, &seg.ctx.opts)?;
    let evals: Vec<Result<(f64, Option<f64>)>> = nodes
        .par_iter()
        .zip(&weights)
        .map(|(&u, &wt)| {
            let qs: Vec<f64> = s.qbar.iter().zip(q).map(|(a, b)| (1.0 - u) * a + u * b).collect();
            let l = norm(m, &s.y, &qs)?;
            let margin = if l > 0.0 {
                let e: Vec<f64> = qs.iter().map(|c| c / l).collect();
                ctx_y.focal_time(&e)?.map(|tf| tf - l)
            } else {
                None
            };
            if margin.is_some_and(|g| g < nf_margin) {
                return Err(GeoError::Hypothesis(format!(
                    "[q̄_t, q_t] leaves NF(y_t) at t = {}: focal margin {:.3e}",
                    s.t,
                    margin.unwrap()
                )));
            }
            let ev = extended_mtw_tensor(m, &s.y, &qs, &s.ydot, &diff, mtw)?;
            Ok((wt * (1.0 - u) * ev.best(), margin))
        })
        .collect();
    let mut acc = 0.0;
    let mut mmin: Option<f64> = None;
    for e in evals {
        let (v, g) = e?;
        acc += v;
        if let Some(g) = g {
            mmin = Some(mmin.map_or(g, |p: f64| p.min(g)));
        }
    }
    Ok((2.0 / 3.0 * acc, mmin))
}

/// `ḧ(t) = (2/3) ∫₀¹ (1−s) S̄_{(y_t, (1−s)q̄_t + s q_t)}(ẏ_t, q_t − q̄_t) ds` by Gauss–Legendre
/// quadrature of the extended tensor, against a second difference of `h`.
pub fn hddot_check(
    seg: &Segment,
    t: f64,
    quadrature_n: usize,
    fd_step: f64,
    mtw: &MtwOptions,
    refine: bool,
) -> Result<SecondDerivativeCheck> {
    let [a, b, c] = smooth_samples(seg, t, fd_step)?;
    let nf_margin = mtw.cut_margin * mtw.step;
    let (formula, margin) = hddot_formula(seg, &b, quadrature_n, mtw, nf_margin)?;
    let refined = if refine {
        Some(hddot_formula(seg, &b, 2 * quadrature_n, mtw, nf_margin)?.0)
    } else {
        None
    };
    Ok(SecondDerivativeCheck {
        check: DerivativeCheck {
            t,
            formula,
            fd: (c.h - 2.0 * b.h + a.h) / (fd_step * fd_step),
            fd_step,
        },
        quadrature_n,
        nf_margin: margin,
        refined,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipControlReport {
    /// Smallest `K` with `ρ_x(v_t, I(x)) ≤ K |v₁ − v₀|` on the sample.
    pub k_base: f64,
    /// Smallest `K` with `ρ_{y_t}(q̄_t, I(y_t)) ≤ K |v₁ − v₀|` on the sample.
    pub k_end: f64,
    pub k_fit: f64,
    pub n_samples: usize,
    pub skipped: usize,
}

/// Fit the constant in `v_t ∈ I^{K|v₁−v₀|}(x)` and `q̄_t ∈ I^{K|v₁−v₀|}(y_t)`.
pub fn verify_lipcontrol(
    model: &dyn Manifold,
    sample: &DomainSample,
    pairs: &[(Vec<f64>, Vec<f64>)],
    n_t: usize,
    opts: &CutOptions,
) -> Result<LipControlReport> {
    let x = &sample.x;
    let mut jobs = Vec::new();
    for (i, (v0, v1)) in pairs.iter().enumerate() {
        for k in 1..n_t {
            jobs.push((i, v0, v1, k as f64 / n_t as f64));
        }
    }
    let res: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(_, v0, v1, t)| {
            let dv: Vec<f64> = v1.iter().zip(v0).map(|(a, b)| a - b).collect();
            let len = norm(model, x, &dv)?;
            let v: Vec<f64> = v0.iter().zip(v1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            let tv = crate::manifold::TangentVector::new(crate::manifold::ChartPoint::new(x.clone()), v.clone());
            let rho_x = crate::cutlocus::radial_distance_to_domain(model, sample, &tv)?;
            let lv = norm(model, x, &v)?;
            let (y, vel) = exp_point(model, x, &v, steps_for(lv + 0.1, opts.distance.step))?;
            let qbar: Vec<f64> = vel.iter().map(|c| -c).collect();
            let lq = norm(model, &y, &qbar)?;
            let rho_y = if lq > 0.0 {
                let cy = CutContext::new(model, &y, opts)?;
                let e: Vec<f64> = qbar.iter().map(|c| c / lq).collect();
                (lq - cy.cut_time(&e)?.t_cut).max(0.0)
            } else {
                0.0
            };
            if len == 0.0 {
                return Ok((0.0, 0.0));
            }
            Ok((rho_x / len, rho_y / len))
        })
        .collect();
    let mut rep = LipControlReport {
        k_base: 0.0,
        k_end: 0.0,
        k_fit: 0.0,
        n_samples: 0,
        skipped: 0,
    };
    for r in res {
        match r {
            Ok((a, b)) => {
                rep.n_samples += 1;
                rep.k_base = rep.k_base.max(a);
                rep.k_end = rep.k_end.max(b);
            }
            Err(_) => rep.skipped += 1,
        }
    }
    rep.k_fit = rep.k_base.max(rep.k_end);
    Ok(rep)
}

/// Convexity verdict for `I(x)` from a domain sample.
pub fn domain_convexity(sample: &DomainSample, tol: f64) -> Result<SemiconvexityReport> {
    semiconvexity_test(&StarSet::from_domain(sample)?, None, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::builtin;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(7)).sum();
        assert!((s - 0.125).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn torus_segment_has_zero_excess() {
        let m = builtin("torus_2pi").unwrap();
        let tr = segment_trace(&*m, &[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0], 32, &SegmentOptions::default()).unwrap();
        for s in &tr.samples {
            assert!(s.h.abs() < 1e-12);
            let q = s.q.as_ref().unwrap();
            for k in 0..2 {
                assert!((q[k] + s.v[k]).abs() < 1e-12 && (s.qbar[k] + s.v[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_segment_inside_ball_has_zero_excess() {
        let m = builtin("sphere_r1").unwrap();
        let x = [1.1, 0.3];
        let ctx = CutContext::new(&*m, &x, &CutOptions::default()).unwrap();
        let v0 = ctx.direction(0.2);
        let v1 = ctx.direction(0.2 + std::f64::consts::PI / 3.0);
        let tr = segment_trace(&*m, &x, &v0, &v1, 32, &SegmentOptions::default()).unwrap();
        assert!(tr.samples.iter().all(|s| s.h.abs() < 1e-10));
    }

    #[test]
    fn endpoint_outside_domain_is_rejected() {
        let m = builtin("torus_2pi").unwrap();
        let r = segment_trace(&*m, &[0.0, 0.0], &[3.5, 0.0], &[0.0, 1.0], 32, &SegmentOptions::default());
        assert!(matches!(r, Err(GeoError::Precondition(_))));
    }
}
