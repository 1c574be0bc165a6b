//! Verification suites: a fixed battery of self-consistency checks for one manifold.
//!
//! `core` covers focal and cut times, the curvature identity of the MTW tensor at `v = 0`,
//! the Jacobi flow, segment derivatives, and the differential inequalities. `full` adds the
//! band scans around the tangent cut locus, the MTW condition scan, and convexity of the
//! sampled injectivity domains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::report::RunReport;
use super::run::{
    cut_options, h_checks, inequality_checks, mtw_options, record_domain, segment_derivatives, CUT_TOL,
    LOEPER_TOL,
};
use super::scenario::Scenario;
use crate::convexity::{domain_convexity, segment_trace, Segment, SegmentOptions};
use crate::cutlocus::{
    domain_sample_with, nonfocality_entry, summarize_nonfocality, verify_cut_distance_bound,
    verify_endpoint_comparability, Band, CutContext,
};
use crate::error::Result;
use crate::geodesic::{exp_point, steps_for};
use crate::jacobi::{default_horizon, focal_scan, integrate_fundamental, verify_jacobi_vs_exp, JacobiOptions};
use crate::manifold::{orthonormal_frame, sectional_curvature, ChartPoint, Manifold, TangentVector};
use crate::mtw::{mtw_condition_scan, mtw_tensor, ScanGrid};

pub const SYMPLECTIC_TOL: f64 = 1e-8;
pub const JACOBI_EXP_TOL: f64 = 1e-4;

fn rotate(frame: &[Vec<f64>], a: f64) -> (Vec<f64>, Vec<f64>) {
    let d = frame[0].len();
    let (s, c) = a.sin_cos();
    (
        (0..d).map(|k| c * frame[0][k] + s * frame[1][k]).collect(),
        (0..d).map(|k| -s * frame[0][k] + c * frame[1][k]).collect(),
    )
}

#[derive(Serialize)]
struct DirectionRow {
    x: Vec<f64>,
    theta: f64,
    t_cut: Option<f64>,
    t_f_jacobi: Option<f64>,
    t_f_closed_form: Option<Option<f64>>,
    cut_point_distance: Option<f64>,
}

/// Cut and focal times along `n` directions at `x`.
pub(crate) fn focal_cut_rows(m: &dyn Manifold, s: &Scenario, x: &[f64], n: usize, r: &mut RunReport) -> Result<()> {
    let ctx = CutContext::new(m, x, &cut_options(s))?;
    let jopts = JacobiOptions::default();
    let rows: Vec<Result<DirectionRow>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let e = ctx.direction(theta);
            let tv = TangentVector::new(ChartPoint::new(x.to_vec()), e.clone());
            let fr = focal_scan(m, &tv, default_horizon(m, 1.0, &jopts), &jopts)?;
            let cr = ctx.cut_time(&e)?;
            let w: Vec<f64> = e.iter().map(|c| c * cr.t_cut).collect();
            let (y, _) = exp_point(m, x, &w, steps_for(cr.t_cut, 1e-3))?;
            Ok(DirectionRow {
                x: x.to_vec(),
                theta,
                t_cut: Some(cr.t_cut),
                t_f_jacobi: fr.t_f,
                t_f_closed_form: m.analytic_focal_time(x, &e),
                cut_point_distance: Some(ctx.distance_to(&y)?.value),
            })
        })
        .collect();
    let mut ok = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        if let Some(row) = r.capture(&format!("focal_cut[{i}]"), row) {
            ok.push(row);
        }
    }
    let closed: Vec<f64> = ok
        .iter()
        .filter_map(|row| {
            row.t_f_closed_form.map(|c| match (row.t_f_jacobi, c) {
                (Some(a), Some(b)) => (a - b).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            })
        })
        .collect();
    if !closed.is_empty() {
        r.check(
            "focal_time_closed_form",
            "focal_time",
            closed.iter().cloned().fold(0.0, f64::max),
            CUT_TOL,
            closed.len(),
        );
    }
    let after: Vec<f64> = ok
        .iter()
        .filter_map(|row| Some((row.t_cut? - row.t_f_jacobi?).max(0.0)))
        .collect();
    r.check(
        "cut_not_after_focal",
        "cut_time",
        after.iter().cloned().fold(0.0, f64::max),
        CUT_TOL,
        after.len(),
    );
    let minim: Vec<f64> = ok
        .iter()
        .filter_map(|row| Some((row.cut_point_distance? - row.t_cut?).abs()))
        .collect();
    r.check(
        "cut_point_minimizing",
        "cut_time",
        minim.iter().cloned().fold(0.0, f64::max),
        CUT_TOL,
        minim.len(),
    );
    r.result("focal_cut", &ok);
    Ok(())
}

#[derive(Serialize)]
struct PairRow {
    x: Vec<f64>,
    angle: f64,
    mtw: f64,
    sectional: f64,
}

/// `𝔖_(x,0)(ξ, η)` against the sectional curvature on orthonormal pairs.
pub(crate) fn curvature_identity(m: &dyn Manifold, s: &Scenario, xs: &[Vec<f64>], per_x: usize, r: &mut RunReport) {
    let opts = mtw_options(s);
    let jobs: Vec<(Vec<f64>, f64)> = xs
        .iter()
        .flat_map(|x| (0..per_x).map(move |k| (x.clone(), std::f64::consts::PI * k as f64 / per_x as f64)))
        .collect();
    let rows: Vec<Result<PairRow>> = jobs
        .par_iter()
        .map(|(x, a)| {
            let f = orthonormal_frame(m, x, None)?;
            let (xi, eta) = rotate(&f, *a);
            let ev = mtw_tensor(m, x, &vec![0.0; x.len()], &xi, &eta, &opts)?;
            let p = ChartPoint::new(x.clone());
            let sigma = sectional_curvature(
                m,
                &p,
                &TangentVector::new(p.clone(), xi.clone()),
                &TangentVector::new(p.clone(), eta.clone()),
            )?;
            Ok(PairRow {
                x: x.clone(),
                angle: *a,
                mtw: ev.best(),
                sectional: sigma,
            })
        })
        .collect();
    let mut ok = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        if let Some(row) = r.capture(&format!("mtw_tensor[{i}]"), row) {
            ok.push(row);
        }
    }
    let worst = ok.iter().map(|p| (p.mtw - p.sectional).abs()).fold(0.0, f64::max);
    r.check("sectional_curvature_identity", "mtw_tensor", worst, LOEPER_TOL, ok.len());
    r.result("sectional_curvature_identity", &ok);
}

/// Symplectic defect of the Jacobi transfer matrix over the full focal horizon.
pub(crate) fn symplectic(m: &dyn Manifold, xs: &[Vec<f64>], per_x: usize, r: &mut RunReport) {
    let opts = JacobiOptions::default();
    let jobs: Vec<(Vec<f64>, f64)> = xs
        .iter()
        .flat_map(|x| (0..per_x).map(move |k| (x.clone(), 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / per_x as f64)))
        .collect();
    let res: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|(x, a)| {
            let f = orthonormal_frame(m, x, None)?;
            let (e, _) = rotate(&f, *a);
            let tv = TangentVector::new(ChartPoint::new(x.clone()), e);
            let sol = integrate_fundamental(m, &tv, default_horizon(m, 1.0, &opts), &opts)?;
            Ok(sol.max_symplectic_defect())
        })
        .collect();
    let mut vals = Vec::new();
    for (i, v) in res.into_iter().enumerate() {
        if let Some(v) = r.capture(&format!("symplectic_defect[{i}]"), v) {
            vals.push(v);
        }
    }
    r.check(
        "symplectic_invariance",
        "symplectic_defect",
        vals.iter().cloned().fold(0.0, f64::max),
        SYMPLECTIC_TOL,
        vals.len(),
    );
    r.result("symplectic_defect", &vals);
}

#[derive(Serialize)]
struct JacobiRow {
    x: Vec<f64>,
    v: Vec<f64>,
    h: Vec<f64>,
    t: f64,
    residual: f64,
}

/// `J₁⁰(t) h` against a difference quotient of the exponential map on seeded random data.
pub(crate) fn jacobi_vs_exp(m: &dyn Manifold, xs: &[Vec<f64>], n: usize, seed: u64, r: &mut RunReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a61_636f_6269);
    let jobs: Vec<(Vec<f64>, f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            let x = xs[rng.random_range(0..xs.len())].clone();
            (
                x,
                rng.random_range(0.0..2.0 * std::f64::consts::PI),
                rng.random_range(0.5..1.5),
                rng.random_range(0.0..2.0 * std::f64::consts::PI),
                rng.random_range(0.1..1.0),
            )
        })
        .collect();
    let opts = JacobiOptions::default();
    let rows: Vec<Result<JacobiRow>> = jobs
        .par_iter()
        .map(|(x, a, speed, b, tf)| {
            let f = orthonormal_frame(m, x, None)?;
            let (e, _) = rotate(&f, *a);
            let v: Vec<f64> = e.iter().map(|c| c * speed).collect();
            let h = vec![b.cos(), b.sin()];
            let t = tf * 1.5 * m.diameter_bound() / speed;
            let tv = TangentVector::new(ChartPoint::new(x.clone()), v.clone());
            let sol = integrate_fundamental(m, &tv, t, &opts)?;
            let residual = verify_jacobi_vs_exp(m, &sol, &h, t, 1e-5)?;
            Ok(JacobiRow {
                x: x.clone(),
                v,
                h,
                t,
                residual,
            })
        })
        .collect();
    let mut ok = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        if let Some(row) = r.capture(&format!("verify_jacobi_vs_exp[{i}]"), row) {
            ok.push(row);
        }
    }
    r.check(
        "jacobi_exp_consistency",
        "verify_jacobi_vs_exp",
        ok.iter().map(|j| j.residual).fold(0.0, f64::max),
        JACOBI_EXP_TOL,
        ok.len(),
    );
    r.result("verify_jacobi_vs_exp", &ok);
}

/// A segment well inside `I(x)` (h ≡ 0) with its derivative checks.
fn inner_segment(m: &dyn Manifold, s: &Scenario, x: &[f64], r: &mut RunReport) -> Result<()> {
    let ctx = CutContext::new(m, x, &cut_options(s))?;
    let (e0, e1) = (ctx.direction(0.3), ctx.direction(1.2));
    let reach = ctx.cut_time(&e0)?.t_cut.min(ctx.cut_time(&e1)?.t_cut);
    let v0: Vec<f64> = e0.iter().map(|c| 0.5 * reach * c).collect();
    let v1: Vec<f64> = e1.iter().map(|c| 0.5 * reach * c).collect();
    let opts = SegmentOptions {
        cut: cut_options(s),
        seed: s.seed,
        ..SegmentOptions::default()
    };
    let tr = segment_trace(m, x, &v0, &v1, 32, &opts)?;
    h_checks(r, &tr);
    let seg = Segment::with_context(ctx, &tr.v0, &tr.v1, &opts)?;
    segment_derivatives(r, &seg, 10, 0, None);
    Ok(())
}

#[derive(Serialize)]
struct CoherenceFinding {
    mtw_pass: bool,
    nonfocal: bool,
    convex_at_all_x: bool,
    xs: Vec<Vec<f64>>,
}

pub fn verify(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let suite = s.suite.as_deref().unwrap_or("core");
    let grid = ScanGrid::named(m, s.grid.as_deref().unwrap_or("coarse"))?;
    let xs = match &s.x {
        Some(x) => vec![x.clone()],
        None => grid.xs.clone(),
    };
    let res = focal_cut_rows(m, s, &xs[0], 32, r);
    r.capture("focal_cut", res);
    curvature_identity(m, s, &xs, (16 / xs.len()).max(1), r);
    symplectic(m, &xs, (16 / xs.len()).max(1), r);
    jacobi_vs_exp(m, &xs, 50, s.seed, r);
    let res = inner_segment(m, s, &xs[0], r);
    r.capture("segment_trace", res);
    inequality_checks(r, s.trials.unwrap_or(1000), s.seed);
    if suite == "core" {
        return Ok(());
    }
    let n = s.n.unwrap_or(360);
    let opts = cut_options(s);
    let band = Band::default();
    let mut convex_all = true;
    let mut entries = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        let Some(ctx) = r.capture("cut_context", CutContext::new(m, x, &opts)) else {
            continue;
        };
        let Some(sample) = r.capture(&format!("domain_sample[{i}]"), domain_sample_with(&ctx, n)) else {
            convex_all = false;
            continue;
        };
        record_domain(r, &format!("domain_sample[{i}]"), &sample);
        entries.push(nonfocality_entry(&sample));
        match r.capture(&format!("semiconvexity_test[{i}]"), domain_convexity(&sample, s.tol.unwrap_or(1e-6))) {
            Some(c) => {
                convex_all &= c.convex;
                r.finding("convex_injectivity_domain", &format!("semiconvexity_test[{i}]"), c.convex, &c);
            }
            None => convex_all = false,
        }
        if i == 0 {
            if let Some(b) = r.capture("verify_lem1", verify_cut_distance_bound(&ctx, &sample, &band, false)) {
                r.check("cut_distance_bound", "verify_lem1", b.violations.len() as f64, 0.0, b.n_samples);
                r.result("verify_lem1", &b);
            }
            if let Some(b) = r.capture("verify_lem2", verify_endpoint_comparability(&ctx, &sample, &band, None)) {
                r.check("endpoint_comparability", "verify_lem2", b.violations.len() as f64, 0.0, b.n_samples);
                r.result("verify_lem2", &b);
            }
        }
    }
    let nf = summarize_nonfocality(entries, opts.focal_tol);
    r.finding("nonfocal", "nonfocality_report", nf.nonfocal, &nf);
    let scan = r.capture("mtw_condition_scan", mtw_condition_scan(m, &grid, &mtw_options(s)));
    let mtw_pass = scan.as_ref().is_some_and(|sc| sc.pass);
    if let Some(sc) = &scan {
        r.finding("mtw_condition", "mtw_condition_scan", sc.pass, &sc.argmin);
    }
    // sampled form of "nonfocal and MTW imply convex injectivity domains"
    r.finding(
        "mtw_convexity_coherence",
        "verify",
        !(mtw_pass && nf.nonfocal) || convex_all,
        &CoherenceFinding {
            mtw_pass,
            nonfocal: nf.nonfocal,
            convex_at_all_x: convex_all,
            xs,
        },
    );
    Ok(())
}
