//! Execution of single commands into a run report.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::report::RunReport;
use super::scenario::{Command, Scenario};
use super::suite;
use crate::convexity::{
    domain_convexity, hddot_check, hdot_check, run_generator, segment_trace, Family, Segment, SegmentOptions,
};
use crate::cutlocus::{
    domain_sample_with, nonfocality_entry, summarize_nonfocality, CutContext, CutOptions, DomainSample,
};
use crate::error::{GeoError, Result};
use crate::geodesic::{exp_map, exp_point, parallel_frame, steps_for, trace_geodesic, DEFAULT_STEP};
use crate::jacobi::{default_horizon, focal_scan, integrate_fundamental, JacobiOptions};
use crate::manifold::{
    inner, norm, orthonormal_frame, sectional_curvature, ChartPoint, Manifold, ManifoldModel, TangentVector,
};
use crate::mtw::{extended_mtw_tensor, mtw_condition_scan, mtw_tensor, MtwOptions, ScanGrid};

/// Default tolerances of the self-consistency checks.
pub const SPEED_TOL: f64 = 1e-8;
pub const CUT_TOL: f64 = 1e-6;
pub const LOEPER_TOL: f64 = 2e-3;
pub const HDOT_TOL: f64 = 1e-4;
pub const HDDOT_TOL: f64 = 5e-3;
pub const H_TOL: f64 = 1e-8;

pub(crate) fn write_artifact(
    report: &mut RunReport,
    path: &Path,
    f: impl FnOnce(BufWriter<File>) -> Result<()>,
) {
    let op = format!("write {}", path.display());
    let r = (|| {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        f(BufWriter::new(File::create(path)?))
    })();
    if report.capture(&op, r).is_some() {
        report.artifacts.push(path.display().to_string());
    }
}

pub(crate) fn out_file(s: &Scenario, name: &str) -> Option<PathBuf> {
    s.out.as_ref().map(|d| d.join(name))
}

fn require<'a>(v: &'a Option<Vec<f64>>, field: &str) -> Result<&'a [f64]> {
    v.as_deref().ok_or_else(|| GeoError::Parse {
        field: field.into(),
        message: "missing".into(),
    })
}

/// `v` as given, or the unit vector at angle `theta` in the orthonormal frame at `x`.
fn direction(m: &dyn Manifold, x: &[f64], s: &Scenario) -> Result<Vec<f64>> {
    if let Some(v) = &s.v {
        return Ok(v.clone());
    }
    let th = s.theta.ok_or_else(|| GeoError::Parse {
        field: "v".into(),
        message: "missing (give 'v' or 'theta')".into(),
    })?;
    let f = orthonormal_frame(m, x, None)?;
    Ok((0..x.len()).map(|k| th.cos() * f[0][k] + th.sin() * f[1][k]).collect())
}

fn unit(m: &dyn Manifold, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let l = norm(m, x, v)?;
    if !(l > 0.0) {
        return Err(GeoError::Degenerate("direction must be nonzero".into()));
    }
    Ok(v.iter().map(|c| c / l).collect())
}

pub(crate) fn cut_options(s: &Scenario) -> CutOptions {
    let mut o = CutOptions::default();
    if let Some(step) = s.step {
        o.distance.step = step;
        o.jacobi.step = step;
    }
    o
}

#[derive(Serialize)]
struct ExpSummary {
    endpoint: Vec<f64>,
    final_velocity: Vec<f64>,
    t: f64,
    speed: f64,
    samples: usize,
    speed_drift: f64,
    frame_defect: f64,
}

fn geodesic(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let x = require(&s.x, "x")?;
    let v = direction(m, x, s)?;
    let t = s.t.unwrap_or(1.0);
    let step = s.step.unwrap_or(DEFAULT_STEP);
    let tv = TangentVector::new(ChartPoint::new(x.to_vec()), v);
    let (p, w) = exp_map(m, &tv, t, step)?;
    let trace = parallel_frame(m, &trace_geodesic(m, &tv, t, step)?)?;
    let sum = ExpSummary {
        endpoint: p.coords,
        final_velocity: w.components,
        t,
        speed: trace.speed,
        samples: trace.grid.len(),
        speed_drift: trace.speed_drift(m)?,
        frame_defect: trace.frame_defect(m)?,
    };
    let tol = s.tol.unwrap_or(SPEED_TOL);
    r.check("speed_conservation", "exp_map", sum.speed_drift, tol, sum.samples);
    r.check("parallel_frame_orthonormality", "parallel_frame", sum.frame_defect, tol, sum.samples);
    r.result("exp_map", &sum);
    if let Some(path) = out_file(s, "geodesic.csv") {
        write_artifact(r, &path, |w| trace.write_csv(w));
    }
    Ok(())
}

fn focal(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let x = require(&s.x, "x")?;
    let v = direction(m, x, s)?;
    let mut opts = JacobiOptions::default();
    if let Some(step) = s.step {
        opts.step = step;
    }
    let tv = TangentVector::new(ChartPoint::new(x.to_vec()), v.clone());
    let speed = tv.norm(m)?;
    let horizon = default_horizon(m, speed, &opts);
    let rep = focal_scan(m, &tv, horizon, &opts)?;
    if let Some(exact) = m.analytic_focal_time(x, &v) {
        let err = match (rep.t_f, exact) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        r.check("focal_time_closed_form", "focal_time", err, s.tol.unwrap_or(CUT_TOL), 1);
    }
    if let Some(path) = out_file(s, "jacobi.csv") {
        let t_max = rep.t_f.unwrap_or(horizon);
        if let Some(sol) = r.capture("integrate_fundamental", integrate_fundamental(m, &tv, t_max, &opts)) {
            write_artifact(r, &path, |w| sol.write_csv(w));
        }
    }
    r.result("focal_time", &rep);
    Ok(())
}

fn cut(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let x = require(&s.x, "x")?;
    let e = unit(m, x, &direction(m, x, s)?)?;
    let ctx = CutContext::new(m, x, &cut_options(s))?;
    let rep = ctx.cut_time(&e)?;
    let tol = s.tol.unwrap_or(CUT_TOL);
    let w: Vec<f64> = e.iter().map(|c| c * rep.t_cut).collect();
    let (y, _) = exp_point(m, x, &w, steps_for(rep.t_cut, 1e-3))?;
    let d = ctx.distance_to(&y)?;
    r.check("cut_point_minimizing", "cut_time", (d.value - rep.t_cut).abs(), tol, 1);
    if let Some(tf) = rep.t_f {
        r.check("cut_not_after_focal", "cut_time", (rep.t_cut - tf).max(0.0), tol, 1);
    }
    r.result("cut_time", &rep);
    Ok(())
}

#[derive(Serialize)]
struct DomainSummary {
    injectivity_estimate: Option<f64>,
    min_focal_time: Option<f64>,
    unresolved: usize,
}

pub(crate) fn record_domain(r: &mut RunReport, op: &str, sample: &DomainSample) {
    for (i, e) in sample.errors.iter().enumerate() {
        if let Some(msg) = e {
            r.errors.push(super::report::ErrorEntry {
                operation: format!("{op}[{i}]"),
                kind: "direction_unresolved".into(),
                message: msg.clone(),
            });
        }
    }
}

fn domain(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let x = require(&s.x, "x")?;
    let opts = cut_options(s);
    let ctx = CutContext::new(m, x, &opts)?;
    let sample = domain_sample_with(&ctx, s.n.unwrap_or(360))?;
    record_domain(r, "domain_sample", &sample);
    let nf = summarize_nonfocality(vec![nonfocality_entry(&sample)], opts.focal_tol);
    r.finding("nonfocal", "nonfocality_report", nf.nonfocal, &nf);
    r.result(
        "domain_summary",
        &DomainSummary {
            injectivity_estimate: sample.injectivity_estimate(),
            min_focal_time: sample.min_focal_time(),
            unresolved: sample.t_cut.iter().filter(|t| t.is_none()).count(),
        },
    );
    if let Some(path) = out_file(s, "domain.csv") {
        write_artifact(r, &path, |w| sample.write_csv(w));
    }
    if let Some(path) = s.svg.clone().or_else(|| out_file(s, "domain.svg")) {
        write_artifact(r, &path, |mut w| {
            use std::io::Write;
            w.write_all(sample.to_svg().as_bytes())?;
            Ok(())
        });
    }
    r.result("domain_sample", &sample);
    Ok(())
}

pub(crate) fn mtw_options(s: &Scenario) -> MtwOptions {
    let mut o = MtwOptions::default();
    if let Some(step) = s.step {
        o.step = step;
    }
    o
}

fn mtw_scan(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let grid = ScanGrid::named(m, s.grid.as_deref().unwrap_or("coarse"))?;
    let rep = mtw_condition_scan(m, &grid, &mtw_options(s))?;
    #[derive(Serialize)]
    struct Verdict<'a> {
        min_value: Option<f64>,
        tolerance: f64,
        argmin: &'a Option<crate::mtw::ScanSample>,
        n_evaluated: usize,
        n_skipped: usize,
    }
    r.finding(
        "mtw_condition",
        "mtw_condition_scan",
        rep.pass,
        &Verdict {
            min_value: rep.min_value,
            tolerance: rep.tolerance,
            argmin: &rep.argmin,
            n_evaluated: rep.n_evaluated,
            n_skipped: rep.n_skipped,
        },
    );
    r.result("mtw_condition_scan", &rep);
    Ok(())
}

fn tensor(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let x = require(&s.x, "x")?;
    let xi = require(&s.xi, "xi")?;
    let eta = require(&s.eta, "eta")?;
    let v = s.v.clone().unwrap_or_else(|| vec![0.0; x.len()]);
    let opts = mtw_options(s);
    let std_eval = r.capture("mtw_tensor", mtw_tensor(m, x, &v, xi, eta, &opts));
    if let Some(ev) = &std_eval {
        if v.iter().all(|c| *c == 0.0) {
            let p = ChartPoint::new(x.to_vec());
            let a = TangentVector::new(p.clone(), xi.to_vec());
            let b = TangentVector::new(p.clone(), eta.to_vec());
            let area2 = norm(m, x, xi)?.powi(2) * norm(m, x, eta)?.powi(2) - inner(m, x, xi, eta)?.powi(2);
            if let Some(sigma) = r.capture("sectional_curvature", sectional_curvature(m, &p, &a, &b)) {
                let err = (ev.best() - sigma * area2).abs();
                r.check("sectional_curvature_identity", "mtw_tensor", err, s.tol.unwrap_or(LOEPER_TOL), 1);
            }
        }
        r.result("mtw_tensor", ev);
    }
    if let Some(ev) = r.capture("extended_mtw_tensor", extended_mtw_tensor(m, x, &v, xi, eta, &opts)) {
        r.result("extended_mtw_tensor", &ev);
    }
    Ok(())
}

/// Interior times on `n` points spread over `(0, 1)`.
pub(crate) fn interior_times(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

#[derive(Serialize)]
struct DerivativeSummary<T> {
    checks: Vec<T>,
    skipped: Vec<String>,
}

/// ḣ and ḧ identity checks on a segment, recorded under the given check ids.
pub(crate) fn segment_derivatives(
    r: &mut RunReport,
    seg: &Segment,
    n_hdot: usize,
    n_hddot: usize,
    hdot_times: Option<&[f64]>,
) {
    let times = hdot_times.map(|t| t.to_vec()).unwrap_or_else(|| interior_times(n_hdot));
    let mut sum = DerivativeSummary {
        checks: Vec::new(),
        skipped: Vec::new(),
    };
    for &t in &times {
        match hdot_check(seg, t, 1e-4) {
            Ok(c) => sum.checks.push(c),
            Err(e @ GeoError::Kink { .. }) => sum.skipped.push(e.to_string()),
            Err(e) => r.error(&format!("hdot_check[t={t}]"), &e),
        }
    }
    let worst = sum.checks.iter().map(|c| c.error()).fold(0.0, f64::max);
    r.check("hdot_formula", "hdot_check", worst, HDOT_TOL, sum.checks.len());
    r.result("hdot_check", &sum);
    if n_hddot == 0 {
        return;
    }
    let opts = MtwOptions {
        substeps: 2,
        ..MtwOptions::default()
    };
    let mut sum2 = DerivativeSummary {
        checks: Vec::new(),
        skipped: Vec::new(),
    };
    for t in (1..=n_hddot).map(|k| k as f64 / (n_hddot + 1) as f64) {
        match hddot_check(seg, t, 16, 1e-3, &opts, false) {
            Ok(c) => sum2.checks.push(c),
            Err(e @ (GeoError::Kink { .. } | GeoError::Hypothesis(_))) => sum2.skipped.push(e.to_string()),
            Err(e) => r.error(&format!("hddot_check[t={t}]"), &e),
        }
    }
    let worst = sum2.checks.iter().map(|c| c.check.error()).fold(0.0, f64::max);
    r.check("hddot_formula", "hddot_check", worst, HDDOT_TOL, sum2.checks.len());
    r.result("hddot_check", &sum2);
}

pub(crate) fn h_checks(r: &mut RunReport, tr: &crate::convexity::SegmentTrace) {
    let h = tr.h_values();
    let neg = h.iter().map(|v| -v).fold(0.0, f64::max);
    r.check("h_nonnegative", "segment_trace", neg, H_TOL, h.len());
    let ends = match (h.first(), h.last()) {
        (Some(a), Some(b)) => a.abs().max(b.abs()),
        _ => f64::INFINITY,
    };
    r.check("h_endpoints", "segment_trace", ends, H_TOL, 2);
    for t in &tr.unresolved {
        r.error(
            &format!("segment_trace[t={t}]"),
            &GeoError::UnresolvedCut {
                lo: *t,
                hi: *t,
                reason: "distance unresolved".into(),
            },
        );
    }
}

fn segment(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    let x = require(&s.x, "x")?;
    let v0 = require(&s.v, "v")?;
    let v1 = require(&s.v1, "v1")?;
    let opts = SegmentOptions {
        cut: cut_options(s),
        seed: s.seed,
        ..SegmentOptions::default()
    };
    let tr = segment_trace(m, x, v0, v1, s.n.unwrap_or(64), &opts)?;
    h_checks(r, &tr);
    if let Some(path) = out_file(s, "segment.csv") {
        write_artifact(r, &path, |w| tr.write_csv(w));
    }
    let seg = Segment::new(m, x, &tr.v0, &tr.v1, &opts)?;
    segment_derivatives(r, &seg, 10, s.hddot.unwrap_or(0), None);
    r.result("segment_trace", &tr);
    Ok(())
}

/// Generator runs of the three differential-inequality checks.
pub(crate) fn inequality_checks(r: &mut RunReport, trials: usize, seed: u64) {
    for (family, id) in [
        (Family::Lemineq, "lemineq_conclusion"),
        (Family::Lemineqbis, "lemineqbis_conclusion"),
        (Family::Concave, "lemineqbism_conclusion"),
    ] {
        let op = format!("run_generator[{id}]");
        let Some(g) = r.capture(&op, run_generator(family, trials, seed, 401, &[0.5, 1.0, 2.0])) else {
            continue;
        };
        match family {
            Family::Concave => {
                let lit = g.literal_failures.unwrap_or(0);
                let cor = g.corrected_failures.unwrap_or(0);
                r.finding("lemineqbism_literal_reading", "check_lemineqbism", lit == 0, &g);
                r.check("lemineqbism_corrected_reading", "check_lemineqbism", cor as f64, 0.0, g.hypothesis_ok);
            }
            _ => r.check(id, "run_generator", g.conclusion_failures as f64, 0.0, g.hypothesis_ok),
        }
        r.result(&op, &g);
    }
}

fn convexity(m: &dyn Manifold, s: &Scenario, r: &mut RunReport) -> Result<()> {
    if let Some(x) = &s.x {
        let opts = cut_options(s);
        let ctx = CutContext::new(m, x, &opts)?;
        let sample = domain_sample_with(&ctx, s.n.unwrap_or(72))?;
        record_domain(r, "domain_sample", &sample);
        let nf = summarize_nonfocality(vec![nonfocality_entry(&sample)], opts.focal_tol);
        r.finding("nonfocal", "nonfocality_report", nf.nonfocal, &nf);
        if let Some(rep) = r.capture("semiconvexity_test", domain_convexity(&sample, s.tol.unwrap_or(1e-6))) {
            r.finding("convex_injectivity_domain", "semiconvexity_test", rep.convex, &rep);
        }
        if let Some(path) = s.svg.clone().or_else(|| out_file(s, "domain.svg")) {
            write_artifact(r, &path, |mut w| {
                use std::io::Write;
                w.write_all(sample.to_svg().as_bytes())?;
                Ok(())
            });
        }
    }
    if let Some(trials) = s.trials {
        inequality_checks(r, trials, s.seed);
    }
    Ok(())
}

/// Execute a scenario in the current worker pool.
pub fn run(s: &Scenario) -> RunReport {
    let start = std::time::Instant::now();
    let mut r = RunReport::new(s.clone());
    match ManifoldModel::from_decl(&s.manifold) {
        Ok(model) => {
            let m = model.as_dyn();
            let res = match s.command {
                Command::Geodesic => geodesic(m, s, &mut r),
                Command::Focal => focal(m, s, &mut r),
                Command::Cut => cut(m, s, &mut r),
                Command::Domain => domain(m, s, &mut r),
                Command::MtwScan => mtw_scan(m, s, &mut r),
                Command::Tensor => tensor(m, s, &mut r),
                Command::Segment => segment(m, s, &mut r),
                Command::Convexity => convexity(m, s, &mut r),
                Command::Verify => suite::verify(m, s, &mut r),
            };
            if let Err(e) = res {
                r.error(s.command.name(), &e);
            }
        }
        Err(e) => r.error("manifold", &e),
    }
    r.finish();
    r.wall_time_s = start.elapsed().as_secs_f64();
    if let Some(path) = out_file(s, "report.json") {
        let json = r.to_json();
        if let Err(e) = std::fs::create_dir_all(path.parent().unwrap()).and_then(|_| std::fs::write(&path, json)) {
            r.error("write report", &e.into());
            r.finish();
        }
    }
    r
}
