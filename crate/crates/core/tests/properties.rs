//! Property tests for invariants that hold on every admissible input.

use std::f64::consts::PI;

use proptest::prelude::*;

use mtwgeo::convexity::{function_semiconvexity, semiconvexity_test, Segment, SegmentOptions, StarSet};
use mtwgeo::cutlocus::radial_distance;
use mtwgeo::geodesic::trace_geodesic;
use mtwgeo::manifold::{builtin, orthonormal_frame, ChartPoint, TangentVector};
use mtwgeo::mtw::{mtw_tensor, MtwOptions};

fn tv(x: &[f64], c: Vec<f64>) -> TangentVector {
    TangentVector::new(ChartPoint::new(x.to_vec()), c)
}

fn on_frame(f: &[Vec<f64>], a: f64, r: f64) -> Vec<f64> {
    (0..2).map(|k| r * (a.cos() * f[0][k] + a.sin() * f[1][k])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radial_distance_is_a_metric(
        a in 0.0..2.0 * PI, ra in 0.0..3.0f64,
        b in 0.0..2.0 * PI, rb in 0.0..3.0f64,
        c in 0.0..2.0 * PI, rc in 0.0..3.0f64,
    ) {
        let m = builtin("torus_2pi").unwrap();
        let x = [0.3, -0.2];
        let (u, v, w) = (
            tv(&x, vec![ra * a.cos(), ra * a.sin()]),
            tv(&x, vec![rb * b.cos(), rb * b.sin()]),
            tv(&x, vec![rc * c.cos(), rc * c.sin()]),
        );
        let uv = radial_distance(&*m, &u, &v).unwrap();
        let vu = radial_distance(&*m, &v, &u).unwrap();
        prop_assert!((uv - vu).abs() < 1e-12);
        prop_assert!(radial_distance(&*m, &u, &u).unwrap() < 1e-12);
        let euclid = ((ra * a.cos() - rb * b.cos()).powi(2) + (ra * a.sin() - rb * b.sin()).powi(2)).sqrt();
        prop_assert!(uv >= euclid - 1e-12);
        let uw = radial_distance(&*m, &u, &w).unwrap();
        let wv = radial_distance(&*m, &w, &v).unwrap();
        prop_assert!(uv <= uw + wv + 1e-12);
    }

    #[test]
    fn concave_parabola_has_its_curvature_as_semiconvexity(a in 0.01..10.0f64, b in -3.0..3.0f64) {
        let x: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 / 20.0).collect();
        let f: Vec<f64> = x.iter().map(|t| -a * t * t / 2.0 + b * t).collect();
        prop_assert!((function_semiconvexity(&x, &f) - a).abs() < 1e-8 * (1.0 + a));
        // adding a convex function cannot increase the constant
        let g: Vec<f64> = x.iter().zip(&f).map(|(t, v)| v + t.abs().powi(3)).collect();
        prop_assert!(function_semiconvexity(&x, &g) <= a + 1e-8 * (1.0 + a));
    }

    #[test]
    fn ellipses_are_convex_star_sets(a in 0.5..3.0f64, b in 0.5..3.0f64, s in 0.1..10.0f64) {
        let n = 120;
        let radii: Vec<f64> = (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                s * a * b / ((b * t.cos()).powi(2) + (a * t.sin()).powi(2)).sqrt()
            })
            .collect();
        let rep = semiconvexity_test(&StarSet::new(radii).unwrap(), None, 1e-6).unwrap();
        prop_assert!(rep.convex, "{rep:?}");
    }

    #[test]
    fn dumbbell_geodesics_conserve_speed(u in 0.2..2.9f64, phi in -PI..PI, a in 0.0..2.0 * PI, speed in 0.3..2.0f64) {
        let m = builtin("dumbbell").unwrap();
        let x = [u, phi];
        let f = orthonormal_frame(&*m, &x, None).unwrap();
        let tr = trace_geodesic(&*m, &tv(&x, on_frame(&f, a, speed)), 3.0, 1e-3).unwrap();
        prop_assert!(tr.speed_drift(&*m).unwrap() < 1e-8);
        prop_assert!(tr.frame_defect(&*m).unwrap() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // I(x) is a square on the torus and a disk on the sphere, both convex, so h vanishes
    #[test]
    fn excess_vanishes_inside_convex_domains(
        a in 0.0..2.0 * PI, ra in 0.05..0.95f64,
        b in 0.0..2.0 * PI, rb in 0.05..0.95f64,
        t in 0.0..1.0f64,
    ) {
        let torus = builtin("torus_2pi").unwrap();
        let x = [0.0, 0.0];
        let sq = |a: f64, r: f64| {
            let s = r * PI / a.cos().abs().max(a.sin().abs());
            vec![s * a.cos(), s * a.sin()]
        };
        let seg = Segment::new(&*torus, &x, &sq(a, ra), &sq(b, rb), &SegmentOptions::default()).unwrap();
        prop_assert!(seg.h(t).unwrap().abs() < 1e-8);

        let sphere = builtin("sphere_r1").unwrap();
        let x = [1.1, 0.3];
        let f = orthonormal_frame(&*sphere, &x, None).unwrap();
        let (v0, v1) = (on_frame(&f, a, ra * PI), on_frame(&f, b, rb * PI));
        let seg = Segment::new(&*sphere, &x, &v0, &v1, &SegmentOptions::default()).unwrap();
        prop_assert!(seg.h(t).unwrap().abs() < 1e-8);
    }
}

/// Unit sphere in R³: closed-form exponential map from chart coordinates.
fn sphere_exp(x: &[f64], w: &[f64]) -> [f64; 3] {
    let (st, ct) = x[0].sin_cos();
    let (sp, cp) = x[1].sin_cos();
    let p = [st * cp, st * sp, ct];
    let e_theta = [ct * cp, ct * sp, -st];
    let e_phi = [-sp, cp, 0.0];
    let d: Vec<f64> = (0..3).map(|k| w[0] * e_theta[k] + w[1] * st * e_phi[k]).collect();
    let n = d.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n == 0.0 {
        return p;
    }
    let (sn, cn) = n.sin_cos();
    [0, 1, 2].map(|k| cn * p[k] + sn * d[k] / n)
}

fn half_sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    c.acos().powi(2) / 2.0
}

/// −(3/2) ∂²_s ∂²_t c(exp_x(t ξ), exp_x(v + s η)) by a 3×3 stencil with one Richardson step.
fn sphere_mtw_oracle(x: &[f64], v: &[f64], xi: &[f64], eta: &[f64]) -> f64 {
    let stencil = |h: f64| {
        let w = [1.0, -2.0, 1.0];
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let t = (i as f64 - 1.0) * h;
            let y = sphere_exp(x, &[t * xi[0], t * xi[1]]);
            for (j, wj) in w.iter().enumerate() {
                let s = (j as f64 - 1.0) * h;
                let z = sphere_exp(x, &[v[0] + s * eta[0], v[1] + s * eta[1]]);
                acc += wi * wj * half_sq_dist(&y, &z);
            }
        }
        -1.5 * acc / h.powi(4)
    };
    let (a, b) = (stencil(2e-2), stencil(1e-2));
    (4.0 * b - a) / 3.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sphere_tensor_matches_embedding(
        theta in 0.6..2.5f64, phi in -PI..PI,
        a in 0.0..2.0 * PI, r in 0.0..2.0f64, b in 0.0..PI,
    ) {
        let m = builtin("sphere_r1").unwrap();
        let x = [theta, phi];
        let f = orthonormal_frame(&*m, &x, None).unwrap();
        let v = on_frame(&f, a, r);
        let xi = on_frame(&f, b, 1.0);
        let eta = on_frame(&f, b + PI / 2.0, 1.0);
        let got = mtw_tensor(&*m, &x, &v, &xi, &eta, &MtwOptions::default()).unwrap().best();
        let want = sphere_mtw_oracle(&x, &v, &xi, &eta);
        prop_assert!((got - want).abs() <= 2e-3 * (1.0 + want.abs()), "got {got}, oracle {want}");
    }
}
