//! Semiconvexity and convexity of star-shaped planar sets given by a radial function, as
//! sampled for injectivity domains.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutlocus::DomainSample;
use crate::error::{GeoError, Result};

/// Closed star-shaped set `{ r e(θ) : 0 ≤ r ≤ R(θ) }` with `R` linear in `θ` between samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarSet {
    pub radii: Vec<f64>,
}

impl StarSet {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.len() < 8 {
            return Err(GeoError::Precondition("star-shaped set needs at least 8 directions".into()));
        }
        if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(GeoError::Precondition(format!("set is not star-shaped: radius {r}")));
        }
        Ok(StarSet { radii })
    }

    /// From a fully resolved domain sample (frame coordinates are isometric to `T_xM`).
    pub fn from_domain(s: &DomainSample) -> Result<Self> {
        let radii: Option<Vec<f64>> = s.t_cut.iter().cloned().collect();
        match radii {
            Some(r) => StarSet::new(r),
            None => Err(GeoError::Precondition(
                "domain sample has unresolved directions; the set is not known to be star-shaped".into(),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    fn angle(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.len() as f64
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        let a = self.angle(i);
        [self.radii[i] * a.cos(), self.radii[i] * a.sin()]
    }

    pub fn radius_at(&self, theta: f64) -> f64 {
        let n = self.len();
        let u = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * n as f64;
        let i = (u.floor() as usize) % n;
        let f = u - u.floor();
        self.radii[i] + f * (self.radii[(i + 1) % n] - self.radii[i])
    }

    /// `max(0, |p| − R(θ_p))`.
    pub fn radial_excess(&self, p: [f64; 2]) -> f64 {
        let r = p[0].hypot(p[1]);
        if r == 0.0 {
            return 0.0;
        }
        (r - self.radius_at(p[1].atan2(p[0]))).max(0.0)
    }

    /// `R(θ_p) − |p|` for interior points (0 outside).
    pub fn radial_clearance(&self, p: [f64; 2]) -> f64 {
        let r = p[0].hypot(p[1]);
        if r == 0.0 {
            return self.radii.iter().cloned().fold(f64::INFINITY, f64::min);
        }
        (self.radius_at(p[1].atan2(p[0])) - r).max(0.0)
    }

    /// Boundary curve densified between samples.
    fn dense_boundary(&self, sub: usize) -> Vec<[f64; 2]> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * sub);
        for k in 0..n * sub {
            let a = 2.0 * PI * k as f64 / (n * sub) as f64;
            let r = self.radius_at(a);
            out.push([r * a.cos(), r * a.sin()]);
        }
        out
    }
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if l2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (ap[0] - s * ab[0]).hypot(ap[1] - s * ab[1])
}

fn dist_to_curve(p: [f64; 2], curve: &[[f64; 2]]) -> f64 {
    let n = curve.len();
    (0..n)
        .map(|i| seg_dist(p, curve[i], curve[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordViolation {
    pub i: usize,
    pub j: usize,
    pub t: f64,
    pub point: [f64; 2],
    /// Radial excess of the chord point beyond the boundary.
    pub rho: f64,
    pub dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiconvexityReport {
    /// Smallest δ for the chord inequality with `f = dist(·, set)`.
    pub delta_distance: f64,
    /// Smallest δ for the chord inequality with `f = ρ(·, set)`.
    pub delta_radial: f64,
    /// `max ρ / dist` over chord points outside the set.
    pub kstar: Option<f64>,
    /// Only pairs closer than this were used.
    pub locality_nu: Option<f64>,
    pub tolerance: f64,
    pub convex: bool,
    /// Uniform convexity modulus, reported when the set is convex.
    pub kappa: Option<f64>,
    pub n_pairs: usize,
    pub n_exterior: usize,
    /// Deepest chord points outside the set.
    pub violations: Vec<ChordViolation>,
}

/// Interior chord parameters used for every pair.
const CHORD_TS: [f64; 7] = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875];

/// Chord test over all boundary pairs (or those within `nu`): radial excesses below `tol`
/// count as inside.
pub fn semiconvexity_test(set: &StarSet, nu: Option<f64>, tol: f64) -> Result<SemiconvexityReport> {
    let n = set.len();
    let verts: Vec<[f64; 2]> = (0..n).map(|i| set.vertex(i)).collect();
    let curve = set.dense_boundary(8);
    struct Row {
        delta_rad: f64,
        delta_dist: f64,
        kstar: f64,
        kappa: f64,
        pairs: usize,
        ext: Vec<ChordViolation>,
    }
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Row {
                delta_rad: 0.0,
                delta_dist: 0.0,
                kstar: 0.0,
                kappa: f64::INFINITY,
                pairs: 0,
                ext: Vec::new(),
            };
            for j in i + 1..n {
                let (a, b) = (verts[i], verts[j]);
                let l2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                if nu.is_some_and(|v| l2.sqrt() > v) || l2 == 0.0 {
                    continue;
                }
                row.pairs += 1;
                for &t in &CHORD_TS {
                    let p = [(1.0 - t) * a[0] + t * b[0], (1.0 - t) * a[1] + t * b[1]];
                    let w = t * (1.0 - t) * l2 / 2.0;
                    let rho = set.radial_excess(p);
                    if rho > tol {
                        let rho = rho - tol;
                        let dist = dist_to_curve(p, &curve);
                        row.delta_rad = row.delta_rad.max(rho / w);
                        row.delta_dist = row.delta_dist.max(dist / w);
                        if dist > 0.0 {
                            row.kstar = row.kstar.max(rho / dist);
                        }
                        row.ext.push(ChordViolation { i, j, t, point: p, rho, dist });
                    } else {
                        row.kappa = row.kappa.min(set.radial_clearance(p) / w);
                    }
                }
            }
            row
        })
        .collect();
    let mut rep = SemiconvexityReport {
        delta_distance: 0.0,
        delta_radial: 0.0,
        kstar: None,
        locality_nu: nu,
        tolerance: tol,
        convex: true,
        kappa: None,
        n_pairs: 0,
        n_exterior: 0,
        violations: Vec::new(),
    };
    let mut kappa = f64::INFINITY;
    let mut kstar: f64 = 0.0;
    for r in rows {
        rep.delta_radial = rep.delta_radial.max(r.delta_rad);
        rep.delta_distance = rep.delta_distance.max(r.delta_dist);
        kstar = kstar.max(r.kstar);
        kappa = kappa.min(r.kappa);
        rep.n_pairs += r.pairs;
        rep.n_exterior += r.ext.len();
        rep.violations.extend(r.ext);
    }
    rep.violations.sort_by(|a, b| b.rho.total_cmp(&a.rho).then(a.i.cmp(&b.i)).then(a.j.cmp(&b.j)));
    rep.violations.truncate(32);
    rep.convex = rep.n_exterior == 0;
    if rep.n_exterior > 0 {
        rep.kstar = Some(kstar.max(1.0));
    }
    if rep.convex && kappa.is_finite() {
        rep.kappa = Some(kappa);
    }
    Ok(rep)
}

/// Smallest δ with `f((1−t)a + tb) ≤ (1−t) f(a) + t f(b) + δ t(1−t)|a−b|²/2` over sampled
/// triples of a function on a uniform grid.
pub fn function_semiconvexity(x: &[f64], f: &[f64]) -> f64 {
    let n = f.len();
    let mut delta: f64 = 0.0;
    for i in 0..n {
        for j in i + 2..n {
            for k in i + 1..j {
                let t = (x[k] - x[i]) / (x[j] - x[i]);
                let w = t * (1.0 - t) * (x[j] - x[i]).powi(2) / 2.0;
                let gap = f[k] - (1.0 - t) * f[i] - t * f[j];
                delta = delta.max(gap / w);
            }
        }
    }
    delta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_convex_with_flat_faces() {
        let n = 360;
        let radii = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                PI / a.cos().abs().max(a.sin().abs())
            })
            .collect();
        let s = StarSet::new(radii).unwrap();
        let r = semiconvexity_test(&s, None, 1e-9).unwrap();
        assert!(r.convex && r.delta_radial == 0.0);
        assert!(r.kappa.unwrap() < 1e-6);
    }

    #[test]
    fn disk_modulus_is_inverse_radius() {
        let s = StarSet::new(vec![PI; 180]).unwrap();
        let r = semiconvexity_test(&s, None, 1e-9).unwrap();
        let k = r.kappa.unwrap();
        assert!((k * PI - 1.0).abs() < 0.1, "{k}");
    }

    #[test]
    fn dented_disk_is_flagged() {
        let mut radii = vec![2.0; 72];
        radii[18] = 1.0;
        let s = StarSet::new(radii).unwrap();
        let r = semiconvexity_test(&s, None, 1e-9).unwrap();
        assert!(!r.convex && r.delta_radial > 0.0 && r.delta_distance > 0.0);
        let k = r.kstar.unwrap();
        assert!(r.delta_radial <= k * r.delta_distance * (1.0 + 1e-12));
    }

    #[test]
    fn function_semiconvexity_of_concave_parabola() {
        let x: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let f: Vec<f64> = x.iter().map(|s| -s * s).collect();
        assert!((function_semiconvexity(&x, &f) - 2.0).abs() < 1e-9);
    }
}
