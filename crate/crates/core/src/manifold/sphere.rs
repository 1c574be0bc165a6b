//! Round sphere in polar coordinates `(θ, φ)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ChartSpec, LogSet, Manifold};
use crate::error::{GeoError, Result};

/// Number of minimizers listed when a point is antipodal to the base point.
pub const ANTIPODAL_CAP: usize = 16;

/// Coordinates closer than this to a pole (in `sin θ`) are rejected.
const POLE_GUARD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub radius: f64,
}

impl Sphere {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeoError::InconsistentInput(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        Ok(Sphere { radius })
    }
}

pub(crate) fn embed(p: &[f64]) -> [f64; 3] {
    let (st, ct) = p[0].sin_cos();
    let (sp, cp) = p[1].sin_cos();
    [st * cp, st * sp, ct]
}

fn basis(p: &[f64]) -> ([f64; 3], [f64; 3]) {
    let (st, ct) = p[0].sin_cos();
    let (sp, cp) = p[1].sin_cos();
    ([ct * cp, ct * sp, -st], [-st * sp, st * cp, 0.0])
}

pub(crate) fn push_vector(p: &[f64], v: &[f64]) -> [f64; 3] {
    let (bt, bp) = basis(p);
    [
        v[0] * bt[0] + v[1] * bp[0],
        v[0] * bt[1] + v[1] * bp[1],
        v[0] * bt[2] + v[1] * bp[2],
    ]
}

pub(crate) fn pull_vector(p: &[f64], w: &[f64; 3]) -> Vec<f64> {
    let (bt, bp) = basis(p);
    let s2 = p[0].sin().powi(2);
    vec![dot(w, &bt), dot(w, &bp) / s2]
}

pub(crate) fn unembed(x: &[f64; 3]) -> Result<Vec<f64>> {
    let rxy = x[0].hypot(x[1]);
    if rxy < POLE_GUARD {
        return Err(GeoError::domain(
            &[x[2].clamp(-1.0, 1.0).acos(), 0.0],
            "point lies on a pole of the polar chart",
        ));
    }
    Ok(vec![rxy.atan2(x[2]), x[1].atan2(x[0])])
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl Manifold for Sphere {
    fn dim(&self) -> usize {
        2
    }

    fn label(&self) -> String {
        format!("sphere(radius={})", self.radius)
    }

    fn chart(&self) -> ChartSpec {
        ChartSpec {
            description: "polar (theta, phi), theta in (0, pi), phi periodic".into(),
            lower: vec![0.0, -PI],
            upper: vec![PI, PI],
            periods: vec![None, Some(2.0 * PI)],
        }
    }

    fn metric_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let r2 = self.radius * self.radius;
        out[0] = r2;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = r2 * p[0].sin().powi(2);
        Ok(())
    }

    fn christoffel_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let (s, c) = p[0].sin_cos();
        if s.abs() < POLE_GUARD {
            return Err(GeoError::domain(p, "Christoffel symbols singular at the pole"));
        }
        out.iter_mut().for_each(|g| *g = 0.0);
        // Γ^θ_φφ
        out[3] = -s * c;
        // Γ^φ_θφ = Γ^φ_φθ
        out[4 + 1] = c / s;
        out[4 + 2] = c / s;
        Ok(())
    }

    fn christoffel_derivative_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let s = p[0].sin();
        if s.abs() < POLE_GUARD {
            return Err(GeoError::domain(p, "Christoffel symbols singular at the pole"));
        }
        out.iter_mut().for_each(|g| *g = 0.0);
        out[3] = -(2.0 * p[0]).cos();
        out[4 + 1] = -1.0 / (s * s);
        out[4 + 2] = -1.0 / (s * s);
        Ok(())
    }

    fn gaussian_curvature(&self, _p: &[f64]) -> Option<f64> {
        Some(1.0 / (self.radius * self.radius))
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(GeoError::domain(p, "non-finite coordinate"));
        }
        if !(p[0] > 0.0 && p[0] < PI) || p[0].sin() < POLE_GUARD {
            return Err(GeoError::domain(p, "theta must lie strictly inside (0, pi)"));
        }
        Ok(())
    }

    fn analytic_exp(&self, p: &[f64], v: &[f64]) -> Option<Result<(Vec<f64>, Vec<f64>)>> {
        Some(self.exp_impl(p, v))
    }

    fn analytic_log(&self, x: &[f64], y: &[f64]) -> Option<Result<LogSet>> {
        Some(self.log_impl(x, y))
    }

    fn analytic_focal_time(&self, x: &[f64], v: &[f64]) -> Option<Option<f64>> {
        let speed = self.radius * norm3(&push_vector(x, v));
        Some(if speed > 0.0 { Some(PI * self.radius / speed) } else { None })
    }

    fn diameter_bound(&self) -> f64 {
        PI * self.radius
    }

    fn working_chart(&self, x: &[f64], v: &[f64]) -> Option<ChartRotation> {
        ChartRotation::aligned(x, v).ok()
    }
}

impl Sphere {
    fn exp_impl(&self, p: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_point(p)?;
        let x = embed(p);
        let w = push_vector(p, v);
        let a = norm3(&w);
        if a == 0.0 {
            return Ok((p.to_vec(), v.to_vec()));
        }
        let (sa, ca) = a.sin_cos();
        let u = [w[0] / a, w[1] / a, w[2] / a];
        let y = [
            x[0] * ca + u[0] * sa,
            x[1] * ca + u[1] * sa,
            x[2] * ca + u[2] * sa,
        ];
        let yv = [
            a * (-x[0] * sa + u[0] * ca),
            a * (-x[1] * sa + u[1] * ca),
            a * (-x[2] * sa + u[2] * ca),
        ];
        let q = unembed(&y)?;
        let vel = pull_vector(&q, &yv);
        Ok((q, vel))
    }

    fn log_impl(&self, xc: &[f64], yc: &[f64]) -> Result<LogSet> {
        self.check_point(xc)?;
        self.check_point(yc)?;
        let x = embed(xc);
        let y = embed(yc);
        let c = cross(&x, &y);
        let alpha = norm3(&c).atan2(dot(&x, &y));
        if alpha < 1e-15 {
            return Ok(LogSet {
                length: 0.0,
                velocities: vec![vec![0.0, 0.0]],
                capped: false,
            });
        }
        if PI - alpha < 1e-9 {
            let (bt, bp) = basis(xc);
            let s = xc[0].sin();
            let e2 = [bp[0] / s, bp[1] / s, bp[2] / s];
            let velocities = (0..ANTIPODAL_CAP)
                .map(|k| {
                    let ang = 2.0 * PI * k as f64 / ANTIPODAL_CAP as f64;
                    let (sa, ca) = ang.sin_cos();
                    let w = [
                        PI * (ca * bt[0] + sa * e2[0]),
                        PI * (ca * bt[1] + sa * e2[1]),
                        PI * (ca * bt[2] + sa * e2[2]),
                    ];
                    pull_vector(xc, &w)
                })
                .collect();
            return Ok(LogSet {
                length: self.radius * PI,
                velocities,
                capped: true,
            });
        }
        let ca = alpha.cos();
        let mut u = [y[0] - x[0] * ca, y[1] - x[1] * ca, y[2] - x[2] * ca];
        let n = norm3(&u);
        u.iter_mut().for_each(|c| *c *= alpha / n);
        Ok(LogSet {
            length: self.radius * alpha,
            velocities: vec![pull_vector(xc, &u)],
            capped: false,
        })
    }
}

/// Rotation of the sphere relating a working polar chart to the model chart.
///
/// The working chart places the base point at `(π/2, 0)` and the initial velocity along
/// `+φ`, so the geodesic runs along the working equator, far from both poles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartRotation {
    /// Columns map working ambient coordinates to model ambient coordinates.
    pub q: [[f64; 3]; 3],
}

impl ChartRotation {
    pub fn aligned(x: &[f64], v: &[f64]) -> Result<Self> {
        let xh = embed(x);
        let w = push_vector(x, v);
        let nw = norm3(&w);
        let vh = if nw > 0.0 {
            [w[0] / nw, w[1] / nw, w[2] / nw]
        } else {
            let (bt, _) = basis(x);
            bt
        };
        let nh = cross(&xh, &vh);
        let mut q = [[0.0; 3]; 3];
        for i in 0..3 {
            q[i][0] = xh[i];
            q[i][1] = vh[i];
            q[i][2] = nh[i];
        }
        Ok(ChartRotation { q })
    }

    fn apply(&self, a: &[f64; 3]) -> [f64; 3] {
        let q = &self.q;
        [
            q[0][0] * a[0] + q[0][1] * a[1] + q[0][2] * a[2],
            q[1][0] * a[0] + q[1][1] * a[1] + q[1][2] * a[2],
            q[2][0] * a[0] + q[2][1] * a[1] + q[2][2] * a[2],
        ]
    }

    fn apply_t(&self, a: &[f64; 3]) -> [f64; 3] {
        let q = &self.q;
        [
            q[0][0] * a[0] + q[1][0] * a[1] + q[2][0] * a[2],
            q[0][1] * a[0] + q[1][1] * a[1] + q[2][1] * a[2],
            q[0][2] * a[0] + q[1][2] * a[1] + q[2][2] * a[2],
        ]
    }

    pub fn point_to_model(&self, pw: &[f64]) -> Result<Vec<f64>> {
        unembed(&self.apply(&embed(pw)))
    }

    pub fn point_to_work(&self, pm: &[f64]) -> Result<Vec<f64>> {
        unembed(&self.apply_t(&embed(pm)))
    }

    pub fn vector_to_model(&self, pw: &[f64], vw: &[f64]) -> Result<Vec<f64>> {
        let pm = self.point_to_model(pw)?;
        let a = self.apply(&push_vector(pw, vw));
        Ok(pull_vector(&pm, &a))
    }

    pub fn vector_to_work(&self, pm: &[f64], vm: &[f64]) -> Result<Vec<f64>> {
        let pw = self.point_to_work(pm)?;
        let a = self.apply_t(&push_vector(pm, vm));
        Ok(pull_vector(&pw, &a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_log_roundtrip() {
        let s = Sphere::new(2.0).unwrap();
        let x = [1.1, 0.3];
        let v = [0.4, -0.7];
        let (y, _) = s.exp_impl(&x, &v).unwrap();
        let set = s.log_impl(&x, &y).unwrap();
        assert_eq!(set.velocities.len(), 1);
        assert_relative_eq!(set.velocities[0][0], v[0], epsilon = 1e-12);
        assert_relative_eq!(set.velocities[0][1], v[1], epsilon = 1e-12);
    }

    #[test]
    fn antipodal_log_lists_capped_continuum() {
        let s = Sphere::new(1.0).unwrap();
        let x = [PI / 2.0, 0.0];
        let y = [PI / 2.0, PI];
        let set = s.log_impl(&x, &y).unwrap();
        assert!(set.capped);
        assert_eq!(set.velocities.len(), ANTIPODAL_CAP);
        assert_relative_eq!(set.length, PI, epsilon = 1e-12);
    }

    #[test]
    fn rotation_roundtrip_and_alignment() {
        let x = [0.4, 2.0];
        let v = [0.3, 0.9];
        let rot = ChartRotation::aligned(&x, &v).unwrap();
        let xw = rot.point_to_work(&x).unwrap();
        assert_relative_eq!(xw[0], PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(xw[1], 0.0, epsilon = 1e-12);
        let vw = rot.vector_to_work(&x, &v).unwrap();
        assert!(vw[0].abs() < 1e-12 && vw[1] > 0.0);
        let back = rot.vector_to_model(&xw, &vw).unwrap();
        assert_relative_eq!(back[0], v[0], epsilon = 1e-12);
        assert_relative_eq!(back[1], v[1], epsilon = 1e-12);
    }

    #[test]
    fn exp_at_half_circle_reaches_antipode() {
        let s = Sphere::new(1.0).unwrap();
        let (y, vel) = s.exp_impl(&[PI / 2.0, 0.0], &[0.0, PI]).unwrap();
        assert_relative_eq!(y[0], PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(y[1].abs(), PI, epsilon = 1e-12);
        assert_relative_eq!(vel[1], PI, epsilon = 1e-12);
    }
}
