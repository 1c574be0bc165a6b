//! Surfaces of revolution `ds² = du² + r(u)² dφ²` with a user-supplied profile `r`.
//!
//! Two topologies are supported. A Fourier profile whose period equals the length of
//! `u_range` and which stays positive closes up into a torus of revolution. A profile that
//! vanishes at both ends of `u_range` closes up into a sphere; the poles are coordinate
//! singularities guarded by `pole_guard`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{ChartSpec, Manifold};
use crate::error::{GeoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileBasis {
    /// `r(u) = Σ c_k u^k`
    Poly,
    /// `r(u) = a_0 + Σ_k a_k cos(kω(u − u_0)) + b_k sin(kω(u − u_0))`, coefficients laid
    /// out as `[a_0, a_1, b_1, a_2, b_2, …]`, `ω = 2π / period`.
    Fourier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub basis: ProfileBasis,
    pub coeffs: Vec<f64>,
    pub u_range: [f64; 2],
    pub period: f64,
}

impl Profile {
    /// `(r, r', r'')` at `u`.
    pub fn eval(&self, u: f64) -> (f64, f64, f64) {
        match self.basis {
            ProfileBasis::Poly => {
                let mut r = 0.0;
                let mut r1 = 0.0;
                let mut r2 = 0.0;
                for c in self.coeffs.iter().rev() {
                    r2 = r2 * u + 2.0 * r1;
                    r1 = r1 * u + r;
                    r = r * u + c;
                }
                (r, r1, r2)
            }
            ProfileBasis::Fourier => {
                let w = 2.0 * PI / self.period;
                let s = u - self.u_range[0];
                let mut r = self.coeffs.first().copied().unwrap_or(0.0);
                let mut r1 = 0.0;
                let mut r2 = 0.0;
                let mut k = 1usize;
                while 2 * k - 1 < self.coeffs.len() {
                    let a = self.coeffs[2 * k - 1];
                    let b = self.coeffs.get(2 * k).copied().unwrap_or(0.0);
                    let kw = k as f64 * w;
                    let (sn, cs) = (kw * s).sin_cos();
                    r += a * cs + b * sn;
                    r1 += kw * (-a * sn + b * cs);
                    r2 -= kw * kw * (a * cs + b * sn);
                    k += 1;
                }
                (r, r1, r2)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Periodic,
    Capped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Revolution {
    pub profile: Profile,
    pub topology: Topology,
    pub pole_guard: f64,
    r_min: f64,
    r_max: f64,
}

impl Revolution {
    pub fn new(profile: Profile, pole_guard: f64) -> Result<Self> {
        let [a, b] = profile.u_range;
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(GeoError::InconsistentInput("u_range must be an increasing pair".into()));
        }
        if profile.coeffs.is_empty() {
            return Err(GeoError::InconsistentInput("profile needs coefficients".into()));
        }
        let ra = profile.eval(a).0;
        let rb = profile.eval(b).0;
        let topology = if ra.abs() < 1e-9 && rb.abs() < 1e-9 {
            Topology::Capped
        } else if profile.basis == ProfileBasis::Fourier && (profile.period - (b - a)).abs() < 1e-12 {
            Topology::Periodic
        } else {
            return Err(GeoError::InconsistentInput(
                "profile must either be periodic over u_range or vanish at both ends".into(),
            ));
        };
        let n = 4000;
        let mut r_min = f64::INFINITY;
        let mut r_max: f64 = 0.0;
        for i in 1..n {
            let u = a + (b - a) * i as f64 / n as f64;
            let r = profile.eval(u).0;
            r_min = r_min.min(r);
            r_max = r_max.max(r);
        }
        if !(r_min > 0.0) {
            return Err(GeoError::InconsistentInput(
                "profile must be positive inside u_range".into(),
            ));
        }
        if topology == Topology::Capped {
            let (_, d0, _) = profile.eval(a);
            let (_, d1, _) = profile.eval(b);
            if (d0 - 1.0).abs() > 1e-6 || (d1 + 1.0).abs() > 1e-6 {
                return Err(GeoError::InconsistentInput(
                    "capped profile needs r'(a) = 1 and r'(b) = -1 for smooth poles".into(),
                ));
            }
        }
        Ok(Revolution {
            profile,
            topology,
            pole_guard,
            r_min,
            r_max,
        })
    }

    pub fn radius_range(&self) -> (f64, f64) {
        (self.r_min, self.r_max)
    }
}

impl Manifold for Revolution {
    fn dim(&self) -> usize {
        2
    }

    fn label(&self) -> String {
        format!(
            "revolution({:?}, {:?}, u in [{}, {}])",
            self.profile.basis, self.topology, self.profile.u_range[0], self.profile.u_range[1]
        )
    }

    fn chart(&self) -> ChartSpec {
        let [a, b] = self.profile.u_range;
        ChartSpec {
            description: "(u, phi): meridian arclength and rotation angle".into(),
            lower: vec![a, -PI],
            upper: vec![b, PI],
            periods: vec![
                match self.topology {
                    Topology::Periodic => Some(b - a),
                    Topology::Capped => None,
                },
                Some(2.0 * PI),
            ],
        }
    }

    fn metric_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let r = self.profile.eval(p[0]).0;
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = r * r;
        Ok(())
    }

    fn christoffel_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let (r, r1, _) = self.profile.eval(p[0]);
        if r <= 0.0 {
            return Err(GeoError::domain(p, "profile radius vanishes"));
        }
        out.iter_mut().for_each(|g| *g = 0.0);
        out[3] = -r * r1;
        out[4 + 1] = r1 / r;
        out[4 + 2] = r1 / r;
        Ok(())
    }

    fn christoffel_derivative_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let (r, r1, r2) = self.profile.eval(p[0]);
        if r <= 0.0 {
            return Err(GeoError::domain(p, "profile radius vanishes"));
        }
        out.iter_mut().for_each(|g| *g = 0.0);
        out[3] = -(r1 * r1 + r * r2);
        let d = (r2 * r - r1 * r1) / (r * r);
        out[4 + 1] = d;
        out[4 + 2] = d;
        Ok(())
    }

    fn gaussian_curvature(&self, p: &[f64]) -> Option<f64> {
        let (r, _, r2) = self.profile.eval(p[0]);
        Some(-r2 / r)
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(GeoError::domain(p, "non-finite coordinate"));
        }
        if self.topology == Topology::Capped {
            let [a, b] = self.profile.u_range;
            if p[0] <= a || p[0] >= b {
                return Err(GeoError::domain(p, "u outside the profile range"));
            }
            if self.profile.eval(p[0]).0 < self.pole_guard {
                return Err(GeoError::domain(p, "within the pole guard margin"));
            }
        }
        Ok(())
    }

    fn diameter_bound(&self) -> f64 {
        let [a, b] = self.profile.u_range;
        match self.topology {
            Topology::Periodic => {
                (0.5 * (b - a) + PI * self.r_max).min((b - a) + PI * self.r_min)
            }
            Topology::Capped => b - a,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_derivatives_match_hand_expansion() {
        let p = Profile {
            basis: ProfileBasis::Poly,
            coeffs: vec![1.0, 2.0, 3.0, 4.0],
            u_range: [0.0, 1.0],
            period: 1.0,
        };
        let (r, r1, r2) = p.eval(0.5);
        assert!((r - (1.0 + 1.0 + 0.75 + 0.5)).abs() < 1e-14);
        assert!((r1 - (2.0 + 3.0 + 3.0)).abs() < 1e-14);
        assert!((r2 - (6.0 + 12.0)).abs() < 1e-14);
    }

    #[test]
    fn fourier_derivatives_match_finite_differences() {
        let p = Profile {
            basis: ProfileBasis::Fourier,
            coeffs: vec![1.0, 0.3, -0.2, 0.1, 0.05],
            u_range: [0.0, 3.0],
            period: 3.0,
        };
        let h = 1e-5;
        let u = 0.7;
        let (_, r1, r2) = p.eval(u);
        let fd1 = (p.eval(u + h).0 - p.eval(u - h).0) / (2.0 * h);
        let fd2 = (p.eval(u + h).1 - p.eval(u - h).1) / (2.0 * h);
        assert!((r1 - fd1).abs() < 1e-8);
        assert!((r2 - fd2).abs() < 1e-7);
    }

    #[test]
    fn rejects_open_profiles() {
        let p = Profile {
            basis: ProfileBasis::Poly,
            coeffs: vec![1.0, 0.1],
            u_range: [0.0, 1.0],
            period: 1.0,
        };
        assert!(Revolution::new(p, 1e-2).is_err());
    }
}
