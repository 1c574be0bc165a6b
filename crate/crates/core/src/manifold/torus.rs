//! Flat square torus `R² / (L Z)²`.

use super::{ChartSpec, LogSet, Manifold};
use crate::error::{GeoError, Result};

/// Length gap within which lattice translates are reported as minimizers together.
const TIE_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct FlatTorus {
    pub period: f64,
}

impl FlatTorus {
    pub fn new(period: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(GeoError::InconsistentInput(format!(
                "torus period must be positive, got {period}"
            )));
        }
        Ok(FlatTorus { period })
    }
}

impl Manifold for FlatTorus {
    fn dim(&self) -> usize {
        2
    }

    fn label(&self) -> String {
        format!("flat_torus(period={})", self.period)
    }

    fn chart(&self) -> ChartSpec {
        ChartSpec {
            description: "periodic cartesian (x, y)".into(),
            lower: vec![0.0, 0.0],
            upper: vec![self.period, self.period],
            periods: vec![Some(self.period), Some(self.period)],
        }
    }

    fn metric_into(&self, _p: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        Ok(())
    }

    fn christoffel_into(&self, _p: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|g| *g = 0.0);
        Ok(())
    }

    fn christoffel_derivative_into(&self, _p: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|g| *g = 0.0);
        Ok(())
    }

    fn gaussian_curvature(&self, _p: &[f64]) -> Option<f64> {
        Some(0.0)
    }

    fn analytic_exp(&self, p: &[f64], v: &[f64]) -> Option<Result<(Vec<f64>, Vec<f64>)>> {
        let mut y = vec![p[0] + v[0], p[1] + v[1]];
        self.reduce(&mut y);
        Some(Ok((y, v.to_vec())))
    }

    fn analytic_log(&self, x: &[f64], y: &[f64]) -> Option<Result<LogSet>> {
        let l = self.period;
        let base = self.chart_delta(x, y);
        let mut cands: Vec<(f64, Vec<f64>)> = Vec::with_capacity(9);
        for i in -1..=1 {
            for j in -1..=1 {
                let w = vec![base[0] + i as f64 * l, base[1] + j as f64 * l];
                cands.push((w[0].hypot(w[1]), w));
            }
        }
        let best = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let velocities = cands
            .into_iter()
            .filter(|c| c.0 <= best + TIE_TOL)
            .map(|c| c.1)
            .collect();
        Some(Ok(LogSet {
            length: best,
            velocities,
            capped: false,
        }))
    }

    fn analytic_focal_time(&self, _x: &[f64], _v: &[f64]) -> Option<Option<f64>> {
        Some(None)
    }

    fn diameter_bound(&self) -> f64 {
        self.period / std::f64::consts::SQRT_2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn corner_of_fundamental_square_has_four_minimizers() {
        let t = FlatTorus::new(2.0 * PI).unwrap();
        let set = t.analytic_log(&[0.0, 0.0], &[PI, PI]).unwrap().unwrap();
        assert_eq!(set.velocities.len(), 4);
        assert!((set.length - PI * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn edge_midpoint_has_two_minimizers() {
        let t = FlatTorus::new(2.0 * PI).unwrap();
        let set = t.analytic_log(&[0.0, 0.0], &[PI, 0.5]).unwrap().unwrap();
        assert_eq!(set.velocities.len(), 2);
    }
}
