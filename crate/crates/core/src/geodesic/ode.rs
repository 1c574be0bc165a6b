//! Fixed-step classical Runge–Kutta driver and the geodesic flow right-hand sides.

use crate::error::{GeoError, Result};
use crate::manifold::Manifold;

/// Scratch buffers for one RK4 integration.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// One step of size `dt` from time `t`.
    pub fn step<F>(&mut self, y: &mut [f64], t: f64, dt: f64, rhs: &mut F) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        rhs(t, y, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k1[i];
        }
        rhs(t + 0.5 * dt, &self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k2[i];
        }
        rhs(t + 0.5 * dt, &self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        rhs(t + dt, &self.tmp, &mut self.k4)?;
        for i in 0..n {
            y[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        if y.iter().any(|c| !c.is_finite()) {
            return Err(GeoError::Integration { t: t + dt });
        }
        Ok(())
    }
}

/// Right-hand side of the geodesic equation, optionally extended by parallel transport of
/// a frame and by the variational (tangent-linear) equations.
///
/// State layout, with `d` the dimension:
/// `[p (d) | v (d) | frame (nf·d) | dp (nc·d) | dv (nc·d)]`, where frame vector `i` occupies
/// `frame[i*d..(i+1)*d]` and variational column `c` occupies `dp[c*d..(c+1)*d]`.
pub(crate) struct GeodesicFlow<'a> {
    pub model: &'a dyn Manifold,
    pub d: usize,
    pub n_frame: usize,
    pub n_var: usize,
    gam: Vec<f64>,
    dgam: Vec<f64>,
}

impl<'a> GeodesicFlow<'a> {
    pub fn new(model: &'a dyn Manifold, n_frame: usize, n_var: usize) -> Self {
        let d = model.dim();
        GeodesicFlow {
            model,
            d,
            n_frame,
            n_var,
            gam: vec![0.0; d * d * d],
            dgam: if n_var > 0 { vec![0.0; d * d * d * d] } else { Vec::new() },
        }
    }

    pub fn len(&self) -> usize {
        self.d * (2 + self.n_frame + 2 * self.n_var)
    }

    pub fn frame_offset(&self) -> usize {
        2 * self.d
    }

    pub fn var_offset(&self) -> usize {
        self.d * (2 + self.n_frame)
    }

    pub fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let d = self.d;
        let p = &y[..d];
        let v = &y[d..2 * d];
        if let Err(e) = self.model.check_point(p) {
            return Err(GeoError::ChartExit {
                t,
                reason: e.to_string(),
            });
        }
        self.model
            .christoffel_into(p, &mut self.gam)
            .map_err(|e| GeoError::ChartExit {
                t,
                reason: e.to_string(),
            })?;
        let g = &self.gam;
        let d2 = d * d;
        dy[..d].copy_from_slice(v);
        for k in 0..d {
            let mut a = 0.0;
            for i in 0..d {
                for j in 0..d {
                    a += g[k * d2 + i * d + j] * v[i] * v[j];
                }
            }
            dy[d + k] = -a;
        }
        let fo = self.frame_offset();
        for f in 0..self.n_frame {
            let e = &y[fo + f * d..fo + (f + 1) * d];
            for k in 0..d {
                let mut a = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        a += g[k * d2 + i * d + j] * v[i] * e[j];
                    }
                }
                dy[fo + f * d + k] = -a;
            }
        }
        if self.n_var > 0 {
            self.model
                .christoffel_derivative_into(p, &mut self.dgam)
                .map_err(|e| GeoError::ChartExit {
                    t,
                    reason: e.to_string(),
                })?;
            let dg = &self.dgam;
            let d3 = d2 * d;
            let vo = self.var_offset();
            let nc = self.n_var;
            for c in 0..nc {
                let dp = &y[vo + c * d..vo + (c + 1) * d];
                let dv = &y[vo + nc * d + c * d..vo + nc * d + (c + 1) * d];
                for k in 0..d {
                    dy[vo + c * d + k] = dv[k];
                    let mut a = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            let vij = v[i] * v[j];
                            let mut s = 0.0;
                            for l in 0..d {
                                s += dg[l * d3 + k * d2 + i * d + j] * dp[l];
                            }
                            a += s * vij + 2.0 * g[k * d2 + i * d + j] * v[i] * dv[j];
                        }
                    }
                    dy[vo + nc * d + c * d + k] = -a;
                }
            }
        }
        Ok(())
    }
}
