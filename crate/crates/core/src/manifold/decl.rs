//! Declarative manifold descriptions (JSON) and the named built-in models.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FlatTorus, Manifold, Profile, ProfileBasis, Revolution, Sphere};
use crate::error::{GeoError, Result};

const DEFAULT_POLE_GUARD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileDecl {
    pub basis: ProfileBasis,
    pub coeffs: Vec<f64>,
    pub u_range: [f64; 2],
    /// Fourier period; defaults to the length of `u_range`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

/// A manifold either by built-in name or by explicit parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifoldDecl {
    Named(String),
    Explicit(ExplicitDecl),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum ExplicitDecl {
    Sphere {
        #[serde(default = "one")]
        radius: f64,
    },
    FlatTorus {
        #[serde(default = "two_pi")]
        period: f64,
    },
    Revolution {
        profile: ProfileDecl,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pole_guard: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn two_pi() -> f64 {
    2.0 * std::f64::consts::PI
}

/// A constructed model together with the declaration it came from.
#[derive(Clone)]
pub struct ManifoldModel {
    pub name: String,
    pub decl: ManifoldDecl,
    inner: Arc<dyn Manifold>,
}

impl fmt::Debug for ManifoldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManifoldModel")
            .field("name", &self.name)
            .field("model", &self.inner)
            .finish()
    }
}

impl ManifoldModel {
    pub fn from_decl(decl: &ManifoldDecl) -> Result<Self> {
        match decl {
            ManifoldDecl::Named(name) => builtin(name),
            ManifoldDecl::Explicit(e) => {
                let inner = build_explicit(e)?;
                Ok(ManifoldModel {
                    name: inner.label(),
                    decl: decl.clone(),
                    inner,
                })
            }
        }
    }

    /// Accepts a built-in name or a JSON declaration.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.starts_with('{') || trimmed.starts_with('"') {
            let decl: ManifoldDecl = serde_json::from_str(trimmed).map_err(|e| GeoError::Parse {
                field: "manifold".into(),
                message: e.to_string(),
            })?;
            Self::from_decl(&decl)
        } else {
            builtin(trimmed)
        }
    }

    pub fn as_dyn(&self) -> &dyn Manifold {
        self.inner.as_ref()
    }
}

impl std::ops::Deref for ManifoldModel {
    type Target = dyn Manifold;

    fn deref(&self) -> &Self::Target {
        self.inner.as_ref()
    }
}

fn build_explicit(e: &ExplicitDecl) -> Result<Arc<dyn Manifold>> {
    Ok(match e {
        ExplicitDecl::Sphere { radius } => Arc::new(Sphere::new(*radius)?),
        ExplicitDecl::FlatTorus { period } => Arc::new(FlatTorus::new(*period)?),
        ExplicitDecl::Revolution {
            profile,
            pole_guard,
        } => {
            let p = Profile {
                basis: profile.basis,
                coeffs: profile.coeffs.clone(),
                u_range: profile.u_range,
                period: profile.period.unwrap_or(profile.u_range[1] - profile.u_range[0]),
            };
            Arc::new(Revolution::new(p, pole_guard.unwrap_or(DEFAULT_POLE_GUARD))?)
        }
    })
}

pub fn builtin_names() -> &'static [&'static str] {
    &["sphere_r1", "sphere_r2", "torus_2pi", "dumbbell", "oblate"]
}

fn builtin_decl(name: &str) -> Option<ExplicitDecl> {
    use std::f64::consts::PI;
    Some(match name {
        "sphere_r1" => ExplicitDecl::Sphere { radius: 1.0 },
        "sphere_r2" => ExplicitDecl::Sphere { radius: 2.0 },
        "torus_2pi" => ExplicitDecl::FlatTorus { period: 2.0 * PI },
        // Ring with one bulge (r = 1.5, K = 4/3) and one waist (r = 0.5, K = −4).
        "dumbbell" => ExplicitDecl::Revolution {
            profile: ProfileDecl {
                basis: ProfileBasis::Fourier,
                coeffs: vec![1.0, 0.5, 0.0],
                u_range: [0.0, PI],
                period: None,
            },
            pole_guard: None,
        },
        // r = sin u + 0.08 sin³u: flattened at the poles (K ≈ 0.52) and more curved at the
        // equator (K ≈ 1.15).
        "oblate" => ExplicitDecl::Revolution {
            profile: ProfileDecl {
                basis: ProfileBasis::Fourier,
                coeffs: vec![0.0, 0.0, 1.06, 0.0, 0.0, 0.0, -0.02],
                u_range: [0.0, PI],
                period: Some(2.0 * PI),
            },
            pole_guard: None,
        },
        _ => return None,
    })
}

pub fn builtin(name: &str) -> Result<ManifoldModel> {
    let e = builtin_decl(name).ok_or_else(|| GeoError::Parse {
        field: "manifold".into(),
        message: format!(
            "unknown built-in manifold '{name}' (known: {})",
            builtin_names().join(", ")
        ),
    })?;
    Ok(ManifoldModel {
        name: name.to_string(),
        decl: ManifoldDecl::Named(name.to_string()),
        inner: build_explicit(&e)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_construct() {
        for n in builtin_names() {
            builtin(n).unwrap();
        }
    }

    #[test]
    fn json_declarations_parse() {
        let m = ManifoldModel::parse(r#"{"type":"sphere","params":{"radius":2.0}}"#).unwrap();
        assert!((m.diameter_bound() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        let m = ManifoldModel::parse(
            r#"{"type":"revolution","params":{"profile":{"basis":"fourier","coeffs":[2.0,0.5,0.0],"u_range":[0.0,6.283185307179586]}}}"#,
        )
        .unwrap();
        assert_eq!(m.dim(), 2);
        assert!(ManifoldModel::parse("\"torus_2pi\"").is_ok());
        assert!(ManifoldModel::parse("klein_bottle").is_err());
    }
}
