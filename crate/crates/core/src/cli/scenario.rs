//! Scenario files: one command plus its options, in the same JSON format as manifold
//! declarations. Validation reports every schema and range problem without running anything.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::manifold::{builtin_names, ManifoldDecl, ManifoldModel};

pub const MANIFOLD_TYPES: [&str; 3] = ["sphere", "flat_torus", "revolution"];
pub const GRIDS: [&str; 2] = ["coarse", "fine"];
pub const SUITES: [&str; 2] = ["core", "full"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Geodesic,
    Focal,
    Cut,
    Domain,
    MtwScan,
    Tensor,
    Segment,
    Convexity,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Geodesic => "geodesic",
            Command::Focal => "focal",
            Command::Cut => "cut",
            Command::Domain => "domain",
            Command::MtwScan => "mtw-scan",
            Command::Tensor => "tensor",
            Command::Segment => "segment",
            Command::Convexity => "convexity",
            Command::Verify => "verify",
        }
    }
}

/// A single run. Unset options take per-command defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub manifold: ManifoldDecl,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    /// Second segment endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    /// Geodesic parameter range for `geodesic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Direction angle in the orthonormal frame at `x`, instead of `v`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<String>,
    /// Generator draws for the differential-inequality checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Number of second-derivative checks on a segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hddot: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
}

impl Scenario {
    pub fn new(manifold: ManifoldDecl, command: Command) -> Self {
        Scenario {
            manifold,
            command,
            x: None,
            v: None,
            v1: None,
            xi: None,
            eta: None,
            t: None,
            theta: None,
            n: None,
            step: None,
            tol: None,
            seed: 0,
            grid: None,
            suite: None,
            trials: None,
            hddot: None,
            out: None,
            svg: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn diag(field: &str, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        field: field.into(),
        message: message.into(),
    }
}

/// Manifold argument: a built-in name, a path to a declaration file, or inline JSON.
pub fn resolve_manifold(arg: &str) -> Result<ManifoldDecl> {
    let trimmed = arg.trim();
    if trimmed.starts_with('{') {
        return serde_json::from_str(trimmed).map_err(|e| GeoError::Parse {
            field: "manifold".into(),
            message: e.to_string(),
        });
    }
    let p = Path::new(trimmed);
    if p.is_file() {
        let text = std::fs::read_to_string(p)?;
        return serde_json::from_str(&text).map_err(|e| GeoError::Parse {
            field: format!("manifold ({})", p.display()),
            message: e.to_string(),
        });
    }
    Ok(ManifoldDecl::Named(trimmed.to_string()))
}

/// Structural checks on the raw manifold value, giving readable messages where the untagged
/// declaration would only say that nothing matched.
fn manifold_diagnostics(v: &serde_json::Value) -> Vec<Diagnostic> {
    match v {
        serde_json::Value::String(s) => {
            if builtin_names().contains(&s.as_str()) {
                vec![]
            } else {
                vec![diag(
                    "manifold",
                    format!("unknown built-in '{s}'; valid built-ins: {}", builtin_names().join(", ")),
                )]
            }
        }
        serde_json::Value::Object(o) => match o.get("type").and_then(|t| t.as_str()) {
            None => vec![diag("manifold.type", format!("missing; valid types: {}", MANIFOLD_TYPES.join(", ")))],
            Some(t) if !MANIFOLD_TYPES.contains(&t) => vec![diag(
                "manifold.type",
                format!("unknown manifold type '{t}'; valid types: {}", MANIFOLD_TYPES.join(", ")),
            )],
            Some(_) => match serde_json::from_value::<crate::manifold::ExplicitDecl>(v.clone()) {
                Ok(_) => vec![],
                Err(e) => vec![diag("manifold.params", e.to_string())],
            },
        },
        _ => vec![diag("manifold", "expected a built-in name or a declaration object")],
    }
}

fn positive(field: &str, v: Option<f64>, max: f64, out: &mut Vec<Diagnostic>) {
    if let Some(v) = v {
        if !(v > 0.0 && v <= max) {
            out.push(diag(field, format!("range violation: {v} not in (0, {max}]")));
        }
    }
}

/// Range and consistency diagnostics for a parsed scenario.
pub fn check_scenario(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let model = match ManifoldModel::from_decl(&s.manifold) {
        Ok(m) => Some(m),
        Err(e) => {
            out.push(diag("manifold", e.to_string()));
            None
        }
    };
    positive("step", s.step, 0.1, &mut out);
    positive("tol", s.tol, 1.0, &mut out);
    positive("t", s.t, 1e3, &mut out);
    let n_min = match s.command {
        Command::Segment => 32,
        Command::Domain | Command::Convexity => 8,
        _ => 1,
    };
    if let Some(n) = s.n {
        if n < n_min || n > 100_000 {
            out.push(diag("n", format!("range violation: {n} not in [{n_min}, 100000]")));
        }
    }
    if let Some(g) = &s.grid {
        if !GRIDS.contains(&g.as_str()) {
            out.push(diag("grid", format!("unknown grid '{g}'; valid grids: {}", GRIDS.join(", "))));
        }
    }
    if let Some(g) = &s.suite {
        if !SUITES.contains(&g.as_str()) {
            out.push(diag("suite", format!("unknown suite '{g}'; valid suites: {}", SUITES.join(", "))));
        }
    }
    if s.trials.is_some_and(|t| t == 0 || t > 1_000_000) {
        out.push(diag("trials", "range violation: must be in [1, 1000000]"));
    }
    if let Some(m) = &model {
        let d = m.dim();
        for (name, val) in [("x", &s.x), ("v", &s.v), ("v1", &s.v1), ("xi", &s.xi), ("eta", &s.eta)] {
            if let Some(val) = val {
                if val.len() != d {
                    out.push(diag(name, format!("expected {d} components, got {}", val.len())));
                } else if val.iter().any(|c| !c.is_finite()) {
                    out.push(diag(name, "components must be finite"));
                }
            }
        }
        if let Some(x) = &s.x {
            if x.len() == d {
                if let Err(e) = m.check_point(x) {
                    out.push(diag("x", e.to_string()));
                }
            }
        }
    }
    let need = |field: &str, present: bool, out: &mut Vec<Diagnostic>| {
        if !present {
            out.push(diag(field, format!("required by '{}'", s.command.name())));
        }
    };
    match s.command {
        Command::Geodesic | Command::Focal => {
            need("x", s.x.is_some(), &mut out);
            need("v", s.v.is_some() || s.theta.is_some(), &mut out);
        }
        Command::Cut => {
            need("x", s.x.is_some(), &mut out);
            need("v", s.v.is_some() || s.theta.is_some(), &mut out);
        }
        Command::Domain => need("x", s.x.is_some(), &mut out),
        Command::Tensor => {
            need("x", s.x.is_some(), &mut out);
            need("xi", s.xi.is_some(), &mut out);
            need("eta", s.eta.is_some(), &mut out);
        }
        Command::Segment => {
            need("x", s.x.is_some(), &mut out);
            need("v", s.v.is_some(), &mut out);
            need("v1", s.v1.is_some(), &mut out);
        }
        Command::Convexity => {
            if s.x.is_none() && s.trials.is_none() {
                out.push(diag("x", "convexity needs 'x' (domain test) or 'trials' (inequality checks)"));
            }
        }
        Command::MtwScan | Command::Verify => {}
    }
    if let (Some(v), true) = (&s.v, matches!(s.command, Command::Geodesic | Command::Focal | Command::Cut)) {
        if v.iter().all(|c| *c == 0.0) {
            out.push(diag("v", "must be nonzero"));
        }
    }
    out
}

/// Parse scenario text, reporting syntax errors with line and column.
pub fn parse_scenario(text: &str) -> std::result::Result<Scenario, Vec<Diagnostic>> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        vec![diag(
            "<syntax>",
            format!("line {}, column {}: {e}", e.line(), e.column()),
        )]
    })?;
    let mut out = Vec::new();
    match raw.get("manifold") {
        Some(m) => out.extend(manifold_diagnostics(m)),
        None => out.push(diag("manifold", "missing")),
    }
    if !out.is_empty() {
        return Err(out);
    }
    serde_json::from_value::<Scenario>(raw).map_err(|e| vec![diag("<schema>", e.to_string())])
}

/// Diagnostics for a scenario file without executing it; empty when the file is valid.
pub fn validate(path: &Path) -> Result<Vec<Diagnostic>> {
    let text = std::fs::read_to_string(path)?;
    Ok(match parse_scenario(&text) {
        Ok(s) => check_scenario(&s),
        Err(d) => d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_scenario_has_no_diagnostics() {
        let s = parse_scenario(r#"{"manifold": "sphere_r1", "command": "cut", "x": [1.0, 0.5], "theta": 0.3}"#).unwrap();
        assert!(check_scenario(&s).is_empty());
    }

    #[test]
    fn zero_step_names_the_field() {
        let s = parse_scenario(r#"{"manifold": "torus_2pi", "command": "geodesic", "x": [0, 0], "v": [1, 0], "step": 0}"#)
            .unwrap();
        let d = check_scenario(&s);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].field, "step");
        assert!(d[0].message.contains("range violation"));
    }

    #[test]
    fn unknown_manifold_type_lists_valid_types() {
        let d = parse_scenario(r#"{"manifold": {"type": "ellipsoid", "params": {}}, "command": "verify"}"#).unwrap_err();
        assert_eq!(d[0].field, "manifold.type");
        for t in MANIFOLD_TYPES {
            assert!(d[0].message.contains(t));
        }
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let d = parse_scenario("{\n  \"manifold\": \"sphere_r1\",\n  \"command\": verify\n}").unwrap_err();
        assert!(d[0].message.starts_with("line 3"), "{}", d[0].message);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let d = parse_scenario(r#"{"manifold": "sphere_r1", "command": "verify", "stepp": 1}"#).unwrap_err();
        assert!(d[0].message.contains("stepp"));
    }
}
