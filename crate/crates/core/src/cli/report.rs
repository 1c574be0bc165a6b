//! Run reports: results, pass/fail checks with their tolerances, verdict findings, and errors.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::scenario::Scenario;
use crate::error::GeoError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationResult {
    pub operation: String,
    pub value: Value,
}

/// A numerical self-consistency check; failures make the run fail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub operation: String,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub pass: bool,
}

/// A reported verdict about the geometry (e.g. a failing MTW scan); never a run failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub id: String,
    pub operation: String,
    pub verdict: bool,
    pub detail: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub operation: String,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub checks: usize,
    pub passed: usize,
    pub failed: usize,
    pub errors: usize,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub scenario: Scenario,
    pub results: Vec<OperationResult>,
    pub checks: Vec<Check>,
    pub findings: Vec<Finding>,
    pub errors: Vec<ErrorEntry>,
    pub artifacts: Vec<String>,
    pub summary: Summary,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn new(scenario: Scenario) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario,
            results: Vec::new(),
            checks: Vec::new(),
            findings: Vec::new(),
            errors: Vec::new(),
            artifacts: Vec::new(),
            summary: Summary::default(),
            wall_time_s: 0.0,
        }
    }

    pub fn result<T: Serialize>(&mut self, operation: &str, value: &T) {
        let value = serde_json::to_value(value).unwrap_or_else(|e| Value::String(format!("unserializable: {e}")));
        self.results.push(OperationResult {
            operation: operation.into(),
            value,
        });
    }

    /// Record `value ≤ tolerance` as a check.
    pub fn check(&mut self, id: &str, operation: &str, value: f64, tolerance: f64, samples: usize) {
        self.checks.push(Check {
            id: id.into(),
            operation: operation.into(),
            value,
            tolerance,
            samples,
            pass: value <= tolerance,
        });
    }

    pub fn finding<T: Serialize>(&mut self, id: &str, operation: &str, verdict: bool, detail: &T) {
        self.findings.push(Finding {
            id: id.into(),
            operation: operation.into(),
            verdict,
            detail: serde_json::to_value(detail).unwrap_or(Value::Null),
        });
    }

    pub fn error(&mut self, operation: &str, e: &GeoError) {
        self.errors.push(ErrorEntry {
            operation: operation.into(),
            kind: e.kind().into(),
            message: e.to_string(),
        });
    }

    /// Unwrap a module result, recording the error under `operation`.
    pub fn capture<T>(&mut self, operation: &str, r: crate::error::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.error(operation, &e);
                None
            }
        }
    }

    pub fn finish(&mut self) {
        let passed = self.checks.iter().filter(|c| c.pass).count();
        self.summary = Summary {
            checks: self.checks.len(),
            passed,
            failed: self.checks.len() - passed,
            errors: self.errors.len(),
            ok: passed == self.checks.len() && self.errors.is_empty(),
        };
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with the wall-time field removed, for reproducibility comparisons.
    pub fn to_json_without_wall_time(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Value::Object(o) = &mut v {
            o.remove("wall_time_s");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }
}
