use thiserror::Error;

/// Errors raised by the geometric engine.
///
/// Variants carry enough context to be surfaced verbatim in run reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("point {coords:?} outside chart domain: {reason}")]
    Domain { coords: Vec<f64>, reason: String },

    #[error("trajectory left the chart at t = {t}: {reason}")]
    ChartExit { t: f64, reason: String },

    #[error("integration produced a non-finite state at t = {t}")]
    Integration { t: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("grid resolution too coarse near t = {t}: {hint}")]
    Resolution { t: f64, hint: String },

    #[error("Lagrangian subspace is not a graph over the chosen splitting at t = {t}")]
    Splitting { t: f64 },

    #[error("finite-difference stencil unsafe: {0}")]
    StencilUnsafe(String),

    #[error("extended-cost branch lost: {0}")]
    Branch(String),

    #[error("cut time unresolved inside bracket [{lo}, {hi}]: {reason}")]
    UnresolvedCut { lo: f64, hi: f64, reason: String },

    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("sample at t = {t} sits on a kink")]
    Kink { t: f64 },

    #[error("parse error in {field}: {message}")]
    Parse { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl GeoError {
    pub fn domain(coords: &[f64], reason: impl Into<String>) -> Self {
        GeoError::Domain {
            coords: coords.to_vec(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            GeoError::Domain { .. } => "domain",
            GeoError::ChartExit { .. } => "chart_exit",
            GeoError::Integration { .. } => "integration",
            GeoError::Degenerate(_) => "degenerate",
            GeoError::Dimension { .. } => "dimension",
            GeoError::Resolution { .. } => "resolution",
            GeoError::Splitting { .. } => "splitting",
            GeoError::StencilUnsafe(_) => "stencil_unsafe",
            GeoError::Branch(_) => "branch",
            GeoError::UnresolvedCut { .. } => "unresolved_cut",
            GeoError::InconsistentInput(_) => "inconsistent_input",
            GeoError::Precondition(_) => "precondition",
            GeoError::Hypothesis(_) => "hypothesis",
            GeoError::Kink { .. } => "kink",
            GeoError::Parse { .. } => "parse",
            GeoError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for GeoError {
    fn from(e: std::io::Error) -> Self {
        GeoError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GeoError>;
