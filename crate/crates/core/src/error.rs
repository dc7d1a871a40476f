use std::path::PathBuf;

/// Errors produced by the calibration toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rotation angle {angle:.9} rad is too close to pi for a stable logarithm")]
    AngleNearPi { angle: f64 },

    #[error("time {t} outside interpolation range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("PCD parse error: {0}")]
    Parse(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("cloud has no per-point timestamps")]
    MissingPerPointTime,

    #[error("variable {0} is free but no factor touches it")]
    UnconstrainedVariable(usize),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("objective returned a non-finite value at {0:?}")]
    NonFiniteObjective(Vec<f64>),

    #[error("insufficient motion: yaw span {yaw_span_deg:.3} deg")]
    InsufficientMotion { yaw_span_deg: f64 },

    #[error("cost increased across re-association rounds ({previous:.6e} -> {current:.6e})")]
    DivergedSolve { previous: f64, current: f64 },

    #[error("no ground plane found: {0}")]
    NoGroundFound(String),

    #[error("degenerate geometry: condition number {0:.3e}")]
    DegenerateGeometry(f64),

    #[error("no terrain patch has enough ground points")]
    NoValidPatch,

    #[error("no map point has an evaluable neighborhood")]
    NoEvaluablePoints,

    #[error("pipeline stages incomplete: {0}")]
    IncompleteStages(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::Dataset(_) | Error::Io { .. } | Error::Parse(_) => 3,
            _ => 4,
        }
    }
}
