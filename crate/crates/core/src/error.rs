use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum KacError {
    #[error("no root of S in (0, 2]: {0}")]
    NoRootInRange(String),

    #[error("rate undefined at p = {p}: S(p) = {s} is not negative")]
    RateUndefined { p: f64, s: f64 },

    #[error("regime {regime} does not apply: {reason}")]
    InvalidRegime { regime: String, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("coupling unavailable: {0}")]
    CouplingUnavailable(String),

    #[error("fit unavailable: {usable} usable points, need at least 4")]
    FitUnavailable { usable: usize },

    #[error("x = {x} is outside the asymptotic range: next term {next_term:e} exceeds tolerance {tol:e}")]
    OutOfAsymptoticRange { x: f64, next_term: f64, tol: f64 },

    #[error("frequency grid is not closed under the kernel: {0}")]
    GridClosure(String),

    #[error("cf evolution unstable at t = {t}: max modulus {modulus}")]
    Instability { t: f64, modulus: f64 },

    #[error("malformed tail spec: {0}")]
    MalformedTailSpec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("experiment failed at t = {t} (replica {replica}): {source}")]
    Experiment {
        t: f64,
        replica: usize,
        #[source]
        source: Box<KacError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KacError>;
