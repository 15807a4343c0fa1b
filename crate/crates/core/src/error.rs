use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum UqeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid DGP specification: {0}")]
    InvalidSpec(String),

    #[error("estimation failure: {reason} (iterations: {iterations}, gradient max-norm: {gradient_norm:.3e})")]
    EstimationFailure {
        reason: String,
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("weak intervention: |T1| = {t1:.3e} is below {threshold:.0e}")]
    WeakIntervention { t1: f64, threshold: f64 },

    #[error("degenerate density: f_Y(y_tau) = {f_hat:.3e} is below {threshold:.0e}")]
    DegenerateDensity { f_hat: f64, threshold: f64 },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("grid point {u} lies outside the fitted propensity range [{lo}, {hi}]")]
    Extrapolation { u: f64, lo: f64, hi: f64 },

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl UqeError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            UqeError::InvalidInput(_)
            | UqeError::InvalidSpec(_)
            | UqeError::Schema(_)
            | UqeError::Parse { .. }
            | UqeError::Extrapolation { .. }
            | UqeError::Unsupported(_)
            | UqeError::Io(_) => 2,
            UqeError::EstimationFailure { .. }
            | UqeError::Singular(_)
            | UqeError::WeakIntervention { .. }
            | UqeError::DegenerateDensity { .. }
            | UqeError::DegenerateVariance(_)
            | UqeError::QuadratureFailure(_) => 3,
            UqeError::InternalConsistency(_) => 4,
        }
    }

    /// Short label used when tallying failed Monte Carlo replications.
    pub fn kind(&self) -> &'static str {
        match self {
            UqeError::InvalidInput(_) => "invalid_input",
            UqeError::InvalidSpec(_) => "invalid_spec",
            UqeError::EstimationFailure { .. } => "separation_or_nonconvergence",
            UqeError::Singular(_) => "singular_system",
            UqeError::WeakIntervention { .. } => "weak_intervention",
            UqeError::DegenerateDensity { .. } => "degenerate_density",
            UqeError::DegenerateVariance(_) => "degenerate_variance",
            UqeError::Unsupported(_) => "unsupported",
            UqeError::Extrapolation { .. } => "extrapolation",
            UqeError::QuadratureFailure(_) => "quadrature_failure",
            UqeError::InternalConsistency(_) => "internal_consistency",
            UqeError::Schema(_) => "schema",
            UqeError::Parse { .. } => "parse",
            UqeError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for UqeError {
    fn from(err: std::io::Error) -> Self {
        UqeError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, UqeError>;
