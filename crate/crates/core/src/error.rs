//! Error type shared by every module of the laboratory.

/// Unified error enumeration.
///
/// Numerical routines in this crate fail loudly: a solver that does not
/// converge, a time step that violates the stability bound, or a path that is
/// not actually a geodesic all surface as explicit variants instead of silent
/// garbage values.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// A field or path was used with a backend it does not belong to.
    #[error("backend mismatch: {0}")]
    BackendMismatch(String),

    /// A caller-supplied parameter is out of its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Requested time step exceeds the diffusion stability bound.
    #[error("time step {dt:.3e} exceeds stability limit {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },

    /// A shrinking sphere reached (numerical) extinction before the
    /// requested final time.
    #[error("sphere flow extinct at t = {t:.6}")]
    Extinction { t: f64 },

    /// A time query fell outside the stored range of a history.
    #[error("time {t:.6} outside stored range [{lo:.6}, {hi:.6}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    /// A potential failed the compatibility normalization check.
    #[error("incompatible potential: weighted mass = {mass:.12e}, expected 1")]
    Incompatible { mass: f64 },

    /// An iterative solver exhausted its budget.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// The two-point geodesic boundary-value solver found no solution.
    #[error("boundary-value solve failed: {0}")]
    BvpFailure(String),

    /// A path handed to a geodesic-only routine fails the Euler-Lagrange
    /// residual test.
    #[error("path is not a geodesic: sup residual {0:.3e}")]
    NotAGeodesic(f64),

    /// The speed of a shot geodesic exceeded the a-priori bound by a wide
    /// margin, indicating blow-up of the integration.
    #[error("geodesic speed blow-up: {0}")]
    SpeedBlowUp(String),

    /// The trace-free defect of a conformally projected tensor flow grew
    /// beyond the configured threshold.
    #[error("trace-free defect {defect:.3e} exceeds {threshold:.3e} of the conformal part")]
    DefectThreshold { defect: f64, threshold: f64 },

    /// An integrand on the euclidean backend does not decay.
    #[error("non-decaying integrand on euclidean backend: {0}")]
    NonDecaying(String),

    /// Underlying I/O failure (export/import, reports).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Text parse failure (history import, experiment configs).
    #[error("parse error: {0}")]
    Parse(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, LabError>;
