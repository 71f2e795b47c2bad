use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative order {requested} exceeds the supported maximum {max}")]
    UnsupportedOrder { requested: usize, max: usize },

    #[error("quadrature for {context} failed the node-doubling check: {coarse:e} vs {refined:e}")]
    QuadratureAccuracy {
        context: &'static str,
        coarse: f64,
        refined: f64,
    },

    #[error(
        "derivative set is numerically dependent at order {order} (surviving norm {residual:e})"
    )]
    RankDeficient { order: usize, residual: f64 },

    #[error("truncation residual {residual:e} exceeds {limit:e} at displacement {displacement}; increase the basis dimension")]
    Truncation {
        displacement: f64,
        residual: f64,
        limit: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "Fisher matrix is singular (condition {condition:e}, null direction {null_direction:?})"
    )]
    Singular {
        null_direction: [f64; 3],
        condition: f64,
    },

    #[error("small-separation expansion degenerates at q = 1/2; use exact inversion")]
    BalancedIntensity,

    #[error("basis displacement {basis} does not match measurement displacement {measurement}")]
    DisplacementMismatch { basis: f64, measurement: f64 },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid PSF table: {0}")]
    Table(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used in machine-readable CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedOrder { .. } => "unsupported_order",
            Error::QuadratureAccuracy { .. } => "quadrature_accuracy",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Truncation { .. } => "truncation",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Singular { .. } => "singular",
            Error::BalancedIntensity => "balanced_intensity",
            Error::DisplacementMismatch { .. } => "displacement_mismatch",
            Error::FitFailure(_) => "fit_failure",
            Error::DegenerateData(_) => "degenerate_data",
            Error::Table(_) => "table",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
