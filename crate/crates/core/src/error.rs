use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("unsupported size: {sites} sites need about {bytes} bytes, budget is {budget}")]
    UnsupportedSize { sites: usize, bytes: u64, budget: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no convergence after {iterations} matrix-vector products (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("ground state is degenerate (gap {0:e})")]
    DegenerateGroundState(f64),

    #[error("grid too small: {rows}x{cols}, need at least 3x3")]
    GridTooSmall { rows: usize, cols: usize },

    #[error("no angle offset yields two nonempty phase sets")]
    NoValidLabeling,

    #[error("phase set {0} is empty")]
    EmptyPhaseSet(&'static str),

    #[error(
        "matrix A is not indefinite (lambda_min {lambda_min:e}, lambda_max {lambda_max:e}): \
         the problem is degenerate unless A has strictly positive and strictly negative eigenvalues, \
         which fails when the labeled sets do not distinguish two phases (for example identical sets) \
         or when the observable window is too small to tell them apart"
    )]
    NotIndefinite { lambda_min: f64, lambda_max: f64 },

    #[error("states are identical (overlap {0})")]
    IdenticalStates(f64),

    #[error("states are degenerate (normalized overlap {0})")]
    DegenerateStates(f64),

    #[error("not a rank-one projector: {0}")]
    NotRankOne(String),

    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(..) => "invalid_spec",
            Error::UnsupportedSize { .. } => "unsupported_size",
            Error::Domain(..) => "domain",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoConvergence { .. } => "no_convergence",
            Error::IndexOutOfRange(..) => "index_out_of_range",
            Error::NotPsd(..) => "not_psd",
            Error::DegenerateGroundState(..) => "degenerate_ground_state",
            Error::GridTooSmall { .. } => "grid_too_small",
            Error::NoValidLabeling => "no_valid_labeling",
            Error::EmptyPhaseSet(..) => "empty_phase_set",
            Error::NotIndefinite { .. } => "not_indefinite",
            Error::IdenticalStates(..) => "identical_states",
            Error::DegenerateStates(..) => "degenerate_states",
            Error::NotRankOne(..) => "not_rank_one",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::SingularFit(..) => "singular_fit",
            Error::Config(..) => "config",
            Error::Io(..) => "io",
            Error::Json(..) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
