use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("graph slope {found} exceeds declared Lipschitz bound {declared}")]
    SlopeExceedsBound { found: f64, declared: f64 },

    #[error("non-finite value at vertex {0}")]
    NonFiniteValue(usize),

    #[error("point {0:?} lies outside the mesh")]
    OutsideDomain([f64; 3]),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficient field used with wrong value type: expected {expected}")]
    WrongValueType { expected: &'static str },

    #[error("function is not mean-zero: integral {integral:e} exceeds tolerance {tol:e}")]
    NotMeanZero { integral: f64, tol: f64 },

    #[error("compatibility condition violated: residual {0:e}")]
    CompatibilityViolated(f64),

    #[error("operator does not reduce to drift form: worst hat functional {0:e}")]
    NotReducible(f64),

    #[error("kernel dimension ambiguous: candidates {0} and {1} (gap ratio {2:.2})")]
    AmbiguousKernel(usize, usize, f64),

    #[error("linear solver: {0}")]
    Solver(String),

    #[error("quadrature rule failed exactness check at order {order}: error {err:e}")]
    QuadratureExactness { order: usize, err: f64 },

    #[error("expression: {0}")]
    Expr(String),

    #[error("config: {0}")]
    Config(String),

    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
