use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside its valid range {range}")]
    Range {
        name: &'static str,
        value: f64,
        range: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("dense construction limited to {max} sites, got {sites}")]
    SizeGuard { sites: usize, max: usize },

    #[error("term spans {span} sites, the MPO builder supports at most {max}")]
    UnsupportedRange { span: usize, max: usize },

    #[error("term coefficient {0} is not real after factoring Pauli-Y phases")]
    ComplexCoefficient(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("Krylov solver failure: {0}")]
    Solver(String),

    #[error("unphysical doubled-space state: {0}")]
    Unphysical(String),

    #[error("PT symmetry broken: ground energy {re} + {im}i")]
    PtBroken { re: f64, im: f64 },

    #[error("data collapse: {0}")]
    Coverage(String),

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
