use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("point {point:?} lies outside the reference domain of {shape}")]
    OutsideReferenceDomain { shape: &'static str, point: [f64; 3] },

    #[error("inverted element {elem}: det J = {det:.3e} at r = {r:?}")]
    InvertedElement { elem: usize, det: f64, r: [f64; 3] },

    #[error("degenerate level-set gradient |grad phi| = {norm:.3e} below {g_min:.1e}")]
    DegenerateLevelSet { norm: f64, g_min: f64 },

    #[error("conormal undefined: level-set normal parallel to boundary normal (|N x M| = {cross:.3e})")]
    ConormalUndefined { cross: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("validity error: {0}")]
    Validity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
