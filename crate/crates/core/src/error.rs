use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible geometry: {0}")]
    GeometryInfeasible(String),

    #[error("collocation sampling failed: {0}")]
    Sampling(String),

    #[error("segment cap exceeded: {requested} segments requested, at most {cap} allowed")]
    SegmentCap { requested: usize, cap: usize },

    #[error("coupling point set is empty: {0}")]
    CouplingSet(String),

    #[error("solver did not converge after {cycles} cycles (last residual {last:.3e})")]
    SolverDiverged {
        cycles: usize,
        last: f64,
        residual_history: Vec<f64>,
    },

    #[error("invalid permeability: {0}")]
    InvalidPermeability(String),

    #[error("averaging failed: {0}")]
    Averaging(String),

    #[error("pressure drop is zero, Darcy inversion is singular")]
    SingularDrop,

    #[error("pressure-drop matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("argument outside the model domain: {0}")]
    Domain(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
