use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GneError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("player {player}: {detail}")]
    InvalidPlayer { player: usize, detail: String },

    #[error(
        "coupled constraint infeasible: no probe point with x_i in its box satisfies sum A_i x_i <= sum b_i \
         (max violation {violation:.3e})"
    )]
    Infeasible { violation: f64 },

    #[error("communication graph is not connected: node {0} is unreachable from node 0")]
    Disconnected(usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("self-loop at node {0}")]
    SelfLoop(usize),

    #[error("edge endpoint {node} out of range for {m} nodes")]
    NodeOutOfRange { node: usize, m: usize },

    #[error("pseudogradient has no affine form; monotonicity constants must be supplied by the caller")]
    NonAffine,

    #[error("pseudogradient is not strongly monotone (mu = {0:.6e})")]
    NotStronglyMonotone(f64),

    #[error("affine pseudogradient disagrees with the oracle by {0:.3e}")]
    OracleMismatch(f64),

    #[error("invalid monotonicity constants: {0}")]
    Constants(String),

    #[error("step sizes: {0}")]
    StepSize(String),

    #[error("dense assembly limited to {limit} rows, instance has {rows}")]
    TooLarge { rows: usize, limit: usize },

    #[error("reference solution failed: {0}")]
    Oracle(String),

    #[error("generator: {0}")]
    Generator(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = GneError> = std::result::Result<T, E>;
