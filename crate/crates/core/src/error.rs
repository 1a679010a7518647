use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell ({row}, {col}) outside {rows}x{cols} grid")]
    CellOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("action leaves grid: {action:?} from ({row}, {col})")]
    ActionLeavesGrid {
        action: crate::grid::Action,
        row: usize,
        col: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-positive distance: {0}")]
    NonPositiveDistance(f64),

    #[error("no samples for cell ({row}, {col}), gateway index {gateway}")]
    NoSamplesForCell { row: usize, col: usize, gateway: usize },

    #[error("datum unavailable: gateway index {0} has no RSS")]
    DatumUnavailable(usize),

    #[error("degenerate normalization: rss_max {max} <= rss_min {min}")]
    DegenerateNormalization { min: f64, max: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate batch statistics: train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),

    #[error("replay not warm: {len} tuples stored, need {needed}")]
    ReplayNotWarm { len: usize, needed: usize },

    #[error("empty action set")]
    EmptyActionSet,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("insufficient gateways: {usable} usable, need {needed}")]
    InsufficientGateways { usable: usize, needed: usize },

    #[error("degenerate geometry: damping limit reached")]
    DegenerateGeometry,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::DegenerateGeometry)
    }
}
