use std::io;

use thiserror::Error;

use crate::tile_matrix::TileId;

/// Errors produced by tiling, kernels, task generation and execution.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("shape mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// Cholesky pivot `k` (0-based, within the tile) was not positive.
    #[error("matrix is not positive definite: non-positive pivot at local index {k}")]
    NotPositiveDefinite { k: usize },

    /// Triangular operand has a zero on its diagonal at local index `k`.
    #[error("singular triangular tile: zero diagonal at local index {k}")]
    SingularTile { k: usize },

    #[error("unsupported kernel shape: {0}")]
    Contract(String),

    /// A kernel failed while executing the task with stream id `task`.
    #[error("task {task} ({label}) on {tile} failed: {source}")]
    Task {
        task: usize,
        label: String,
        tile: TileId,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
