//! Tile-based inversion of symmetric positive definite matrices.
//!
//! The inverse is computed in three steps (tile Cholesky factorization,
//! triangular inversion of the factor, and the product `L^-T L^-1`), each
//! expressed as a sequential stream of tile kernels. The [`scheduler`]
//! unfolds a stream into a DAG from its read/write hazards and runs it on a
//! worker pool; [`analysis`] measures critical paths of those DAGs.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod kernels;
pub mod scheduler;
pub mod taskgen;
pub mod tile_matrix;

pub use error::{Error, Result};
pub use scheduler::{build_dag, execute, HazardKind, TaskDag};
pub use taskgen::{gen_inversion, LoopOrder, Placement, TaskStream, VariantConfig};
pub use tile_matrix::{generate_spd, max_abs_diff, DenseMatrix, Tile, TileMatrix};

/// Inverts an SPD matrix with the given tile order and variant.
/// The returned dense matrix is symmetric.
pub fn invert(a: &DenseMatrix, tile_order: usize, config: &VariantConfig) -> Result<DenseMatrix> {
    let tiled = TileMatrix::from_dense(a, tile_order)?;
    let stream = gen_inversion(tiled.tiles_per_dim(), config)?;
    let out = execute(&stream, tiled, config.workers)?;
    let mut dense = out.to_dense();
    dense.symmetrize_from_lower();
    Ok(dense)
}

/// `max |A X - I|`.
pub fn inverse_residual(a: &DenseMatrix, inverse: &DenseMatrix) -> Result<f64> {
    let product = a.matmul(inverse)?;
    max_abs_diff(&product, &DenseMatrix::identity(a.rows()))
}
