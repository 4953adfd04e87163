//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unsupported element degree k={0} (only k=0 is implemented)")]
    UnsupportedDegree(usize),

    #[error("incompatible finite element spaces: {0}")]
    SpaceMismatch(String),

    #[error("point {point:?} is outside the computational domain")]
    OutsideDomain { point: [f64; 3] },

    #[error(
        "density {value:.3e} fell below the positivity floor {floor:.1e} in cell {cell}; \
         the scheme does not limit the density"
    )]
    DensityFloor { cell: usize, value: f64, floor: f64 },

    #[error("conjugate gradient failed to converge: residual {residual:.3e} after {iters} iterations")]
    SolveFailed { iters: usize, residual: f64 },

    #[error("matrix is not positive definite (negative curvature encountered at iteration {iter})")]
    IndefiniteMatrix { iter: usize },

    #[error("fixed-point iteration did not converge: increment {increment:.3e} after {iters} iterations (dt={dt:.3e})")]
    PicardDiverged { iters: usize, increment: f64, dt: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
