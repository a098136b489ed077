//! Dense kernels, Adam, and power iteration.

mod adam;
mod matrix;
mod power;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::{axpy, cosine, dot, matmul, norm, Matrix};
pub use power::{
    top_singular_vector, top_singular_vector_of, RowOperator, SingularPair, SparseRows,
    SPECTRAL_TIE_GAP,
};
