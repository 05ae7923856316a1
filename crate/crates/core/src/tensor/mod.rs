//! Dense numerical substrate: row-major `f64` matrices and the seeded PRNG.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("expected {expected} elements, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("index {index} out of bounds for length {bound}")]
    Index { index: usize, bound: usize },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    Argument(String),
}
