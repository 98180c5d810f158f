//! Deterministic dense numerics: matrices, a tanh MLP with exact gradients,
//! AdamW, dropout, and a counter-based random stream.

mod adamw;
mod matrix;
mod mlp;
mod rng;
mod scalar;

pub use adamw::{AdamW, AdamWConfig};
pub use matrix::Matrix;
pub use mlp::{Dense, ForwardCache, Gradients, Head, Mlp};
pub use rng::RngStream;
pub use scalar::{axpy, dot, sigmoid, Scalar};
