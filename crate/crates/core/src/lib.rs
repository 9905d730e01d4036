//! Error-bounded lossy compression for univariate and multivariate time series.
//!
//! A small transformer autoencoder maps each window of samples to a short
//! binary code. The decoder's prediction is corrected by a uniformly quantized,
//! entropy-coded residual, so every reconstructed sample stays within the
//! user's maximum absolute error `eps` no matter how well the model fits.
//!
//! Pipeline stages live in their own modules:
//!
//! - [`data`]: loading, synthesis, windowing and channel flattening
//! - [`quantizer`]: uniform residual quantization and error verification
//! - [`entropy`]: adaptive arithmetic coding, bit packing, entropy accounting
//! - [`qel`]: L1/L2 and the quantized-entropy loss with its surrogate gradient
//! - [`btae`]: encoder, binarization, decoders, positional encodings, serialization
//! - [`compressor`]: training, containers, decompression, transfer, the CA baseline
//! - [`bench`] and [`cli`]: benchmark tables and the command-line surface

// `!(x > 0.0)` is how NaN is rejected alongside the range check; kernels take
// explicit shapes rather than bundling them.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bench;
pub mod btae;
mod bytes;
pub mod cli;
pub mod compressor;
pub mod data;
pub mod entropy;
pub mod error;
pub mod par;
pub mod qel;
pub mod quantizer;

pub use error::{Error, Result};
