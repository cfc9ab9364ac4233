//! Block-wise bit-level weight quantization and PACT activation clipping.

mod bitlayer;
mod grid;
mod metrics;
mod pact;
mod reshape;

pub use bitlayer::BitLayer;
pub use grid::WbGrid;
pub use metrics::{
    compression_ratio, regularizer, regularizer_coefficients, total_loss, CompressionRatio,
};
pub use pact::{
    act_levels, fake_quantize, pact, pact_grad, quantize_activation, quantize_level, PactParam,
    MIN_BETA,
};
pub use reshape::{reshape_conv, unreshape_conv};

/// Default OU height (wordlines).
pub const DEFAULT_OU_HEIGHT: usize = 9;
/// Default OU width (bitlines).
pub const DEFAULT_OU_WIDTH: usize = 8;
/// Initial precision of every weight block.
pub const DEFAULT_WEIGHT_BITS: u32 = 8;
