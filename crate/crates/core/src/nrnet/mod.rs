//! The slice classifier: stem convolution, residual stages, an optional
//! nonlocal block, and a 1x1-convolution / average-pool / softmax head.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{
    build_variant, BlockConfig, ConvBlockConfig, DSResBlockConfig, NRNetConfig, NResBlockConfig,
    Variant, BN_EPS, BN_MOMENTUM,
};
pub use model::{
    nres_block, nres_forward, BnStats, Forward, Mode, NRNet, NResOutput, NResParams, NResTrace,
    NResVars,
};
