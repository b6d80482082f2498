//! Region-paired attention style transfer.
//!
//! Content and style images are encoded to feature grids, an attention map
//! relates every content cell to every style cell, and user-selected mask
//! pairs restrict which style cells each selected content cell may attend
//! to. The attention-weighted mean and standard deviation of the style
//! features then re-style the normalized content features before decoding.

pub mod codec;
pub mod error;
pub mod image;
pub mod mask;
pub mod segment;
pub mod stylizer;
pub mod tensor;

pub use codec::{decode, encode, load_weights, save_weights, ModelParams};
pub use error::{Error, Result};
pub use image::Image;
pub use mask::{Mask, MaskPair, MaskPairSet, Rle};
pub use segment::{segment, PromptSet, SegmenterConfig};
pub use stylizer::stylize;
