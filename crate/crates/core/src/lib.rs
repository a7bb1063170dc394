//! Learned 2x upsampling of ViT feature maps (LiFT), its self-supervised
//! multi-scale training, baseline upsamplers, and the evaluation battery.

pub mod error;
pub mod eval;
pub mod io;
pub mod lift;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod upsample;

pub use error::{Error, FormatError, Result};
pub use lift::{init_lift, lift_apply_recursive, lift_forward, LiftConfig, LiftModel};
pub use tensor::{FeatureMap, Shape, Tensor};
pub use train::{ScaleTriplet, TrainConfig, Upsampler};
