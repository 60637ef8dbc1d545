//! Neural-network building blocks on top of candle tensors.

pub(crate) mod conv;
mod layers;
mod optim;
mod params;
pub(crate) mod real;

pub use conv::{conv2d, ConvParams};
pub use layers::{bce_with_logits, global_avg_pool, leaky_relu, resize_bilinear, sigmoid, upsample, Conv2d, Linear};
pub use optim::Adam;
pub use params::{Checkpoint, Init, ParamStore};
