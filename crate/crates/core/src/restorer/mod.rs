//! The all-in-one restoration network: a transformer U-Net whose blocks are
//! steered by per-class scene descriptors and adaptive weights.

mod attention;
mod block;
mod config;
mod model;
mod unet;

pub use attention::{aioa, self_attention};
pub use block::{AioBlock, BlockTrace};
pub use config::{ModelConfig, MODEL_KEYS};
pub use model::{Model, ParamCounts};
pub use unet::{Restorer, RESTORER_PREFIX};
