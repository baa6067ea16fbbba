//! Network blocks and the assembled deblurring model.

pub mod attention;
pub mod bottleneck;
pub mod decoder;
pub mod encoder;
pub mod model;
pub mod params;

pub use attention::{ChannelAttention, DualAttention, PixelAttention};
pub use bottleneck::{GlobalLocal, GlobalLocalOutput, TripleLocal};
pub use decoder::DecoderLevel;
pub use encoder::{AttentionEncoderLevel, EncoderOutput};
pub use model::{Attsf, AttsfModel, ModelConfig, IMAGE_CHANNELS};
pub use params::{conv_params, Bound, Conv2d, ParamBuilder, ParamId, ParamStore};
