//! The three convolutional networks, their forward and backward passes,
//! the Adam optimizer and checkpoint serialization.

mod adam;
mod checkpoint;
mod conv;
mod network;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use network::{
    fdnn_spec, ppnn_spec, vcnn_spec, Activation, Gradients, LayerKind, LayerParams, LayerSpec, NetworkKind,
    NetworkParams, Trace, HIDDEN_CHANNELS,
};
pub use tensor::{FeatureMap, Scalar};
