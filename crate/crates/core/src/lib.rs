//! Image compression with a standard JPEG codec between two convolutional
//! networks.
//!
//! A feature description network (FDNN) maps an image to a half-resolution
//! description that is JPEG-coded; a post-processing network (PPNN) restores
//! the full-resolution image from the decoded description. Because the codec
//! is not differentiable, a virtual codec network (VCNN) learns to imitate
//! codec + post-processing so that gradients can reach the FDNN during
//! training. Only the FDNN and PPNN are needed at deployment.

pub mod codec;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod losses;
pub mod networks;
pub mod trainer;

pub use error::{Error, Result};
pub use imaging::{load_image, Image, ResampleMethod};
pub use losses::LossValue;
pub use networks::{NetworkKind, NetworkParams};
