//! U-Net, U2-Net and BU-Net over the engine.
//!
//! All three share one topology: five encoder blocks (the fifth is the
//! bottleneck) separated by 2x2 max pooling, four decoder blocks each fed by
//! nearest upsampling concatenated with the matching encoder output, and a
//! final 1x1 convolution. They differ only in where dropout sits and in the
//! BU-Net's extra log-variance output.

pub mod bunet;
pub mod checkpoint;
pub mod network;
pub mod spec;

pub use bunet::bunet_loss;
pub use checkpoint::{load_checkpoint, read_checkpoint_spec, save_checkpoint};
pub use network::{ConvBlock, Network, Tape};
pub use spec::{ArchitectureSpec, Variant, DECODER_BLOCKS, ENCODER_BLOCKS, SPATIAL_MULTIPLE};

use crate::error::Result;
use crate::rng::RngState;

/// Builds a freshly initialised network for `spec`.
pub fn build_network(spec: ArchitectureSpec, rng: &mut RngState) -> Result<Network> {
    Network::build(spec, rng)
}
