//! The PyNET-QxQ student and the five-level teacher pyramid.

mod config;
mod layers;
mod network;

pub use config::{HeadActivation, ModelConfig, UpsampleKind};
pub use layers::{
    subpixel_upsample, Block, Conv, Init, MultiConvBlock, PairedBlock, ParamStore, Upsampler,
    LEAKY_SLOPE,
};
pub use network::{Forward, Network, NetworkKind, Snapshot, StudentOutput, DISTILL_TAP};
