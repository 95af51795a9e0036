//! Demosaicing for QxQ (4x4-grouped Bayer) sensors.
//!
//! The crate bundles everything between a headerless sensor dump and a
//! demosaiced sensor-level RGB image:
//!
//! - [`rawio`]: 3CCD and QxQ `.RAW` codecs, black-level compensation, PNG export
//! - [`cfa`]: CFA geometry, mosaicking, input packing, bilinear baseline
//! - [`tensor`]: a small reverse-mode autodiff tensor core and ADAM
//! - [`model`]: the PyNET-QxQ student and the enhanced-PyNET teacher
//! - [`losses`]: training losses and PSNR / MS-SSIM metrics
//! - [`distill`]: level-wise training and progressive distillation
//! - [`datapipe`]: hybrid dataset construction
//! - [`cli`]: the `qxqnet` command-line front end
//!
//! Runnable walkthroughs for each part live in `examples/`.

pub mod cfa;
pub mod checkpoint;
pub mod cli;
pub mod datapipe;
pub mod distill;
pub mod error;
pub mod image;
pub mod losses;
pub mod model;
pub mod rawio;
pub mod tensor;
pub mod tiling;

pub use error::{Error, Result};
