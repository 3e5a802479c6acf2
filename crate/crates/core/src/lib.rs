//! Building blocks of a dynamic lightweight high-resolution pose network.
//!
//! The crate is `no_std` (it needs `alloc`) and is organised bottom-up:
//!
//! * [`tensor`]: a dense NCHW tensor and the primitive numeric kernels.
//! * [`autograd`]: the [`Graph`](autograd::Graph) abstraction every layer is
//!   written against, a reverse-mode [`Tape`](autograd::Tape) and a
//!   central-difference gradient checker.
//! * [`dsc`]: split-concat-shuffle depthwise convolution with dynamic kernel
//!   aggregation.
//! * [`acm`]: adaptive context pooling, shifting and weighting, with the dense
//!   (cross-branch) and global instantiations.
//! * [`blocks`]: the multi-scale context block, the global context stem block,
//!   multi-scale fusion and branch transitions.
//! * [`network`]: configuration, model construction, forward pass and heatmap
//!   decoding.
//! * [`complexity`]: static parameter and multiply-add accounting.
//!
//! File formats, configuration files and the command line live in the
//! companion `dite-cli` crate.

#![no_std]

extern crate alloc;

pub mod acm;
pub mod autograd;
pub mod blocks;
pub mod checks;
pub mod complexity;
pub mod dsc;
mod error;
pub mod layers;
pub mod network;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Real, Shape, Tensor};
