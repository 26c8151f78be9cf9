//! Single object tracking from paired RGB frames and event-camera frames,
//! built on a small reverse-mode autograd tensor engine.
//!
//! The crate is organised bottom-up: [`tensor`] and [`nn`] provide the
//! numerics, [`event`] generates synthetic sequences and event frames,
//! [`model`] holds the tracker, [`metrics`] scores it, and [`harness`]
//! drives training and evaluation from a config file.

pub mod bbox;
pub mod error;
pub mod event;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use tensor::{no_grad, DType, Scalar, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/events.md")]
    mod events {}
    #[doc = include_str!("../../../book/src/pooler.md")]
    mod pooler {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
