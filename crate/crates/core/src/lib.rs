//! Target-only training of a small conditional image-to-image model and a
//! real-time instrument loop that runs it on live frames under performer
//! control.
//!
//! Training never needs input images: each target is pushed through a fixed,
//! randomly parameterized preprocessing graph ([`preprocess`]) to synthesize
//! its paired input on the fly. The same graph, with performer-set
//! parameters, turns camera frames into model inputs at performance time
//! ([`instrument`]).

pub mod codec;
pub mod config;
pub mod control;
pub mod dataset;
mod error;
pub mod imaging;
pub mod instrument;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod protocol;
#[cfg(feature = "net")]
pub mod service;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use imaging::Image8;
pub use tensor::Tensor;
