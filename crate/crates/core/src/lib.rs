//! Recurrent dense depth and ego-motion estimation from monocular video.
//!
//! The crate bundles a small reverse-mode tensor engine, a U-shaped
//! encoder/decoder with convolutional LSTM blocks, the training losses,
//! depth metrics, a synthetic video renderer, and the training/evaluation
//! harness that ties them together.

pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pose;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use pose::{euler_to_matrix, PoseVector};
