//! clickhere-core: keypoint-conditioned viewpoint estimation without I/O.
//!
//! A small convolutional network predicts an object's viewpoint (azimuth,
//! elevation, in-plane tilt) from an image crop plus one human-provided
//! keypoint: its pixel location and semantic class. The keypoint drives a
//! softmax attention map over the depth columns of the last convolutional
//! layer; the attended features join the global image features before the
//! per-class angle classifiers.
//!
//! Everything here is `no_std` + `alloc`: the autodiff tensor kernel, the
//! network and its variants, rotation geometry and the training objective,
//! the software rasterizer that produces synthetic training data, the Adam
//! optimizer, the training loop, and the evaluation battery. File formats,
//! the CLI and the HTTP service live in the `clickhere` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod keypoint;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod render;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use geometry::{RotationMatrix, Viewpoint, ViewpointBins};
pub use keypoint::{KeypointClassVector, KeypointMap, MapKind};
pub use model::{Model, ModelConfig, ModelVariant, Parameters, WeightMap};
pub use tensor::{Tensor, TensorError};
