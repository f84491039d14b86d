//! Synthetic data: parametric meshes, a z-buffer software rasterizer,
//! keypoint visibility, crop jitter, flip augmentation and dataset assembly.

mod augment;
pub mod catalog;
mod generate;
mod image;
mod mesh;
mod raster;

use alloc::string::String;
use thiserror::Error;

pub use augment::{
    add_noise, crop_jitter, flip_augment, jittered_box, occlude, resample, CropBox, Domain, Instance,
    Occluder, Split, MIN_CROP,
};
pub use generate::{
    generate_dataset, generate_render, quantize_angle, render_rng, sample_camera, sample_light, CameraRanges,
    ClassCount, Dataset, DatasetSummary, GenerationConfig, RenderRecord, ANGLE_STEPS_PER_DEGREE,
};
pub use image::Image;
pub use mesh::{point_triangle_distance, Keypoint3, MeshBuilder, ObjectSpec, Triangle, Vec3};
pub use raster::{
    camera_rotation, render, Background, Camera, CameraPose, RenderOptions, RenderedSample, VisibleKeypoint,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("degenerate camera: part of the object is behind the near plane")]
    DegenerateCamera,
    #[error("crop jitter kept producing crops smaller than the minimum")]
    DegenerateCrop,
    #[error("empty range for `{0}`")]
    EmptyRange(&'static str),
    #[error("empty class: {0}")]
    EmptyClass(String),
    #[error("invalid `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
}
