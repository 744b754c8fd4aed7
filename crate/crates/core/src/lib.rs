//! Time-variant neural Gaussian splatting on the CPU.
//!
//! A [`SceneModel`] holds anchors, tiny MLP heads and a learnable time
//! embedding table. For a camera and a time it decodes neural Gaussians
//! whose opacity and color depend on time while geometry does not; the
//! tile rasterizer composites them into an image and propagates gradients
//! back to every learnable tensor.

pub mod bench;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod raster;
mod real;
pub mod scene_io;
pub mod synth;
pub mod train;

pub use camera::Camera;
pub use error::{GtmError, Result};
pub use mlp::MlpParams;
pub use model::{
    decode_backward, decode_neural_gaussians, EncoderMode, GaussianGrads, Gaussians, ModelConfig, ModelGrads,
    NeuralGaussianBatch, SceneModel, TimeInput,
};
pub use real::Real;
pub use scene_io::{load_scene, save_scene};
pub use train::{TrainConfig, Trainer};
