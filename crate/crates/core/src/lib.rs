//! Avatar auto-creation pipeline: procedural engines, dual-domain
//! part-compositional generators, GAN inversion, paired-data production and
//! a feed-forward avatar-vector estimator.

pub mod autodiff;
pub mod checkpoint;
pub mod data_production;
pub mod engines;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod gan_training;
pub mod generators;
pub mod image;
pub mod inversion;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Var32 = autodiff::Var<f32>;
pub type Var64 = autodiff::Var<f64>;
pub type Generator32 = generators::Generator<f32>;
pub type Generator64 = generators::Generator<f64>;
pub type Discriminator32 = generators::Discriminator<f32>;
pub type Discriminator64 = generators::Discriminator<f64>;
pub type Estimator32 = estimator::Estimator<f32>;
pub type Estimator64 = estimator::Estimator<f64>;
pub type PerceptualMetric32 = inversion::PerceptualMetric<f32>;
pub type PerceptualMetric64 = inversion::PerceptualMetric<f64>;
