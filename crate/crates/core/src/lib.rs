pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kan;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = vit::ModelParams<f32>;
pub type Model64 = vit::ModelParams<f64>;
pub type Adam32 = train::Adam<f32>;
pub type Adam64 = train::Adam<f64>;
