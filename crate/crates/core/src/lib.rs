//! Conditional-adversarial single image dehazing.
//!
//! The crate covers the whole pipeline: synthesizing hazy training pairs from
//! clean images and depth maps, a small reverse-mode autodiff engine with the
//! convolutional layers the networks need, the encoder/decoder generator and
//! the pair discriminator, the training objectives, Adam, the two-phase
//! training loop, and PSNR/SSIM evaluation.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the element
//! type for the common cases (`f32` for training, `f64` for gradient checks).

pub mod checks;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod haze;
pub mod io;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod scene;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Eager, Graph, Unary};
pub use kernels::{Activation, BatchStats, ConvGeom, NormStats};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Generator32 = nn::Generator<f32>;
pub type Generator64 = nn::Generator<f64>;
pub type Discriminator32 = nn::Discriminator<f32>;
pub type Discriminator64 = nn::Discriminator<f64>;
pub type FeatureNet32 = nn::FeatureNet<f32>;
pub type FeatureNet64 = nn::FeatureNet<f64>;
