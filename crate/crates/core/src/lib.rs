//! Class-incremental learning with generative replay through indirect
//! feature matching: a class-conditional GAN whose discriminator judges the
//! classifier's features of generated images.

pub mod adaptive_coeff;
pub mod augmentation;
pub mod autograd;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod task_stream;
pub mod trainer;

pub use error::{Error, Result};
