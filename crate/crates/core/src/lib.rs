pub mod denoiser;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mle;
pub mod optics;
pub mod povm;
pub mod process;
pub mod quantum;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
