pub mod error;
pub mod kernels;
pub mod likelihood;
pub mod operators;
pub mod optimize;
pub mod quadrature;
pub mod special;
pub mod spectral;
pub mod stable;
pub mod synth;

pub use error::{Error, Result};
