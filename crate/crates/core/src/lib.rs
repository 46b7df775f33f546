pub mod butterfly;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod phase1d;
pub mod phase_md;
pub mod wrapped;

pub use error::{Error, Result};
