pub mod array_normal;
pub mod bayes;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mle;
pub mod tensor;

pub use error::{Error, Result};
