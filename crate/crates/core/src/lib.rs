pub mod bank;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod scoring;
pub mod synth;

pub use error::{Error, Result};
