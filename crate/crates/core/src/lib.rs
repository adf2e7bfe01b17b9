pub mod clebsch;
pub mod cli;
pub mod error;
pub mod grid;
pub mod gstrand;
pub mod kernels;
pub mod liealg;
pub mod peakon;
pub mod verify;

pub use error::{Error, ErrorCategory, Result};
