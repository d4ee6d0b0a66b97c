pub mod als;
pub mod channel;
pub mod cli;
pub mod cp;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod flops;
pub mod init;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
