pub mod data_io;
pub mod error;
pub mod losses;
pub mod network;
pub mod report;
pub mod sampler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
