pub mod cli;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod noise;
pub mod schemes;
pub mod spatial;

pub use error::{Error, Result};
