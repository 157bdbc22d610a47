pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod numeric;
pub mod pipeline;
pub mod steering;
pub mod sweep;
pub mod transformer;
pub mod ufm;
pub mod verify;

pub use error::{Error, Result};

pub use nalgebra;
