pub mod diffkernel;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod geometry;
pub mod global;
pub mod losses;
pub mod multichart;
pub mod networks;

pub use error::{Error, Result};
