pub mod autodiff;
pub mod encoding;
mod error;
pub mod geometry;
pub mod io;
pub mod mechanics;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
