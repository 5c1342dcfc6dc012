pub mod checkpoint;
pub mod data;
pub mod distance;
pub mod error;
pub mod gradcheck;
pub mod neural;
pub mod numerics;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
