pub mod autodiff;
pub mod benchmark;
pub mod checkpoint;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Result, ToyError};
