pub mod analysis;
pub mod audio;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod permutation;
pub mod scores;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use permutation::Permutation;
