//! HD-EMG signal chain: synthesis, preprocessing, motor-unit decomposition
//! and gesture classification.

pub mod decomp;
pub mod error;
pub mod gesture;
pub mod io;
pub mod metrics;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use signal::Recording;
