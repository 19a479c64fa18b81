pub mod beamform;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod roomsim;
pub mod spatial;
pub mod speech;

pub use error::{Error, Result};
