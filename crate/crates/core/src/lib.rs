//! Neural acoustic field reconstruction for wide field-of-view convex probes.

pub mod encoding;
pub mod error;
pub mod field;
pub mod frustum;
pub mod io;
pub mod losses;
pub mod phantom;
pub mod pose;
pub mod probe;
pub mod render;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
