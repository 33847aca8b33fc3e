pub mod cli;
pub mod error;
pub mod learn;
pub mod personas;
pub mod plot;
pub mod polylogue;
pub mod ranking;
pub mod steering;
pub mod store;
pub mod synth;
pub mod tuning;

pub use error::{PolylogueError, Result};
