//! Preference-data engine: generator clients plus the correctness and
//! DropoutNTP pair-building pipelines.

pub mod dataengine;
pub mod error;
pub mod genclient;
pub mod scripted;

pub use error::{EngineError, Result};
