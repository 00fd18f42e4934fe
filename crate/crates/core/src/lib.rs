//! Narrative arc extraction for serialized fiction, with relational and
//! vector long-term memory.

pub mod gateway;
pub mod memory;
pub mod model;
pub mod evaluation;
pub mod pipeline;
pub mod preprocess;

pub use model::*;
