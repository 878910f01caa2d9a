pub mod checkpoint;
pub mod context_index;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod path_encoder;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod walk;

pub use error::{Error, Result};
