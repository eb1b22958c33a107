pub mod adam;
pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod image_io;
pub mod inference;
pub mod loss;
pub mod ops;
pub mod rng;
pub mod service;
pub mod strength;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod transformer;

pub use error::{CheckpointError, Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Shape4, Tensor4};
