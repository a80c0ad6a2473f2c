pub mod analytics;
pub mod augmentation;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod model;
pub mod numerics;
pub mod play;
pub mod synthgen;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
