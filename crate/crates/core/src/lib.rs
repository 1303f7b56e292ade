pub mod autodiff;
pub mod checkpoint;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mrtt;
pub mod nn;
pub mod pipeline;
pub mod sampler;
pub mod schema;

pub use error::{Error, Result};
