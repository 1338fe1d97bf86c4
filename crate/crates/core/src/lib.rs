//! Validation and conflation of road vectors against oblique aerial imagery.

pub mod conflation;
pub mod descriptors;
pub mod draw;
pub mod error;
pub mod evaluation;
pub mod geom;
pub mod pipeline;
pub mod projection;
pub mod scene;
pub mod svm;
pub mod synthgen;

pub use error::{Error, Result};
