//! Everything around the [`stylediff_core`] engine that touches the
//! outside world: image files, TrueType rasterization, pretrained
//! weight loading, config-driven experiments, and the CLI surface.

pub mod error;
pub mod experiments;
pub mod io;
pub mod raster;
pub mod weights;

pub use error::{Error, Result};
