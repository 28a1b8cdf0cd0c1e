pub mod adam;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fields;
pub mod geom;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod losses;
pub mod model;
pub mod raster;
pub mod real;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use real::{Dual, Real, Scalar};
