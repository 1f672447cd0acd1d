pub mod body;
pub mod dataset;
pub mod deform;
pub mod error;
pub mod eval;
pub mod losses;
pub mod math;
pub mod mesh;
pub mod raster;
pub mod rcn;
pub mod splat;
pub mod train;
pub mod util;

pub use error::{Error, Result};
