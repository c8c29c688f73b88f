pub mod bounds;
pub mod cli;
pub mod config;
pub mod error;
pub mod geoflow;
pub mod grid;
pub mod fiberharm;
pub mod hypgeo;
pub mod inversion;
pub mod special;
pub mod surface;
pub mod xray;

pub use error::{Error, Result};
