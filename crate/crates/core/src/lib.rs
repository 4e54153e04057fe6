//! Blind image quality assessment workbench.

pub mod distort;
pub mod ensemble;
pub mod harness;
pub mod metrics;
pub mod mos;
pub mod net;
pub mod raster;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod toy;

pub use raster::Raster;
pub use rng::RngStream;
