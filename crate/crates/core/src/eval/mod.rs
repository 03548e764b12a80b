//! Images, metrics, datasets and whole-image inference.

pub mod dataset;
pub mod image;
pub mod metrics;
pub mod pnm;
pub mod report;
pub mod synth;
pub mod tile;
