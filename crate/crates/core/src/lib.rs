//! Hybrid-view attention network for binary classification of paired
//! transverse/sagittal 3D volumes.

mod error;

pub mod attention;
pub mod cam;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod fusion;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod pipeline;
pub mod planes;
pub mod train;

pub use error::{HvanError, Result};
