//! Event-guided Retinex low-light image enhancement.
//!
//! Temporal events are turned into an illumination estimate, which then guides the
//! reflectance restoration of a low-light RGB frame.
pub mod bench;
pub mod error;
pub mod eval;
pub mod event_io;
pub mod events;
pub mod lldm;
pub mod losses;
pub mod model;
mod nn;
pub mod raster;
pub mod retinex;
pub mod rng;
pub mod t2i;
pub mod train;

pub use error::{Error, Result};
pub use nn::{batch_tensor, tensor_raster};
