//! Dual-path RGBD scene generator with rotation-consistency training, a switchable
//! RGBD/RGB discriminator, procedural toy rooms and evaluation metrics.

pub mod camera;
pub mod data;
pub mod discriminator;
pub mod generator;
pub mod nn;
pub mod error;
pub mod objectives;
pub mod toy;

pub use error::{Error, Result};
