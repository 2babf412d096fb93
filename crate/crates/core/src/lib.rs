//! Single-shot structured-light range sensing with a green-blue stripe
//! pattern: pattern generation, a synthetic projector-camera simulator,
//! color segmentation, stripe unwrapping and ray-plane triangulation.

pub mod config;
pub mod error;
pub mod io;
pub mod pattern;
pub mod pipeline;
pub mod reconstruct;
pub mod segmentation;
pub mod simulator;
pub mod unwrap;

pub use error::{Error, Result};
