pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod error;
pub mod fieldnet;
pub mod geometry;
pub mod inference;
pub mod metrics;
pub mod reconstruct;
pub mod training;

pub use error::{Error, Result};
