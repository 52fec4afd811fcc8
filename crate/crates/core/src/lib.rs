pub mod checkpoint;
pub mod cmvae;
pub mod controller;
pub mod datagen;
pub mod ddpm;
pub mod error;
pub mod harness;
pub mod planner;
pub mod world;

pub use error::{Error, Result};
