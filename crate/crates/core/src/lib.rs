//! Desk-scale video prediction with a latent diffusion model conditioned on a
//! multi-scale token pyramid of past frames.

pub mod backbone;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod engine;
pub mod error;
pub mod mape;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synthdata;
pub mod talc;
pub mod verify;

pub use error::{Error, Result};
