//! Bitemporal change detection with a Siamese differential-attention
//! transformer, built from scratch: a reverse-mode autodiff tape, the neural
//! layers on top of it, the full encoder–fusion–decoder model, training and
//! evaluation loops, and a deterministic synthetic-data pipeline.
//!
//! Everything is generic over the scalar type: `f32` for training and
//! inference, `f64` for finite-difference gradient verification.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod glfr;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sea;
pub mod suite;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
